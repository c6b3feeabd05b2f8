"""Configuration-driven experiment harness.

Parses sectioned key-value spec files, wires collection, training and
evaluation together with derived RNG streams, and writes the CSV/JSON
artifacts every figure-class result is read from.
"""
from __future__ import annotations

import configparser
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import behavior, controller as ctrl, plant as plant_mod, tuner as tuner_mod
from .behavior import DEFAULT_RANK_TOL, HankelBlocks, persistency_check
from .controller import ControllerConfig, StepLog
from .deepc import SolverSettings
from .errors import SpecError
from .plant import NoiseModel, PlantModel, Trajectory
from .tuner import QTable, TunerConfig

SWEEP_PARAMS = ("lambda_g", "n", "epsilon", "alpha", "gamma")
MODES = ("fixed_lambda", "sdeepc", "sweep")

# every known spec key, by section; unknown keys are rejected by name
_KNOWN_KEYS = {
    "scenario": {"name"},
    "plant": {"benchmark", "inertia", "spring", "friction", "dt", "x0"},
    "collection": {"length", "input_kind", "input_mean", "input_variance", "rank_tol"},
    "noise": {"schedule"},
    "deepc": {
        "t_ini",
        "t_f",
        "q_weight",
        "r_weight",
        "lambda_y",
        "input_low",
        "input_high",
        "max_iter",
    },
    "tuner": {
        "alpha",
        "gamma",
        "epsilon",
        "a",
        "b",
        "window_n",
        "action_grid",
        "energy_bins",
        "rmse_bins",
        "train_steps_per_action",
        "freeze_online",
        "epsilon_online",
    },
    "mode": {"kind", "lambda_g", "sweep_param", "sweep_grid"},
    "run": {"steps", "episodes", "seed", "reference"},
}


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    plant: PlantModel
    x0: Optional[np.ndarray]
    collection_length: int
    rank_tol: float
    input_noise: NoiseModel
    noise_schedule: Tuple[Tuple[int, NoiseModel], ...]
    t_ini: int
    t_f: int
    q_weight: float
    r_weight: float
    lambda_y: float
    input_bounds: Optional[Tuple[np.ndarray, np.ndarray]]
    tuner: TunerConfig
    mode: str
    fixed_lambda: Optional[float]
    sweep_param: Optional[str]
    sweep_grid: Optional[Tuple[float, ...]]
    steps: int
    episodes: int
    seed: int
    reference: np.ndarray
    epsilon_online: Optional[float]
    solver_max_iter: Optional[int] = None

    def controller_config(self) -> ControllerConfig:
        solver = SolverSettings()
        if self.solver_max_iter is not None:
            solver = SolverSettings(max_iter=self.solver_max_iter)
        return ControllerConfig(
            t_ini=self.t_ini,
            t_f=self.t_f,
            q_weight=self.q_weight,
            r_weight=self.r_weight,
            lambda_y=self.lambda_y,
            input_bounds=self.input_bounds,
            window_n=self.tuner.window_n,
            solver=solver,
        )


def _parse_floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split()])


def _parse_grid(text: str) -> Tuple[float, ...]:
    """`start step stop` triple, endpoints inclusive to half-step slack."""
    parts = [float(v) for v in text.split()]
    if len(parts) != 3:
        raise SpecError(f"grid must be 'start step stop', got {text!r}")
    start, step, stop = parts
    if step <= 0 or stop < start:
        raise SpecError(f"invalid grid 'start step stop': {text!r}")
    n = int(round((stop - start) / step)) + 1
    return tuple(start + i * step for i in range(n))


def _parse_schedule(text: str) -> Tuple[Tuple[int, NoiseModel], ...]:
    """`start kind mean variance; start kind mean variance; ...`"""
    entries = []
    for chunk in text.split(";"):
        parts = chunk.split()
        if len(parts) == 2 and parts[1] == "none":
            entries.append((int(parts[0]), NoiseModel("none")))
            continue
        if len(parts) != 4:
            raise SpecError(
                f"noise schedule entry must be 'start kind mean variance', got {chunk!r}"
            )
        start, kind, mean, var = parts
        entries.append((int(start), NoiseModel(kind, float(mean), float(var))))
    starts = [s for s, _ in entries]
    if starts != sorted(set(starts)) or (entries and starts[0] != 0):
        raise SpecError("noise schedule start steps must be strictly increasing from 0")
    return tuple(entries)


def load_spec(path: str) -> ExperimentSpec:
    """Parse and validate an experiment spec file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    if not os.path.exists(path):
        raise SpecError(f"spec file not found: {path}")
    try:
        with open(path) as fh:
            parser.read_file(fh, source=path)
    except configparser.Error as exc:
        raise SpecError(f"spec parse failure: {exc}") from exc

    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise SpecError(f"unknown section [{section}] in {path}")
        for key in parser[section]:
            if key not in _KNOWN_KEYS[section]:
                raise SpecError(f"unknown key {key!r} in section [{section}] of {path}")

    def get(section, key, default=None, cast=str):
        if parser.has_option(section, key):
            raw = parser.get(section, key).strip()
            if raw == "":
                return default
            try:
                return cast(raw)
            except (ValueError, SpecError) as exc:
                raise SpecError(
                    f"bad value for {key!r} in [{section}]: {exc}"
                ) from exc
        return default

    name = get("scenario", "name")
    if not name:
        raise SpecError("missing [scenario] name")

    benchmark = get("plant", "benchmark")
    if not benchmark:
        raise SpecError("missing [plant] benchmark")
    overrides = {}
    if benchmark == "triple_mass_spring":
        for key in ("inertia", "spring", "friction", "dt"):
            val = get("plant", key, cast=float)
            if val is not None:
                overrides[key] = val
    plant = plant_mod.make_benchmark(benchmark, **overrides)
    x0 = get("plant", "x0", cast=_parse_floats)
    if x0 is not None and x0.shape[0] != plant.n_state:
        raise SpecError(
            f"x0 has {x0.shape[0]} entries, plant state dimension is {plant.n_state}"
        )

    collection_length = get("collection", "length", 600, int)
    rank_tol = get("collection", "rank_tol", DEFAULT_RANK_TOL, float)
    input_noise = NoiseModel(
        get("collection", "input_kind", "gaussian"),
        get("collection", "input_mean", 0.0, float),
        get("collection", "input_variance", 1e-3, float),
    )
    schedule_text = get("noise", "schedule")
    if not schedule_text:
        raise SpecError("missing [noise] schedule")
    noise_schedule = _parse_schedule(schedule_text)

    t_ini = get("deepc", "t_ini", 4, int)
    t_f = get("deepc", "t_f", 12, int)
    q_weight = get("deepc", "q_weight", 100.0, float)
    r_weight = get("deepc", "r_weight", 1.0, float)
    lambda_y = get("deepc", "lambda_y", 1e5, float)
    solver_max_iter = get("deepc", "max_iter", cast=int)
    lo = get("deepc", "input_low", cast=_parse_floats)
    hi = get("deepc", "input_high", cast=_parse_floats)
    if (lo is None) != (hi is None):
        raise SpecError("input_low and input_high must be given together")
    bounds = None
    if lo is not None:
        if lo.shape[0] != plant.m or hi.shape[0] != plant.m:
            raise SpecError("input bounds must list one value per input channel")
        bounds = (lo, hi)

    grid_text = get("tuner", "action_grid")
    tuner_cfg = TunerConfig(
        alpha=get("tuner", "alpha", 0.53, float),
        gamma=get("tuner", "gamma", 0.86, float),
        epsilon=get("tuner", "epsilon", 0.35, float),
        a_coeff=get("tuner", "a", 1.0, float),
        b_coeff=get("tuner", "b", 1.0, float),
        window_n=get("tuner", "window_n", 40, int),
        action_grid=_parse_grid(grid_text) if grid_text else TunerConfig().action_grid,
        energy_bins=get("tuner", "energy_bins", 101, int),
        rmse_bins=get("tuner", "rmse_bins", 101, int),
        train_steps_per_action=get("tuner", "train_steps_per_action", 1000, int),
        freeze_online=get("tuner", "freeze_online", "false") in ("true", "1", "yes"),
    )
    epsilon_online = get("tuner", "epsilon_online", cast=float)

    mode = get("mode", "kind")
    if mode not in MODES:
        raise SpecError(f"[mode] kind must be one of {MODES}, got {mode!r}")
    fixed_lambda = get("mode", "lambda_g", cast=float)
    sweep_param = get("mode", "sweep_param")
    sweep_grid = get("mode", "sweep_grid", cast=_parse_grid)
    if mode == "fixed_lambda" and fixed_lambda is None:
        raise SpecError("mode fixed_lambda requires [mode] lambda_g")
    if mode == "sweep":
        if sweep_param not in SWEEP_PARAMS:
            raise SpecError(
                f"unknown sweep parameter {sweep_param!r}; supported: {SWEEP_PARAMS}"
            )
        if not sweep_grid:
            raise SpecError("mode sweep requires [mode] sweep_grid")

    reference = get("run", "reference", cast=_parse_floats)
    if reference is None:
        reference = np.zeros(plant.p)
    elif reference.shape[0] != plant.p:
        raise SpecError(
            f"reference has {reference.shape[0]} entries, plant has {plant.p} outputs"
        )

    return ExperimentSpec(
        name=name,
        plant=plant,
        x0=x0,
        collection_length=collection_length,
        rank_tol=rank_tol,
        input_noise=input_noise,
        noise_schedule=noise_schedule,
        t_ini=t_ini,
        t_f=t_f,
        q_weight=q_weight,
        r_weight=r_weight,
        lambda_y=lambda_y,
        input_bounds=bounds,
        tuner=tuner_cfg,
        mode=mode,
        fixed_lambda=fixed_lambda,
        sweep_param=sweep_param,
        sweep_grid=sweep_grid,
        steps=get("run", "steps", 600, int),
        episodes=get("run", "episodes", 1, int),
        seed=get("run", "seed", 0, int),
        reference=reference,
        epsilon_online=epsilon_online,
        solver_max_iter=solver_max_iter,
    )


def _streams(seed: int) -> Tuple[int, int, int]:
    """Derived RNG seeds for the collect/train/eval phases."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(int(c.generate_state(1)[0]) for c in children)  # type: ignore[return-value]


def collect(spec: ExperimentSpec, seed=None) -> Tuple[Trajectory, HankelBlocks]:
    """Data-collection phase: excitation run plus Hankel partition."""
    collect_seed, _, _ = _streams(spec.seed if seed is None else seed)
    traj = plant_mod.excite(
        spec.plant,
        spec.collection_length,
        spec.input_noise,
        spec.noise_schedule[0][1],
        seed=np.random.default_rng(collect_seed),
        t_ini=spec.t_ini,
        t_f=spec.t_f,
    )
    blocks = behavior.partition(traj.inputs, traj.outputs, spec.t_ini, spec.t_f)
    return traj, blocks


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_step_log(log: StepLog, path: str, m: int, p: int, with_reward: bool) -> None:
    cols = (
        ["k", "lambda_g", "J", "M", "energy", "status", "iterations"]
        + [f"u{i+1}" for i in range(m)]
        + [f"y{i+1}" for i in range(p)]
        + [f"ref{i+1}" for i in range(p)]
    )
    if with_reward:
        cols.append("reward")
    lines = [",".join(cols)]
    for k in range(len(log)):
        row = [
            str(k),
            _fmt(log.lambda_g[k]),
            _fmt(log.j[k]),
            _fmt(log.m_metric[k]),
            _fmt(log.energy[k]),
            log.status[k],
            str(log.iterations[k]),
        ]
        row += [_fmt(v) for v in log.inputs[k]]
        row += [_fmt(v) for v in log.outputs[k]]
        row += [_fmt(v) for v in log.references[k]]
        if with_reward:
            row.append(_fmt(log.rewards[k]))
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def convergence_step(j_values: Sequence[Optional[float]]) -> Optional[int]:
    """First step after which windowed J stays within +-10% of the mean of
    the final min(1000, samples//4) values (tail shortened from the
    1000-step definition for desk-scale runs)."""
    defined = [(k, v) for k, v in enumerate(j_values) if v is not None]
    if len(defined) < 4:
        return None
    vals = np.array([v for _, v in defined])
    tail = min(1000, max(1, len(vals) // 4))
    target = float(np.mean(vals[-tail:]))
    band = 0.1 * abs(target)
    inside = np.abs(vals - target) <= band
    # last index where we were outside the band
    outside = np.nonzero(~inside)[0]
    if outside.size == 0:
        return defined[0][0]
    if outside[-1] == len(vals) - 1:
        return None  # never settles
    return defined[outside[-1] + 1][0]


def summarize(log: StepLog) -> Dict:
    j = log.defined_j()
    tail = min(1000, max(1, j.size // 4)) if j.size else 0
    summary = {
        "steps": len(log),
        "j_samples": int(j.size),
        "mean_j": float(np.mean(j)) if j.size else None,
        "max_j": float(np.max(j)) if j.size else None,
        "steady_state_mean_j": float(np.mean(j[-tail:])) if j.size else None,
        "steady_state_band": (
            [float(np.min(j[-tail:])), float(np.max(j[-tail:]))] if j.size else None
        ),
        "convergence_step": convergence_step(log.j),
        "solver_failures": int(sum(1 for s in log.status if s not in ("converged",))),
    }
    return summary


def run(spec: ExperimentSpec, out_dir: str, seed: Optional[int] = None) -> Dict:
    """Execute collection -> (training) -> evaluation, writing artifacts.

    Returns the summary dict.  Identical spec and seed produce
    byte-identical artifacts.
    """
    seed = spec.seed if seed is None else seed
    os.makedirs(out_dir, exist_ok=True)
    if spec.mode == "sweep":
        return sweep(spec, out_dir, seed=seed)
    traj, blocks = collect(spec, seed=seed)
    traj.to_csv(os.path.join(out_dir, "collection.csv"))
    behavior.export_blocks(blocks, os.path.join(out_dir, "blocks"), source=traj)
    depth = spec.t_ini + spec.t_f
    w = np.hstack([traj.inputs, traj.outputs])
    pe = persistency_check(
        w, depth, spec.plant.m, spec.plant.n_state, tol=spec.rank_tol
    )
    if not pe.passed:
        warnings.warn(
            f"collection data failed the persistency-of-excitation rank check "
            f"(rank {pe.rank}, required {pe.required}); continuing anyway",
            stacklevel=2,
        )
    _, train_seed, eval_seed = _streams(seed)

    cc = spec.controller_config()
    if spec.mode == "fixed_lambda":
        log = ctrl.run_fixed_lambda(
            spec.plant,
            blocks,
            cc,
            spec.fixed_lambda,
            spec.steps,
            spec.noise_schedule,
            seed=np.random.default_rng(eval_seed),
            reference=spec.reference,
            x0=spec.x0,
            a_coeff=spec.tuner.a_coeff,
            b_coeff=spec.tuner.b_coeff,
        )
        with_reward = False
        tuner_cfg = None
    else:  # sdeepc
        result = tuner_mod.train_offline(
            spec.plant,
            blocks,
            spec.tuner,
            episodes=spec.episodes,
            noise_schedule=spec.noise_schedule,
            seed=train_seed,
            reference=spec.reference,
            x0=spec.x0,
            controller_config=cc,
        )
        tuner_cfg = result.config
        result.q.save(os.path.join(out_dir, "qtable.bin"), tuner_cfg)
        curve_path = os.path.join(out_dir, "training_curve.csv")
        with open(curve_path, "w") as fh:
            fh.write("episode,mean_j\n")
            for i, v in enumerate(result.episode_mean_j):
                fh.write(f"{i},{_fmt(v)}\n")
        log = tuner_mod.run_online(
            spec.plant,
            blocks,
            result.q,
            tuner_cfg,
            spec.steps,
            seed=eval_seed,
            noise_schedule=spec.noise_schedule,
            reference=spec.reference,
            x0=spec.x0,
            controller_config=cc,
            epsilon=spec.epsilon_online,
        )
        with_reward = True

    write_step_log(
        log, os.path.join(out_dir, "steps.csv"), spec.plant.m, spec.plant.p, with_reward
    )
    summary = summarize(log)
    summary["scenario"] = spec.name
    summary["mode"] = spec.mode
    summary["seed"] = seed
    summary["persistency"] = {
        "passed": pe.passed,
        "rank": pe.rank,
        "required": pe.required,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_schema(out_dir)
    return summary


def _windowed_metrics_for_n(
    inputs: np.ndarray, outputs: np.ndarray, refs: np.ndarray, n: int,
    a_coeff: float, b_coeff: float,
) -> Tuple[float, float, float]:
    """Mean (J, M, energy) of a logged run re-evaluated at window length n."""
    steps = inputs.shape[0]
    if steps < n:
        raise ValueError(f"run of {steps} steps cannot fill a window of {n}")
    err2 = np.sum((refs - outputs) ** 2, axis=1)
    u2 = np.sum(inputs**2, axis=1)
    cum_err = np.concatenate([[0.0], np.cumsum(err2)])
    cum_u = np.concatenate([[0.0], np.cumsum(u2)])
    win_err = cum_err[n:] - cum_err[:-n]
    win_u = cum_u[n:] - cum_u[:-n]
    m_vals = np.sqrt(win_err / n)
    e_vals = np.sqrt(win_u)
    j_vals = np.abs(a_coeff * e_vals - b_coeff * m_vals)
    return float(np.mean(j_vals)), float(np.mean(m_vals)), float(np.mean(e_vals))


def _calibrated_tuner_config(spec: ExperimentSpec, seed: int) -> TunerConfig:
    """Bin-edge calibration shared by every tuner-parameter sweep point
    (it depends only on the spec and seed, not on the swept value)."""
    traj, blocks = collect(spec, seed=seed)
    _, train_seed, _ = _streams(seed)
    return tuner_mod.calibrate_edges(
        spec.plant,
        blocks,
        spec.tuner,
        spec.noise_schedule,
        np.random.default_rng(train_seed),
        steps=min(
            spec.tuner.train_steps_per_action,
            max(spec.steps, spec.tuner.window_n + 1),
        ),
        reference=spec.reference,
        x0=spec.x0,
        controller_config=spec.controller_config(),
    )


def _sweep_point(
    spec: ExperimentSpec,
    value: float,
    seed: int,
    tuner_cfg: Optional[TunerConfig] = None,
) -> Tuple[float, float, float, float]:
    """One sweep grid point -> (value, mean J, mean M, mean energy)."""
    _, blocks = collect(spec, seed=seed)
    _, _, eval_seed = _streams(seed)
    cc = spec.controller_config()
    param = spec.sweep_param
    if param == "lambda_g":
        rows = ctrl.lambda_sweep(
            blocks,
            spec.plant,
            cc,
            [value],
            spec.steps,
            spec.noise_schedule,
            seed=eval_seed,
            reference=spec.reference,
            x0=spec.x0,
            a_coeff=spec.tuner.a_coeff,
            b_coeff=spec.tuner.b_coeff,
        )
        _, mj, mm, me = rows[0]
        return (value, mj, mm, me)
    if param == "n":
        return _n_sweep_rows(spec, [value], seed)[0]
    # epsilon / alpha / gamma: adaptive run learning online from a zero table
    if tuner_cfg is None:
        tuner_cfg = _calibrated_tuner_config(spec, seed)
    key = {"epsilon": "epsilon", "alpha": "alpha", "gamma": "gamma"}[param]
    tuner_cfg = replace(tuner_cfg, **{key: float(value)})
    q = QTable.zeros(tuner_cfg.table_dims())
    log = tuner_mod.run_online(
        spec.plant,
        blocks,
        q,
        tuner_cfg,
        spec.steps,
        seed=eval_seed,
        noise_schedule=spec.noise_schedule,
        reference=spec.reference,
        x0=spec.x0,
        controller_config=cc,
    )
    j = log.defined_j()
    m_vals = np.array([v for v in log.m_metric if v is not None])
    e_vals = np.array([v for v in log.energy if v is not None])
    return (value, float(np.mean(j)), float(np.mean(m_vals)), float(np.mean(e_vals)))


def _n_sweep_rows(
    spec: ExperimentSpec, grid: Sequence[float], seed: int
) -> List[Tuple[float, float, float, float]]:
    """Window-length sweep: every grid point re-evaluates the same logged
    run, so the closed loop executes once."""
    _, blocks = collect(spec, seed=seed)
    _, _, eval_seed = _streams(seed)
    base_lambda = spec.fixed_lambda if spec.fixed_lambda is not None else 0.03
    log = ctrl.run_fixed_lambda(
        spec.plant,
        blocks,
        spec.controller_config(),
        base_lambda,
        spec.steps,
        spec.noise_schedule,
        seed=np.random.default_rng(eval_seed),
        reference=spec.reference,
        x0=spec.x0,
    )
    inputs = np.array(log.inputs)
    outputs = np.array(log.outputs)
    refs = np.array(log.references)
    rows = []
    for value in grid:
        mj, mm, me = _windowed_metrics_for_n(
            inputs, outputs, refs, int(round(value)),
            spec.tuner.a_coeff, spec.tuner.b_coeff,
        )
        rows.append((value, mj, mm, me))
    return rows


def sweep(
    spec: ExperimentSpec,
    out_dir: str,
    seed: Optional[int] = None,
    jobs: int = 1,
) -> Dict:
    """Run the spec's sweep grid, one closed-loop evaluation per value."""
    if spec.mode != "sweep":
        raise SpecError("sweep() requires a spec with mode kind = sweep")
    seed = spec.seed if seed is None else seed
    os.makedirs(out_dir, exist_ok=True)
    grid = list(spec.sweep_grid)
    tuner_cfg = (
        _calibrated_tuner_config(spec, seed)
        if spec.sweep_param in ("epsilon", "alpha", "gamma")
        else None
    )
    if spec.sweep_param == "n":
        rows = _n_sweep_rows(spec, grid, seed)
    elif jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(
                pool.map(
                    _sweep_point,
                    [spec] * len(grid),
                    grid,
                    [seed] * len(grid),
                    [tuner_cfg] * len(grid),
                )
            )
    else:
        rows = [_sweep_point(spec, v, seed, tuner_cfg) for v in grid]
    path = os.path.join(out_dir, "sweep.csv")
    with open(path, "w") as fh:
        fh.write(f"{spec.sweep_param},mean_J,mean_M,mean_energy\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    write_schema(out_dir)
    return {
        "scenario": spec.name,
        "sweep_param": spec.sweep_param,
        "rows": rows,
    }


def compare(specs: Sequence[ExperimentSpec], out_dir: str, seed: Optional[int] = None) -> Dict:
    """Paired comparison of specs sharing plant, steps, seed and noise."""
    if not specs:
        raise ValueError("compare needs at least one spec")
    base = specs[0]
    for other in specs[1:]:
        same = (
            np.array_equal(base.plant.a, other.plant.a)
            and np.array_equal(base.plant.b, other.plant.b)
            and base.steps == other.steps
            and base.seed == other.seed
            and base.noise_schedule == other.noise_schedule
        )
        if not same:
            raise SpecError(
                "compare requires specs agreeing on plant, steps, seed and noise schedule"
            )
    os.makedirs(out_dir, exist_ok=True)
    summaries = {}
    logs: List[Tuple[str, List[Optional[float]]]] = []
    names = []
    for i, spec in enumerate(specs):
        label = spec.name if spec.name not in names else f"{spec.name}_{i}"
        names.append(label)
        sub = os.path.join(out_dir, label)
        summary = run(spec, sub, seed=seed)
        summaries[label] = {
            "convergence_step": summary["convergence_step"],
            "peak_j": summary["max_j"],
            "steady_state_band": summary["steady_state_band"],
            "steady_state_mean_j": summary["steady_state_mean_j"],
        }
        j_col = _read_j_column(os.path.join(sub, "steps.csv"))
        logs.append((label, j_col))
    steps = base.steps
    with open(os.path.join(out_dir, "compare.csv"), "w") as fh:
        fh.write("k," + ",".join(f"J_{label}" for label, _ in logs) + "\n")
        for k in range(steps):
            row = [str(k)] + [
                _fmt(col[k]) if k < len(col) else "" for _, col in logs
            ]
            fh.write(",".join(row) + "\n")
    with open(os.path.join(out_dir, "compare_summary.json"), "w") as fh:
        json.dump(summaries, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summaries


def _read_j_column(path: str) -> List[Optional[float]]:
    import csv as _csv

    with open(path) as fh:
        reader = _csv.DictReader(fh)
        return [float(r["J"]) if r["J"] else None for r in reader]


SCHEMA_TEXT = """\
# Artifact schema

All numeric values use up to 17 significant digits. Empty cells mean the
quantity was undefined at that step (metric window still filling).

## collection.csv
Data-collection trajectory. Columns: `t` step index; `u1..um` applied
inputs; `y1..yp` noisy measured outputs.

## blocks/{Up,Uf,Yp,Yf}.csv, blocks/blocks.json
Past/future Hankel blocks (one matrix per file, comma-separated rows) and
a sidecar with `t_ini`, `t_f`, `m`, `p`, `n_cols` and the SHA-256 of the
source trajectory CSV.

## steps.csv
Per-step closed-loop log. Columns: `k` step; `lambda_g` regularization
weight used at that step; `J` windowed objective |a*energy - b*M|;
`M` windowed RMS tracking error; `energy` windowed input energy
sqrt(sum u'u); `status` solver status (converged/max_iter/infeasible);
`iterations` solver iterations; `u1..um` applied input; `y1..yp`
measurement; `ref1..refp` current reference. Adaptive runs append
`reward` (the tuner's per-step reward, -J on raw values).

## summary.json
`mean_j` arithmetic mean of the defined J column entries; `j_samples`
how many entries that is; `max_j` peak J; `steady_state_mean_j` and
`steady_state_band` mean and [min, max] of the final tail
(min(1000, samples/4) values); `convergence_step` first step after which
J stays within +-10% of the tail mean (null if it never settles);
`solver_failures` steps whose solve did not converge; `persistency`
the fundamental-lemma rank check on the collection data.

## training_curve.csv
`episode`, `mean_j`: mean objective per offline training episode.

## qtable.bin / qtable.json
Action-value table: 16-byte header (magic `SDPC`, three little-endian
uint32 dims) then row-major float64 values; sidecar with bin edges, the
lambda_g action grid and the tuner configuration.

## sweep.csv
One row per grid value: the swept parameter, `mean_J`, `mean_M`,
`mean_energy` over the evaluation horizon.

## compare.csv / compare_summary.json
Step-aligned J columns (`J_<scenario>`) for each compared spec, plus
per-method `convergence_step`, `peak_j`, `steady_state_band`,
`steady_state_mean_j`.
"""


def write_schema(out_dir: str) -> None:
    with open(os.path.join(out_dir, "SCHEMA.md"), "w") as fh:
        fh.write(SCHEMA_TEXT)
