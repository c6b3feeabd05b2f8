"""Tabular SARSA tuner that adapts the DeePC regularization weight online.

State is the binned (input energy, windowed RMSE) pair, actions index a
fixed grid of lambda_g values, reward is the negated objective
-|a*energy - b*M| on the raw (undiscretized) metric values.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .behavior import HankelBlocks
from .controller import (
    ControllerConfig,
    DeePCController,
    StepLog,
    run_closed_loop,
)
from .plant import PlantModel

QTABLE_MAGIC = b"SDPC"


@dataclass(frozen=True)
class TunerConfig:
    alpha: float = 0.53
    gamma: float = 0.86
    epsilon: float = 0.35
    a_coeff: float = 1.0
    b_coeff: float = 1.0
    window_n: int = 40
    action_grid: Tuple[float, ...] = tuple(0.006 * i for i in range(1, 102))
    energy_edges: Optional[Tuple[float, ...]] = None
    rmse_edges: Optional[Tuple[float, ...]] = None
    energy_bins: int = 101
    rmse_bins: int = 101
    train_steps_per_action: int = 1000
    off_policy: bool = False  # max-backup instead of the realized next action
    freeze_online: bool = False  # stop table updates during the online stage

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError("gamma must lie in [0, 1]")
        if not (0.0 <= self.epsilon <= 1.0):
            raise ValueError("epsilon must lie in [0, 1]")
        if self.a_coeff < 0 or self.b_coeff < 0:
            raise ValueError("objective coefficients must be >= 0")
        grid = tuple(float(v) for v in self.action_grid)
        if not grid or any(v <= 0 for v in grid):
            raise ValueError("action grid values must be positive")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("action grid must be strictly increasing")
        object.__setattr__(self, "action_grid", grid)
        for name in ("energy_edges", "rmse_edges"):
            edges = getattr(self, name)
            if edges is not None:
                edges = tuple(float(v) for v in edges)
                if any(b <= a for a, b in zip(edges, edges[1:])):
                    raise ValueError(f"{name} must be strictly increasing")
                object.__setattr__(self, name, edges)

    @property
    def n_actions(self) -> int:
        return len(self.action_grid)

    def table_dims(self) -> Tuple[int, int, int]:
        b1 = len(self.energy_edges) + 1 if self.energy_edges else self.energy_bins
        b2 = len(self.rmse_edges) + 1 if self.rmse_edges else self.rmse_bins
        return (b1, b2, self.n_actions)


@dataclass(frozen=True)
class RLState:
    energy_raw: float
    rmse_raw: float
    energy_bin: int
    rmse_bin: int


@dataclass
class QTable:
    values: np.ndarray

    @classmethod
    def zeros(cls, dims: Tuple[int, int, int]) -> "QTable":
        return cls(values=np.zeros(dims))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.values.shape  # type: ignore[return-value]

    def save(self, path: str, config: TunerConfig) -> None:
        """Flat binary table plus a JSON sidecar with edges and config."""
        dims = self.values.shape
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4s3I", QTABLE_MAGIC, *dims))
            fh.write(self.values.astype("<f8").tobytes(order="C"))
        sidecar = {
            "dims": list(dims),
            "energy_edges": list(config.energy_edges or ()),
            "rmse_edges": list(config.rmse_edges or ()),
            "action_grid": list(config.action_grid),
            "alpha": config.alpha,
            "gamma": config.gamma,
            "epsilon": config.epsilon,
            "a_coeff": config.a_coeff,
            "b_coeff": config.b_coeff,
            "window_n": config.window_n,
            "off_policy": config.off_policy,
            "freeze_online": config.freeze_online,
            "train_steps_per_action": config.train_steps_per_action,
        }
        with open(sidecar_path(path), "w") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> Tuple["QTable", TunerConfig]:
        with open(sidecar_path(path)) as fh:
            meta = json.load(fh)
        with open(path, "rb") as fh:
            magic, b1, b2, na = struct.unpack("<4s3I", fh.read(16))
            if magic != QTABLE_MAGIC:
                raise ValueError(f"bad Q-table magic {magic!r}")
            data = np.frombuffer(fh.read(), dtype="<f8")
        dims = (b1, b2, na)
        if list(dims) != meta["dims"]:
            raise ValueError(
                f"Q-table dims {dims} do not match sidecar {tuple(meta['dims'])}"
            )
        if data.size != b1 * b2 * na:
            raise ValueError("Q-table payload size does not match header dims")
        config = TunerConfig(
            alpha=meta["alpha"],
            gamma=meta["gamma"],
            epsilon=meta["epsilon"],
            a_coeff=meta["a_coeff"],
            b_coeff=meta["b_coeff"],
            window_n=meta["window_n"],
            action_grid=tuple(meta["action_grid"]),
            energy_edges=tuple(meta["energy_edges"]) or None,
            rmse_edges=tuple(meta["rmse_edges"]) or None,
            off_policy=meta["off_policy"],
            freeze_online=meta["freeze_online"],
            train_steps_per_action=meta["train_steps_per_action"],
        )
        if dims != config.table_dims():
            raise ValueError("sidecar edges/grid do not reproduce the table dims")
        return cls(values=data.reshape(dims).copy()), config


def sidecar_path(path: str) -> str:
    base, _ = os.path.splitext(path)
    return base + ".json"


def _bin_index(value: float, edges: Sequence[float], n_bins: int) -> int:
    # count of edges strictly below the value, saturating into the end bins
    idx = int(np.searchsorted(np.asarray(edges), value, side="left"))
    return min(max(idx, 0), n_bins - 1)


def discretize(energy: float, rmse: float, config: TunerConfig) -> RLState:
    """Map raw (energy, M) onto table bin indices."""
    if not (np.isfinite(energy) and np.isfinite(rmse)):
        raise ValueError("metric values must be finite")
    if config.energy_edges is None or config.rmse_edges is None:
        raise ValueError("bin edges are unset; run calibration/training first")
    b1, b2, _ = config.table_dims()
    return RLState(
        energy_raw=float(energy),
        rmse_raw=float(rmse),
        energy_bin=_bin_index(energy, config.energy_edges, b1),
        rmse_bin=_bin_index(rmse, config.rmse_edges, b2),
    )


def reward(state: RLState, a_coeff: float, b_coeff: float) -> float:
    """Negated objective on the raw metric values."""
    return -abs(a_coeff * state.energy_raw - b_coeff * state.rmse_raw)


def sarsa_update(
    q: QTable,
    s_prev: RLState,
    a_taken: int,
    r: float,
    s_next: RLState,
    a_next: int,
    alpha: float,
    gamma: float,
    off_policy: bool = False,
) -> float:
    """Temporal-difference update of exactly one table cell; returns the
    new cell value.  With off_policy=True the backup uses the best next
    action instead of the realized one."""
    cell = (s_prev.energy_bin, s_prev.rmse_bin, a_taken)
    nxt = q.values[s_next.energy_bin, s_next.rmse_bin]
    backup = float(np.max(nxt)) if off_policy else float(nxt[a_next])
    old = q.values[cell]
    new = old + alpha * (r + gamma * backup - old)
    q.values[cell] = new
    return float(new)


def select_action(
    q: QTable, state: RLState, epsilon: float, rng: np.random.Generator
) -> int:
    """Epsilon-greedy over the action axis; greedy ties break to the
    lowest index."""
    n_actions = q.values.shape[2]
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(n_actions))
    row = q.values[state.energy_bin, state.rmse_bin]
    return int(np.argmax(row))


def calibrate_edges(
    plant: PlantModel,
    blocks: HankelBlocks,
    config: TunerConfig,
    noise_schedule,
    seed,
    steps: Optional[int] = None,
    reference=None,
    x0=None,
    controller_config: Optional[ControllerConfig] = None,
) -> TunerConfig:
    """Resolve unset bin edges from a calibration run.

    Runs the closed loop at the mid-grid lambda_g and spreads the bins
    uniformly over [0, 99th percentile] of the observed energy and M.
    """
    if config.energy_edges is not None and config.rmse_edges is not None:
        return config
    steps = steps or config.train_steps_per_action
    cc = controller_config or ControllerConfig(window_n=config.window_n)
    mid = config.action_grid[len(config.action_grid) // 2]
    controller = DeePCController(blocks, cc, mid)
    log = run_closed_loop(
        plant,
        controller,
        steps,
        noise_schedule,
        seed=seed,
        reference=reference,
        x0=x0,
        a_coeff=config.a_coeff,
        b_coeff=config.b_coeff,
    )
    energies = np.array([v for v in log.energy if v is not None])
    rmses = np.array([v for v in log.m_metric if v is not None])
    if energies.size == 0:
        raise ValueError("calibration run too short to fill the metric window")
    e_hi = float(np.percentile(energies, 99))
    m_hi = float(np.percentile(rmses, 99))
    e_hi = e_hi if e_hi > 0 else 1.0
    m_hi = m_hi if m_hi > 0 else 1.0
    e_edges = tuple(np.linspace(0.0, e_hi, config.energy_bins + 1)[1:-1])
    m_edges = tuple(np.linspace(0.0, m_hi, config.rmse_bins + 1)[1:-1])
    new = config
    if config.energy_edges is None:
        new = replace(new, energy_edges=e_edges)
    if config.rmse_edges is None:
        new = replace(new, rmse_edges=m_edges)
    return new


class _SarsaLoop:
    """Per-step hook wiring the SARSA machinery into run_closed_loop."""

    def __init__(
        self,
        q: QTable,
        config: TunerConfig,
        rng: np.random.Generator,
        learn: bool = True,
        epsilon: Optional[float] = None,
        fixed_action: Optional[int] = None,
    ):
        self.q = q
        self.config = config
        self.rng = rng
        self.learn = learn
        self.epsilon = config.epsilon if epsilon is None else epsilon
        self.fixed_action = fixed_action
        self._prev: Optional[Tuple[RLState, int]] = None
        self.rewards: List[Optional[float]] = []

    def __call__(self, k: int, controller: DeePCController) -> None:
        metrics = controller.window.metrics()
        if metrics is None:
            self.rewards.append(None)
            return
        m_val, e_val = metrics
        state = discretize(e_val, m_val, self.config)
        r = reward(state, self.config.a_coeff, self.config.b_coeff)
        if self.fixed_action is not None:
            action = self.fixed_action
        else:
            action = select_action(self.q, state, self.epsilon, self.rng)
        if self.learn and self._prev is not None:
            s_prev, a_prev = self._prev
            sarsa_update(
                self.q,
                s_prev,
                a_prev,
                r,
                state,
                action,
                self.config.alpha,
                self.config.gamma,
                off_policy=self.config.off_policy,
            )
        self._prev = (state, action)
        controller.lambda_g = self.config.action_grid[action]
        self.rewards.append(r)


@dataclass
class TrainingResult:
    q: QTable
    config: TunerConfig  # with resolved bin edges
    episode_mean_j: List[float]


def train_offline(
    plant: PlantModel,
    blocks: HankelBlocks,
    config: TunerConfig,
    episodes: int = 1,
    noise_schedule=None,
    seed: Optional[int] = 0,
    reference=None,
    x0=None,
    controller_config: Optional[ControllerConfig] = None,
) -> TrainingResult:
    """Offline training stage: sweep the action grid with SARSA updates.

    Each episode runs the closed loop once per lambda_g in the action
    grid, `train_steps_per_action` steps at that fixed action, updating
    the table along the realized transitions.  Zero episodes return the
    all-zero table.
    """
    if episodes < 0:
        raise ValueError("episodes must be >= 0")
    if noise_schedule is None or len(noise_schedule) == 0:
        raise ValueError("a noise schedule (possibly kind='none') is required")
    ss = np.random.SeedSequence(seed)
    calib_seed, *episode_seeds = ss.spawn(max(episodes, 0) + 1)
    config = calibrate_edges(
        plant,
        blocks,
        config,
        noise_schedule,
        np.random.default_rng(calib_seed),
        reference=reference,
        x0=x0,
        controller_config=controller_config,
    )
    q = QTable.zeros(config.table_dims())
    cc = controller_config or ControllerConfig(window_n=config.window_n)
    curve: List[float] = []
    for ep in range(episodes):
        ep_rng = np.random.default_rng(episode_seeds[ep])
        ep_j: List[float] = []
        for action in range(config.n_actions):
            loop = _SarsaLoop(q, config, ep_rng, fixed_action=action)
            controller = DeePCController(
                blocks, cc, config.action_grid[action]
            )
            log = run_closed_loop(
                plant,
                controller,
                config.train_steps_per_action,
                noise_schedule,
                seed=ep_rng,
                reference=reference,
                x0=x0,
                a_coeff=config.a_coeff,
                b_coeff=config.b_coeff,
                before_step=loop,
            )
            ep_j.extend(log.defined_j().tolist())
        curve.append(float(np.mean(ep_j)) if ep_j else float("nan"))
    return TrainingResult(q=q, config=config, episode_mean_j=curve)


def run_online(
    plant: PlantModel,
    blocks: HankelBlocks,
    q: QTable,
    config: TunerConfig,
    steps: int,
    seed: Optional[int] = 0,
    noise_schedule=None,
    reference=None,
    x0=None,
    controller_config: Optional[ControllerConfig] = None,
    epsilon: Optional[float] = None,
) -> StepLog:
    """Online stage: epsilon-greedy lambda_g selection each step, with
    continued SARSA updates unless the config freezes the table."""
    if q.values.shape != config.table_dims():
        raise ValueError(
            f"Q-table dims {q.values.shape} do not match config {config.table_dims()}"
        )
    if noise_schedule is None or len(noise_schedule) == 0:
        raise ValueError("a noise schedule (possibly kind='none') is required")
    rng = np.random.default_rng(seed)
    cc = controller_config or ControllerConfig(window_n=config.window_n)
    loop = _SarsaLoop(
        q, config, rng, learn=not config.freeze_online, epsilon=epsilon
    )
    start_action = len(config.action_grid) // 2
    controller = DeePCController(blocks, cc, config.action_grid[start_action])
    log = run_closed_loop(
        plant,
        controller,
        steps,
        noise_schedule,
        seed=rng,
        reference=reference,
        x0=x0,
        a_coeff=config.a_coeff,
        b_coeff=config.b_coeff,
        before_step=loop,
    )
    log.rewards = loop.rewards
    return log
