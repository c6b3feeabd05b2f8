"""Command-line entry points: collect, train, run, sweep, compare,
qtable inspect."""
from __future__ import annotations

import argparse
import os
import sys
from importlib import resources
from typing import List, Optional

import numpy as np

from . import behavior, experiments, tuner as tuner_mod
from .errors import SDeePCError
from .experiments import ExperimentSpec, load_spec

OUTPUT_ROOT_ENV = "SDEEPC_OUT"


def resolve_spec(name_or_path: str) -> str:
    """Accept a filesystem path or the name of a bundled spec."""
    if os.path.exists(name_or_path):
        return name_or_path
    bundled = resources.files("sdeepc.specs").joinpath(name_or_path + ".spec")
    if bundled.is_file():
        return str(bundled)
    raise SDeePCError(
        f"spec {name_or_path!r} is neither a file nor a bundled spec "
        f"(bundled: {', '.join(sorted(list_bundled()))})"
    )


def list_bundled() -> List[str]:
    return [
        entry.name[: -len(".spec")]
        for entry in resources.files("sdeepc.specs").iterdir()
        if entry.name.endswith(".spec")
    ]


def _out_dir(args, spec_name: str, verb: str) -> str:
    if args.out:
        return args.out
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    return os.path.join(root, f"{spec_name}_{verb}")


def _load(args) -> ExperimentSpec:
    return load_spec(resolve_spec(args.spec))


def cmd_collect(args) -> int:
    spec = _load(args)
    out = _out_dir(args, spec.name, "collect")
    os.makedirs(out, exist_ok=True)
    traj, blocks = experiments.collect(spec, seed=args.seed)
    traj.to_csv(os.path.join(out, "collection.csv"))
    behavior.export_blocks(blocks, os.path.join(out, "blocks"), source=traj)
    w = np.hstack([traj.inputs, traj.outputs])
    pe = behavior.persistency_check(
        w, spec.t_ini + spec.t_f, spec.plant.m, spec.plant.n_state
    )
    print(
        f"collected {traj.length} samples -> {out} "
        f"(persistency: rank {pe.rank}/{pe.required}, "
        f"{'pass' if pe.passed else 'FAIL'})"
    )
    return 0


def cmd_train(args) -> int:
    spec = _load(args)
    out = _out_dir(args, spec.name, "train")
    os.makedirs(out, exist_ok=True)
    seed = spec.seed if args.seed is None else args.seed
    _, blocks = experiments.collect(spec, seed=seed)
    _, train_seed, _ = experiments._streams(seed)
    result = tuner_mod.train_offline(
        spec.plant,
        blocks,
        spec.tuner,
        episodes=spec.episodes,
        noise_schedule=spec.noise_schedule,
        seed=train_seed,
        reference=spec.reference,
        x0=spec.x0,
        controller_config=spec.controller_config(),
    )
    result.q.save(os.path.join(out, "qtable.bin"), result.config)
    with open(os.path.join(out, "training_curve.csv"), "w") as fh:
        fh.write("episode,mean_j\n")
        for i, v in enumerate(result.episode_mean_j):
            fh.write(f"{i},{format(v, '.17g')}\n")
    print(f"trained Q-table {result.q.dims} -> {out}")
    return 0


def cmd_run(args) -> int:
    spec = _load(args)
    out = _out_dir(args, spec.name, "run")
    summary = experiments.run(spec, out, seed=args.seed)
    if "rows" not in summary:
        print(
            f"{spec.name}: mean J = {summary['mean_j']}, "
            f"steady-state J = {summary['steady_state_mean_j']} -> {out}"
        )
    return 0


def cmd_sweep(args) -> int:
    spec = _load(args)
    out = _out_dir(args, spec.name, "sweep")
    result = experiments.sweep(spec, out, seed=args.seed, jobs=args.jobs)
    print(
        f"{spec.name}: swept {result['sweep_param']} over "
        f"{len(result['rows'])} values -> {out}"
    )
    return 0


def cmd_compare(args) -> int:
    specs = [load_spec(resolve_spec(s)) for s in args.spec]
    out = _out_dir(args, "_vs_".join(s.name for s in specs), "compare")
    summaries = experiments.compare(specs, out, seed=args.seed)
    for label, s in summaries.items():
        print(
            f"{label}: steady-state J = {s['steady_state_mean_j']}, "
            f"peak J = {s['peak_j']}, convergence step = {s['convergence_step']}"
        )
    print(f"-> {out}")
    return 0


def cmd_qtable_inspect(args) -> int:
    q, config = tuner_mod.QTable.load(args.path)
    nonzero = int(np.count_nonzero(q.values))
    greedy = np.argmax(q.values, axis=2)
    values, counts = np.unique(greedy, return_counts=True)
    top = sorted(zip(counts, values), reverse=True)[:5]
    print(f"dims: {q.values.shape}")
    print(f"nonzero cells: {nonzero} / {q.values.size}")
    print(f"value range: [{q.values.min():.6g}, {q.values.max():.6g}]")
    print("most frequent greedy actions (lambda_g: state count):")
    for count, action in top:
        print(f"  {config.action_grid[int(action)]:.6g}: {int(count)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdeepc",
        description=(
            "Data-enabled predictive control with SARSA-tuned regularization: "
            "experiment harness"
        ),
    )

    def add_common(p, spec_required=True, multi_spec=False):
        if multi_spec:
            p.add_argument(
                "--spec",
                action="append",
                required=True,
                help="spec file or bundled spec name (repeatable)",
            )
        else:
            p.add_argument(
                "--spec",
                required=spec_required,
                help="spec file or bundled spec name",
            )
        p.add_argument("--seed", type=int, default=None, help="override spec seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel jobs (sweep)")

    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("collect", cmd_collect),
        ("train", cmd_train),
        ("run", cmd_run),
        ("sweep", cmd_sweep),
    ):
        p = sub.add_parser(name)
        add_common(p)
        p.set_defaults(func=fn)
    p = sub.add_parser("compare")
    add_common(p, multi_spec=True)
    p.set_defaults(func=cmd_compare)

    qt = sub.add_parser("qtable")
    qt_sub = qt.add_subparsers(dest="qtable_command", required=True)
    ins = qt_sub.add_parser("inspect")
    ins.add_argument("path", help="path to qtable.bin")
    ins.set_defaults(func=cmd_qtable_inspect)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SDeePCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
