"""Hankel-matrix behavioral representation of trajectory data.

Builds depth-L Hankel matrices, checks the persistency-of-excitation rank
condition, partitions past/future blocks, and accumulates the windowed
tracking/energy metrics used by the tuner.
"""
from __future__ import annotations

import hashlib
import json
import os
from collections import deque
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import DimensionMismatch
from .plant import Trajectory

# Relative singular-value cutoff separating measurement-noise-level
# singular values from structural rank.  At the noise scales used in the
# bundled scenarios the noise floor sits near 6e-3 relative to sigma_max,
# while the smallest structural singular value stays above 1e-1, so 1e-2
# cleanly separates the two (and is equally valid for noiseless data).
DEFAULT_RANK_TOL = 1e-2


def hankel(w_d: np.ndarray, depth: int) -> np.ndarray:
    """Depth-L block Hankel matrix of a (T, q) signal.

    Block row i, column j holds w_d[i + j]; the result is (q*L, T-L+1).
    """
    w_d = np.atleast_2d(np.asarray(w_d, dtype=float))
    if w_d.shape[0] == 1 and w_d.shape[1] > 1:
        # accept a plain 1-D scalar signal
        w_d = w_d.T
    t_d, q = w_d.shape
    if depth < 1:
        raise ValueError("Hankel depth must be >= 1")
    if depth > t_d:
        raise ValueError(f"Hankel depth {depth} exceeds trajectory length {t_d}")
    n_cols = t_d - depth + 1
    return np.vstack([w_d[i : i + n_cols].T for i in range(depth)])


@dataclass(frozen=True)
class PersistencyResult:
    passed: bool
    rank: int
    required: int

    def __bool__(self) -> bool:
        return self.passed


def persistency_check(
    w_d: np.ndarray,
    depth: int,
    m: int,
    n_state: int,
    tol: float = DEFAULT_RANK_TOL,
) -> PersistencyResult:
    """Fundamental-lemma rank test: rank(H_L(w_d)) == m*L + n.

    Numerical rank counts singular values above tol * sigma_max.
    """
    h = hankel(w_d, depth)
    svals = np.linalg.svd(h, compute_uv=False)
    if svals.size == 0 or svals[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(svals > tol * svals[0]))
    required = m * depth + n_state
    return PersistencyResult(passed=(rank == required), rank=rank, required=required)


@dataclass(frozen=True)
class HankelBlocks:
    """Past/future partition U_p, U_f, Y_p, Y_f of one depth-(T_ini+T_f)
    Hankel pair built from input and output data."""

    up: np.ndarray
    uf: np.ndarray
    yp: np.ndarray
    yf: np.ndarray
    t_ini: int
    t_f: int

    def __post_init__(self):
        n = self.up.shape[1]
        for name, block in (("Uf", self.uf), ("Yp", self.yp), ("Yf", self.yf)):
            if block.shape[1] != n:
                raise DimensionMismatch(
                    f"{name} has {block.shape[1]} columns, expected {n}"
                )
        if self.up.shape[0] % self.t_ini or self.uf.shape[0] % self.t_f:
            raise DimensionMismatch("block row counts not divisible by window lengths")

    @property
    def m(self) -> int:
        return self.up.shape[0] // self.t_ini

    @property
    def p(self) -> int:
        return self.yp.shape[0] // self.t_ini

    @property
    def n_cols(self) -> int:
        return self.up.shape[1]


def partition(
    u_d: np.ndarray, y_d: np.ndarray, t_ini: int, t_f: int
) -> HankelBlocks:
    """Split the input/output Hankel matrices into past and future blocks."""
    u_d = np.atleast_2d(np.asarray(u_d, dtype=float))
    if u_d.shape[0] == 1 and u_d.shape[1] > 1:
        u_d = u_d.T
    y_d = np.atleast_2d(np.asarray(y_d, dtype=float))
    if y_d.shape[0] == 1 and y_d.shape[1] > 1:
        y_d = y_d.T
    if u_d.shape[0] != y_d.shape[0]:
        raise DimensionMismatch("input and output data lengths differ")
    depth = t_ini + t_f
    if u_d.shape[0] < depth:
        raise ValueError(
            f"trajectory length {u_d.shape[0]} is shorter than T_ini+T_f = {depth}"
        )
    m = u_d.shape[1]
    p = y_d.shape[1]
    hu = hankel(u_d, depth)
    hy = hankel(y_d, depth)
    return HankelBlocks(
        up=hu[: m * t_ini],
        uf=hu[m * t_ini :],
        yp=hy[: p * t_ini],
        yf=hy[p * t_ini :],
        t_ini=t_ini,
        t_f=t_f,
    )


def blocks_from_trajectory(traj: Trajectory, t_ini: int, t_f: int) -> HankelBlocks:
    return partition(traj.inputs, traj.outputs, t_ini, t_f)


def low_rank_denoise(h: np.ndarray, target_rank: int) -> np.ndarray:
    """Best Frobenius-norm approximation of h with the given rank
    (truncated SVD). This relaxes the Hankel-structured inner problem;
    the result is generally not Hankel-structured."""
    h = np.asarray(h, dtype=float)
    if target_rank <= 0:
        raise ValueError("target_rank must be positive")
    if target_rank > min(h.shape):
        raise ValueError(
            f"target_rank {target_rank} exceeds min(rows, cols) = {min(h.shape)}"
        )
    u, s, vt = np.linalg.svd(h, full_matrices=False)
    s[target_rank:] = 0.0
    return (u * s) @ vt


class MetricWindow:
    """Sliding n-sample window over (reference, measured output, input).

    Once full, each push returns the windowed RMS tracking error M (output
    errors flattened across components) and the input energy
    sqrt(sum of u'u over the window). Returns None while filling.
    """

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("window length must be >= 1")
        self.n = n
        self._ref: deque = deque(maxlen=n)
        self._out: deque = deque(maxlen=n)
        self._inp: deque = deque(maxlen=n)

    @property
    def fill(self) -> int:
        return len(self._out)

    @property
    def full(self) -> bool:
        return len(self._out) == self.n

    def push(
        self, y_r: np.ndarray, y: np.ndarray, u: np.ndarray
    ) -> Optional[Tuple[float, float]]:
        y_r = np.asarray(y_r, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        u = np.asarray(u, dtype=float).reshape(-1)
        if y_r.shape != y.shape:
            raise DimensionMismatch("reference and output dimensions differ")
        self._ref.append(y_r)
        self._out.append(y)
        self._inp.append(u)
        if not self.full:
            return None
        return self.metrics()

    def metrics(self) -> Optional[Tuple[float, float]]:
        """(M, energy) of the current window, or None if not yet full."""
        if not self.full:
            return None
        err = np.asarray(self._ref) - np.asarray(self._out)
        m = float(np.sqrt(np.mean(np.sum(err**2, axis=1))))
        u = np.asarray(self._inp)
        energy = float(np.sqrt(np.sum(u * u)))
        return m, energy


def push_and_measure(
    window: MetricWindow, y_r: np.ndarray, y: np.ndarray, u: np.ndarray
) -> Optional[Tuple[float, float]]:
    """Functional alias for MetricWindow.push."""
    return window.push(y_r, y, u)


def export_blocks(
    blocks: HankelBlocks, out_dir: str, source: Optional[Trajectory] = None
) -> None:
    """Write Up/Uf/Yp/Yf as CSV plus a JSON sidecar with the partition
    parameters and a hash of the source trajectory."""
    os.makedirs(out_dir, exist_ok=True)
    for name, block in (
        ("Up", blocks.up),
        ("Uf", blocks.uf),
        ("Yp", blocks.yp),
        ("Yf", blocks.yf),
    ):
        path = os.path.join(out_dir, f"{name}.csv")
        with open(path, "w") as fh:
            for row in block:
                fh.write(",".join(format(v, ".17g") for v in row) + "\n")
    source_hash = None
    if source is not None:
        source_hash = hashlib.sha256(source.to_csv().encode()).hexdigest()
    sidecar = {
        "t_ini": blocks.t_ini,
        "t_f": blocks.t_f,
        "m": blocks.m,
        "p": blocks.p,
        "n_cols": blocks.n_cols,
        "source_sha256": source_hash,
    }
    with open(os.path.join(out_dir, "blocks.json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def import_blocks(out_dir: str) -> HankelBlocks:
    """Read blocks written by export_blocks, validating the sidecar."""
    with open(os.path.join(out_dir, "blocks.json")) as fh:
        meta = json.load(fh)
    arrays = {}
    for name in ("Up", "Uf", "Yp", "Yf"):
        arrays[name] = np.loadtxt(
            os.path.join(out_dir, f"{name}.csv"), delimiter=",", ndmin=2
        )
    blocks = HankelBlocks(
        up=arrays["Up"],
        uf=arrays["Uf"],
        yp=arrays["Yp"],
        yf=arrays["Yf"],
        t_ini=meta["t_ini"],
        t_f=meta["t_f"],
    )
    if blocks.m != meta["m"] or blocks.p != meta["p"] or blocks.n_cols != meta["n_cols"]:
        raise ValueError("block CSVs do not match the JSON sidecar dimensions")
    return blocks
