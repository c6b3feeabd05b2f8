"""Discrete-time LTI plants with additive output noise.

Provides the state-space step/simulate primitives, the two benchmark
systems used throughout the experiments, and persistently exciting
data-collection runs.
"""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, SimulationDiverged

# Any state component beyond this magnitude aborts a run loudly instead of
# letting NaNs propagate into the Hankel data.
DIVERGENCE_GUARD = 1e9


@dataclass(frozen=True)
class NoiseModel:
    """Additive disturbance: gaussian, uniform, or none.

    Uniform noise with mean mu and variance theta is drawn from the interval
    [mu - sqrt(3*theta), mu + sqrt(3*theta)], the unique interval with those
    first two moments.
    """

    kind: str = "none"
    mean: float = 0.0
    variance: float = 0.0
    dimension: int = 1

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform", "none"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.variance < 0:
            raise ValueError("noise variance must be >= 0")
        if self.dimension < 1:
            raise ValueError("noise dimension must be >= 1")

    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        """Draw one (dimension,) sample, or (size, dimension) when size given."""
        shape = (self.dimension,) if size is None else (size, self.dimension)
        if self.kind == "none":
            return np.zeros(shape)
        if self.kind == "gaussian":
            return rng.normal(self.mean, np.sqrt(self.variance), shape)
        half = np.sqrt(3.0 * self.variance)
        return rng.uniform(self.mean - half, self.mean + half, shape)


@dataclass(frozen=True)
class PlantModel:
    """State-space matrices (A, B, C, D) of a discrete-time LTI plant."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    lag: int = 1
    dt: float = 1.0  # seconds per step, for reporting only

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        c = np.atleast_2d(np.asarray(self.c, dtype=float))
        d = np.atleast_2d(np.asarray(self.d, dtype=float))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", d)
        n = a.shape[0]
        if a.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {a.shape}")
        if b.shape[0] != n:
            raise DimensionMismatch(f"B has {b.shape[0]} rows, expected {n}")
        if c.shape[1] != n:
            raise DimensionMismatch(f"C has {c.shape[1]} cols, expected {n}")
        if d.shape != (c.shape[0], b.shape[1]):
            raise DimensionMismatch(
                f"D must be {c.shape[0]}x{b.shape[1]}, got {d.shape}"
            )
        for name, m in (("A", a), ("B", b), ("C", c), ("D", d)):
            if not np.all(np.isfinite(m)):
                raise ValueError(f"{name} contains non-finite entries")
        if self.lag < 1:
            raise ValueError("lag must be >= 1")

    @property
    def n_state(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        """Number of inputs."""
        return self.b.shape[1]

    @property
    def p(self) -> int:
        """Number of outputs."""
        return self.c.shape[0]


@dataclass(frozen=True)
class Trajectory:
    """A finished plant run: inputs (T, m) and outputs (T, p)."""

    inputs: np.ndarray
    outputs: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.atleast_2d(np.asarray(self.outputs, dtype=float))
        object.__setattr__(self, "inputs", u)
        object.__setattr__(self, "outputs", y)
        if u.shape[0] != y.shape[0]:
            raise DimensionMismatch(
                f"inputs have {u.shape[0]} samples, outputs {y.shape[0]}"
            )
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(y))):
            raise ValueError("trajectory contains non-finite samples")

    @property
    def length(self) -> int:
        return self.inputs.shape[0]

    def to_csv(self, path=None) -> Optional[str]:
        """Write `t,u1..um,y1..yp` rows at full double precision.

        Returns the CSV text when path is None.
        """
        m = self.inputs.shape[1]
        p = self.outputs.shape[1]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["t"] + [f"u{i+1}" for i in range(m)] + [f"y{i+1}" for i in range(p)]
        )
        for t in range(self.length):
            row = [str(t)]
            row += [format(v, ".17g") for v in self.inputs[t]]
            row += [format(v, ".17g") for v in self.outputs[t]]
            writer.writerow(row)
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w") as fh:
            fh.write(text)
        return None

    @classmethod
    def from_csv(cls, path_or_text: str, m: Optional[int] = None) -> "Trajectory":
        """Read a trajectory written by to_csv. Column counts infer m and p
        from the header when m is not given."""
        try:
            with open(path_or_text) as fh:
                text = fh.read()
        except (OSError, ValueError):
            text = path_or_text
        rows = list(csv.reader(io.StringIO(text)))
        header = rows[0]
        if m is None:
            m = sum(1 for h in header if h.startswith("u"))
        p = len(header) - 1 - m
        data = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        return cls(inputs=data[:, :m], outputs=data[:, m:])


def step(model: PlantModel, x: np.ndarray, u: np.ndarray, d: np.ndarray):
    """One state-space update: x+ = A x + B u, y = C x + D u + d."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    d = np.asarray(d, dtype=float).reshape(-1)
    if x.shape[0] != model.n_state:
        raise DimensionMismatch(
            f"state has dim {x.shape[0]}, model expects {model.n_state}"
        )
    if u.shape[0] != model.m:
        raise DimensionMismatch(f"input has dim {u.shape[0]}, model expects {model.m}")
    if d.shape[0] != model.p:
        raise DimensionMismatch(
            f"disturbance has dim {d.shape[0]}, model expects {model.p}"
        )
    x_next = model.a @ x + model.b @ u
    y = model.c @ x + model.d @ u + d
    return x_next, y


def simulate(
    model: PlantModel,
    u_seq: np.ndarray,
    x0: Optional[np.ndarray] = None,
    noise: NoiseModel = NoiseModel(),
    seed: Optional[int] = None,
) -> Trajectory:
    """Iterate `step` over an input sequence with additive output noise.

    Identical seed implies a bit-identical trajectory.
    """
    u_seq = np.atleast_2d(np.asarray(u_seq, dtype=float))
    if u_seq.shape[0] == 0:
        raise ValueError("input sequence must be nonempty")
    if u_seq.shape[1] != model.m:
        raise DimensionMismatch(
            f"input sequence has width {u_seq.shape[1]}, model expects {model.m}"
        )
    x = np.zeros(model.n_state) if x0 is None else np.asarray(x0, dtype=float)
    rng = np.random.default_rng(seed)
    noise = NoiseModel(noise.kind, noise.mean, noise.variance, model.p)
    outputs = np.empty((u_seq.shape[0], model.p))
    for t in range(u_seq.shape[0]):
        d = noise.sample(rng)
        x, y = step(model, x, u_seq[t], d)
        big = np.max(np.abs(x)) if x.size else 0.0
        if not np.isfinite(big) or big > DIVERGENCE_GUARD:
            raise SimulationDiverged(t, float(big))
        outputs[t] = y
    return Trajectory(inputs=u_seq, outputs=outputs, seed=seed)


def _second_order() -> PlantModel:
    a = np.array([[0.49, 4.0], [-0.066, 1.5]])
    b = 0.01 * np.eye(2)
    c = np.eye(2)
    d = np.zeros((2, 2))
    return PlantModel(a=a, b=b, c=c, d=d, lag=2, dt=0.01)


def _triple_mass_spring(
    inertia: float = 2.25e-4,
    spring: float = 2.7,
    friction: float = 1.5e-4,
    dt: float = 0.01,
) -> PlantModel:
    """Torsional chain of three discs, springs between neighbours, motor
    torque on discs 1 and 3, disc angles as outputs (m=2, p=3)."""
    from scipy.linalg import expm

    k, j, f = spring, inertia, friction
    # continuous state (theta1..3, omega1..3)
    ac = np.zeros((6, 6))
    ac[:3, 3:] = np.eye(3)
    stiff = np.array(
        [[-k, k, 0.0], [k, -2 * k, k], [0.0, k, -k]]
    ) / j
    ac[3:, :3] = stiff
    ac[3:, 3:] = -(f / j) * np.eye(3)
    bc = np.zeros((6, 2))
    bc[3, 0] = 1.0 / j
    bc[5, 1] = 1.0 / j
    # exact zero-order-hold discretization via the augmented exponential
    aug = np.zeros((8, 8))
    aug[:6, :6] = ac
    aug[:6, 6:] = bc
    ead = expm(aug * dt)
    a = ead[:6, :6]
    b = ead[:6, 6:]
    c = np.hstack([np.eye(3), np.zeros((3, 3))])
    d = np.zeros((3, 2))
    return PlantModel(a=a, b=b, c=c, d=d, lag=2, dt=dt)


_BENCHMARKS = {
    "second_order": _second_order,
    "triple_mass_spring": _triple_mass_spring,
}


def make_benchmark(name: str, **overrides) -> PlantModel:
    """Return one of the built-in benchmark plants by name.

    `triple_mass_spring` accepts inertia/spring/friction/dt keyword
    overrides; `second_order` accepts none.
    """
    if name not in _BENCHMARKS:
        raise ValueError(
            f"unknown benchmark {name!r}; available: {sorted(_BENCHMARKS)}"
        )
    return _BENCHMARKS[name](**overrides)


def excite(
    model: PlantModel,
    length: int,
    input_noise: NoiseModel,
    output_noise: NoiseModel,
    seed: Optional[int] = None,
    t_ini: Optional[int] = None,
    t_f: Optional[int] = None,
    x0: Optional[np.ndarray] = None,
) -> Trajectory:
    """Run a data-collection experiment with random input excitation.

    When the horizon (t_ini, t_f) is given, lengths below t_ini + t_f are
    rejected and lengths below the persistency-of-excitation recommendation
    (m+1)(t_ini+t_f) + n - 1 produce a warning.
    """
    if t_ini is not None and t_f is not None:
        depth = t_ini + t_f
        if length < depth:
            raise ValueError(
                f"collection length {length} is shorter than the Hankel "
                f"depth T_ini+T_f = {depth}"
            )
        recommended = (model.m + 1) * depth + model.n_state - 1
        if length < recommended:
            warnings.warn(
                f"collection length {length} is below the recommended "
                f"(m+1)(T_ini+T_f)+n-1 = {recommended}; the excitation "
                "rank condition may fail",
                stacklevel=2,
            )
    rng = np.random.default_rng(seed)
    in_model = NoiseModel(input_noise.kind, input_noise.mean, input_noise.variance, model.m)
    u_seq = in_model.sample(rng, size=length)
    # one generator drives both input draws and output noise so a single
    # seed pins the whole collection run
    x = np.zeros(model.n_state) if x0 is None else np.asarray(x0, dtype=float)
    out_model = NoiseModel(output_noise.kind, output_noise.mean, output_noise.variance, model.p)
    outputs = np.empty((length, model.p))
    for t in range(length):
        d = out_model.sample(rng)
        x, y = step(model, x, u_seq[t], d)
        big = np.max(np.abs(x))
        if not np.isfinite(big) or big > DIVERGENCE_GUARD:
            raise SimulationDiverged(t, float(big))
        outputs[t] = y
    return Trajectory(inputs=u_seq, outputs=outputs, seed=seed)
