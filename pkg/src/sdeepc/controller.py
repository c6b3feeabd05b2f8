"""Receding-horizon DeePC controller and closed-loop simulation helpers."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .behavior import HankelBlocks, MetricWindow
from .deepc import (
    AdmmSolver,
    ControlSolution,
    SolverSettings,
    stack_data_matrix,
    stack_target,
)
from .errors import DimensionMismatch
from .plant import NoiseModel, PlantModel


@dataclass(frozen=True)
class ControllerConfig:
    t_ini: int = 4
    t_f: int = 12
    q_weight: float = 100.0
    r_weight: float = 1.0
    lambda_y: float = 1e5
    input_bounds: Optional[Tuple[np.ndarray, np.ndarray]] = None
    window_n: int = 40
    solver: SolverSettings = field(default_factory=SolverSettings)


class DeePCController:
    """Closed-loop DeePC at a (mutable) regularization weight lambda_g.

    Keeps the last T_ini (input, output) pairs, re-solves the regularized
    problem at every step, applies the first input block, and feeds the
    metric window.  The data matrix is fixed, so one normal-equation
    factorization is shared by all steps and all lambda_g values.
    """

    def __init__(
        self,
        blocks: HankelBlocks,
        config: ControllerConfig,
        lambda_g: float,
        u_ini: Optional[np.ndarray] = None,
        y_ini: Optional[np.ndarray] = None,
    ):
        if blocks.t_ini != config.t_ini or blocks.t_f != config.t_f:
            raise DimensionMismatch(
                "HankelBlocks horizon does not match the controller config"
            )
        self.blocks = blocks
        self.config = config
        self.lambda_g = float(lambda_g)
        m, p = blocks.m, blocks.p
        self._u_buf: deque = deque(maxlen=config.t_ini)
        self._y_buf: deque = deque(maxlen=config.t_ini)
        u_ini = np.zeros((config.t_ini, m)) if u_ini is None else np.reshape(u_ini, (config.t_ini, m))
        y_ini = np.zeros((config.t_ini, p)) if y_ini is None else np.reshape(y_ini, (config.t_ini, p))
        for t in range(config.t_ini):
            self._u_buf.append(np.array(u_ini[t], dtype=float))
            self._y_buf.append(np.array(y_ini[t], dtype=float))
        a = stack_data_matrix(blocks, config.q_weight, config.r_weight, config.lambda_y)
        if config.input_bounds is not None:
            lo = np.tile(np.asarray(config.input_bounds[0], dtype=float), config.t_f)
            hi = np.tile(np.asarray(config.input_bounds[1], dtype=float), config.t_f)
            self._solver = AdmmSolver(a, blocks.uf, lo, hi, config.solver)
        else:
            self._solver = AdmmSolver(a, settings=config.solver)
        self.window = MetricWindow(config.window_n)
        self._warm_g: Optional[np.ndarray] = None
        self._last_u = np.zeros(m)
        self.last_solution: Optional[ControlSolution] = None
        self.failed_steps: List[int] = []
        self._step_index = 0

    def _horizon_reference(self, reference: np.ndarray) -> np.ndarray:
        ref = np.asarray(reference, dtype=float)
        if ref.ndim == 1 and ref.shape[0] == self.blocks.p:
            return np.tile(ref, self.config.t_f)
        flat = ref.reshape(-1)
        if flat.shape[0] != self.blocks.p * self.config.t_f:
            raise DimensionMismatch(
                "reference must be a p-vector or a (t_f, p) trajectory"
            )
        return flat

    def control_step(self, y: np.ndarray, reference: np.ndarray) -> np.ndarray:
        """Measure, solve, apply: returns the input for the current step.

        The measurement pairs with the input chosen here and both enter the
        T_ini history for the next solve; assumes D-free measurements
        (both benchmark plants have D = 0).
        """
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.shape[0] != self.blocks.p:
            raise DimensionMismatch(
                f"measurement has dim {y.shape[0]}, expected {self.blocks.p}"
            )
        cfg = self.config
        y_horizon = self._horizon_reference(reference)
        u_ini = np.concatenate(self._u_buf)
        y_ini = np.concatenate(self._y_buf)
        b = stack_target(
            u_ini,
            y_ini,
            np.zeros(self.blocks.m * cfg.t_f),
            y_horizon,
            cfg.q_weight,
            cfg.r_weight,
            cfg.lambda_y,
        )
        sol = self._solver.solve(b, self.lambda_g, g0=self._warm_g)
        sol.u_f = self.blocks.uf @ sol.g
        sol.y_f = self.blocks.yf @ sol.g
        self.last_solution = sol
        if sol.status == "infeasible" or not np.all(np.isfinite(sol.u_f)):
            # survive the step: clamp the previous input and flag it
            u = self._last_u.copy()
            if cfg.input_bounds is not None:
                u = np.clip(u, cfg.input_bounds[0], cfg.input_bounds[1])
            self.failed_steps.append(self._step_index)
        else:
            u = sol.u_f[: self.blocks.m].copy()
            if cfg.input_bounds is not None:
                # actuator saturation: the splitting iterate may sit a
                # solver-tolerance away from the box, the plant never does
                u = np.clip(u, cfg.input_bounds[0], cfg.input_bounds[1])
            self._warm_g = sol.g
        self._u_buf.append(u.copy())
        self._y_buf.append(y.copy())
        ref_now = y_horizon[: self.blocks.p]
        self.window.push(ref_now, y, u)
        self._last_u = u
        self._step_index += 1
        return u


@dataclass
class StepLog:
    """Per-step record of one closed-loop run."""

    lambda_g: List[float] = field(default_factory=list)
    j: List[Optional[float]] = field(default_factory=list)
    m_metric: List[Optional[float]] = field(default_factory=list)
    energy: List[Optional[float]] = field(default_factory=list)
    status: List[str] = field(default_factory=list)
    iterations: List[int] = field(default_factory=list)
    inputs: List[np.ndarray] = field(default_factory=list)
    outputs: List[np.ndarray] = field(default_factory=list)
    references: List[np.ndarray] = field(default_factory=list)
    rewards: List[Optional[float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.j)

    def defined_j(self) -> np.ndarray:
        return np.array([v for v in self.j if v is not None])


def _active_noise(schedule: Sequence[Tuple[int, NoiseModel]], k: int) -> NoiseModel:
    active = schedule[0][1]
    for start, model in schedule:
        if k >= start:
            active = model
        else:
            break
    return active


def run_closed_loop(
    plant: PlantModel,
    controller: DeePCController,
    steps: int,
    noise_schedule: Sequence[Tuple[int, NoiseModel]],
    seed=None,
    reference: Optional[np.ndarray] = None,
    x0: Optional[np.ndarray] = None,
    a_coeff: float = 1.0,
    b_coeff: float = 1.0,
    before_step: Optional[Callable[[int, DeePCController], None]] = None,
) -> StepLog:
    """Simulate the plant under the controller for `steps` steps.

    The objective J = |a*energy - b*M| is logged from the metric window
    once it has filled; earlier entries are None.  `before_step` runs with
    (step index, controller) ahead of every solve — the tuner uses it to
    retarget lambda_g.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    reference = (
        np.zeros(plant.p) if reference is None else np.asarray(reference, dtype=float)
    )
    x = np.zeros(plant.n_state) if x0 is None else np.array(x0, dtype=float)
    log = StepLog()
    noise_models = [
        (start, NoiseModel(nm.kind, nm.mean, nm.variance, plant.p))
        for start, nm in noise_schedule
    ]
    u_prev = np.zeros(plant.m)
    for k in range(steps):
        d = _active_noise(noise_models, k).sample(rng)
        y = plant.c @ x + plant.d @ u_prev + d
        if before_step is not None:
            before_step(k, controller)
        u = controller.control_step(y, reference)
        x = plant.a @ x + plant.b @ u
        u_prev = u
        metrics = controller.window.metrics()
        sol = controller.last_solution
        log.lambda_g.append(controller.lambda_g)
        log.status.append(sol.status)
        log.iterations.append(sol.iterations)
        log.inputs.append(u)
        log.outputs.append(y)
        ref_now = controller._horizon_reference(reference)[: plant.p]
        log.references.append(ref_now)
        if metrics is None:
            log.j.append(None)
            log.m_metric.append(None)
            log.energy.append(None)
        else:
            m_val, e_val = metrics
            log.m_metric.append(m_val)
            log.energy.append(e_val)
            log.j.append(abs(a_coeff * e_val - b_coeff * m_val))
        log.rewards.append(None)
    return log


def run_fixed_lambda(
    plant: PlantModel,
    blocks: HankelBlocks,
    config: ControllerConfig,
    lambda_g: float,
    steps: int,
    noise_schedule: Sequence[Tuple[int, NoiseModel]],
    seed=None,
    reference: Optional[np.ndarray] = None,
    x0: Optional[np.ndarray] = None,
    a_coeff: float = 1.0,
    b_coeff: float = 1.0,
) -> StepLog:
    """Baseline DeePC: one closed-loop run at a fixed lambda_g."""
    controller = DeePCController(blocks, config, lambda_g)
    return run_closed_loop(
        plant,
        controller,
        steps,
        noise_schedule,
        seed=seed,
        reference=reference,
        x0=x0,
        a_coeff=a_coeff,
        b_coeff=b_coeff,
    )


def lambda_sweep(
    blocks: HankelBlocks,
    plant: PlantModel,
    config: ControllerConfig,
    grid: Sequence[float],
    steps: int,
    noise_schedule: Sequence[Tuple[int, NoiseModel]],
    seed: int = 0,
    reference: Optional[np.ndarray] = None,
    x0: Optional[np.ndarray] = None,
    a_coeff: float = 1.0,
    b_coeff: float = 1.0,
) -> List[Tuple[float, float, float, float]]:
    """Closed-loop metrics over a grid of fixed lambda_g values.

    Every grid point replays the identical seed, so rows differ only
    through lambda_g.  Returns (lambda_g, mean J, mean M, mean energy)
    rows ordered by lambda_g.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("lambda grid must be nonempty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("lambda grid must be strictly increasing")
    rows = []
    for lam in grid:
        log = run_fixed_lambda(
            plant,
            blocks,
            config,
            lam,
            steps,
            noise_schedule,
            seed=np.random.default_rng(seed),
            reference=reference,
            x0=x0,
            a_coeff=a_coeff,
            b_coeff=b_coeff,
        )
        j = log.defined_j()
        m_vals = np.array([v for v in log.m_metric if v is not None])
        e_vals = np.array([v for v in log.energy if v is not None])
        if j.size == 0:
            raise ValueError(
                "run too short for the metric window; increase steps or shrink n"
            )
        rows.append(
            (lam, float(np.mean(j)), float(np.mean(m_vals)), float(np.mean(e_vals)))
        )
    return rows
