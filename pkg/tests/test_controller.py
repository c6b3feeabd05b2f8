"""Closed-loop controller: equivalence with exact model-based control,
bounds, logging, and sweep plumbing."""

import numpy as np
import pytest

from sdeepc.behavior import blocks_from_trajectory
from sdeepc.controller import (
    ControllerConfig,
    DeePCController,
    lambda_sweep,
    run_closed_loop,
    run_fixed_lambda,
)
from sdeepc.deepc import SolverSettings
from sdeepc.errors import DimensionMismatch
from sdeepc.plant import NoiseModel, excite, make_benchmark, step

from .oracles import lq_tracking_inputs


@pytest.fixture(scope="module")
def model():
    return make_benchmark("second_order")


@pytest.fixture(scope="module")
def clean_blocks(model):
    """Noiseless-output collection: the Hankel columns span the exact
    behavior, so data-driven predictions match the state-space model."""
    traj = excite(
        model, 200,
        NoiseModel("gaussian", 0.0, 1e-3), NoiseModel(),
        seed=1, t_ini=4, t_f=12,
    )
    return blocks_from_trajectory(traj, 4, 12)


class TestModelEquivalence:
    def test_matches_exact_lq_tracking(self, model, clean_blocks):
        """With exact data, a hard initial-condition weight, and a
        negligible l1 weight, every receding-horizon input must match the
        finite-horizon LQ tracking solution computed from (A, B, C)."""
        cfg = ControllerConfig(
            lambda_y=1e10,
            solver=SolverSettings(eps_abs=1e-11, eps_rel=1e-10),
        )
        ctrl = DeePCController(clean_blocks, cfg, lambda_g=1e-6)
        x = np.zeros(2)
        ref = np.array([1.0, 0.0])
        y_ref = np.tile(ref, 12)
        worst = 0.0
        for _ in range(60):
            y = model.c @ x
            u = ctrl.control_step(y, ref)
            u_oracle = lq_tracking_inputs(
                model.a, model.b, model.c, x, y_ref, 12, 100.0, 1.0
            )[: model.m]
            worst = max(worst, float(np.max(np.abs(u - u_oracle))))
            x, _ = step(model, x, u, np.zeros(2))
        assert worst <= 1e-4

    def test_prediction_matches_next_measurement(self, model, clean_blocks):
        cfg = ControllerConfig(lambda_y=1e10)
        ctrl = DeePCController(clean_blocks, cfg, lambda_g=1e-6)
        x = np.zeros(2)
        ref = np.array([0.5, 0.0])
        for k in range(20):
            y = model.c @ x
            if k > 0:
                predicted = ctrl.last_solution.y_f[model.p : 2 * model.p]
                assert np.allclose(predicted, y, atol=1e-3)
            ctrl.control_step(y, ref)
            x, _ = step(model, x, ctrl._last_u, np.zeros(2))

    def test_zero_reference_from_rest_keeps_input_zero(self, model, clean_blocks):
        ctrl = DeePCController(clean_blocks, ControllerConfig(), lambda_g=0.01)
        x = np.zeros(2)
        for _ in range(10):
            u = ctrl.control_step(model.c @ x, np.zeros(2))
            assert np.max(np.abs(u)) <= 1e-6
            x, _ = step(model, x, u, np.zeros(2))


class TestBoundsAndValidation:
    def test_input_bounds_always_respected(self, model, clean_blocks):
        lo, hi = -0.05 * np.ones(2), 0.05 * np.ones(2)
        cfg = ControllerConfig(input_bounds=(lo, hi))
        ctrl = DeePCController(clean_blocks, cfg, lambda_g=0.01)
        x = np.array([2.0, 1.0])
        for _ in range(30):
            u = ctrl.control_step(model.c @ x, np.zeros(2))
            assert np.all(u >= lo - 1e-12)
            assert np.all(u <= hi + 1e-12)
            x, _ = step(model, x, u, np.zeros(2))

    def test_horizon_mismatch_rejected(self, clean_blocks):
        with pytest.raises(DimensionMismatch):
            DeePCController(clean_blocks, ControllerConfig(t_ini=3), 0.1)

    def test_bad_measurement_dim(self, clean_blocks):
        ctrl = DeePCController(clean_blocks, ControllerConfig(), 0.1)
        with pytest.raises(DimensionMismatch):
            ctrl.control_step(np.zeros(3), np.zeros(2))

    def test_bad_reference_dim(self, clean_blocks):
        ctrl = DeePCController(clean_blocks, ControllerConfig(), 0.1)
        with pytest.raises(DimensionMismatch):
            ctrl.control_step(np.zeros(2), np.zeros(5))

    def test_full_horizon_reference_accepted(self, clean_blocks):
        ctrl = DeePCController(clean_blocks, ControllerConfig(), 0.1)
        u = ctrl.control_step(np.zeros(2), np.zeros((12, 2)))
        assert u.shape == (2,)


class TestClosedLoopRunner:
    def test_log_length_and_window_fill(self, model, clean_blocks):
        cfg = ControllerConfig(window_n=10)
        log = run_fixed_lambda(
            model, clean_blocks, cfg, 0.05, 25,
            [(0, NoiseModel("gaussian", 0.0, 1e-8))], seed=5,
        )
        assert len(log) == 25
        # J defined exactly once the window is full
        assert all(v is None for v in log.j[:9])
        assert all(v is not None for v in log.j[9:])
        assert log.defined_j().shape == (16,)

    def test_deterministic_under_seed(self, model, clean_blocks):
        cfg = ControllerConfig()
        logs = [
            run_fixed_lambda(
                model, clean_blocks, cfg, 0.05, 30,
                [(0, NoiseModel("gaussian", 0.0, 1e-6))], seed=9,
            )
            for _ in range(2)
        ]
        assert np.array_equal(np.array(logs[0].inputs), np.array(logs[1].inputs))
        assert np.array_equal(np.array(logs[0].outputs), np.array(logs[1].outputs))

    def test_noise_schedule_switches(self, model, clean_blocks):
        """Outputs before the switch are unaffected by the second model."""
        sched_a = [(0, NoiseModel("uniform", 0.0, 1e-5))]
        sched_b = [(0, NoiseModel("uniform", 0.0, 1e-5)), (15, NoiseModel("uniform", 0.0, 2e-5))]
        cfg = ControllerConfig()
        la = run_fixed_lambda(model, clean_blocks, cfg, 0.05, 20, sched_a, seed=2)
        lb = run_fixed_lambda(model, clean_blocks, cfg, 0.05, 20, sched_b, seed=2)
        assert np.array_equal(np.array(la.outputs[:15]), np.array(lb.outputs[:15]))
        assert not np.array_equal(np.array(la.outputs[15:]), np.array(lb.outputs[15:]))

    def test_before_step_hook_retunes_lambda(self, model, clean_blocks):
        seen = []

        def hook(k, ctrl):
            ctrl.lambda_g = 0.01 * (k + 1)
            seen.append(k)

        ctrl = DeePCController(clean_blocks, ControllerConfig(), 0.5)
        log = run_closed_loop(
            model, ctrl, 5, [(0, NoiseModel())], seed=0, before_step=hook
        )
        assert seen == [0, 1, 2, 3, 4]
        assert log.lambda_g == [0.01, 0.02, 0.03, 0.04, 0.05]

    def test_j_definition(self, model, clean_blocks):
        """J = |a*energy - b*M| with the run's coefficients."""
        cfg = ControllerConfig(window_n=5)
        log = run_fixed_lambda(
            model, clean_blocks, cfg, 0.05, 12,
            [(0, NoiseModel("gaussian", 0.0, 1e-6))], seed=1,
            a_coeff=2.0, b_coeff=3.0,
        )
        for j, m, e in zip(log.j, log.m_metric, log.energy):
            if j is not None:
                assert np.isclose(j, abs(2.0 * e - 3.0 * m))


class TestLambdaSweep:
    def test_rows_ordered_and_seed_shared(self, model, clean_blocks):
        grid = [0.01, 0.1, 1.0]
        rows = lambda_sweep(
            clean_blocks, model, ControllerConfig(window_n=10), grid, 20,
            [(0, NoiseModel("gaussian", 0.0, 1e-6))], seed=4,
        )
        assert [r[0] for r in rows] == grid
        for lam, j, m, e in rows:
            assert np.isfinite((j, m, e)).all()

    def test_grid_validation(self, model, clean_blocks):
        with pytest.raises(ValueError):
            lambda_sweep(
                clean_blocks, model, ControllerConfig(), [], 10,
                [(0, NoiseModel())],
            )
        with pytest.raises(ValueError):
            lambda_sweep(
                clean_blocks, model, ControllerConfig(), [0.1, 0.1], 10,
                [(0, NoiseModel())],
            )
