"""SARSA tuner: hand-computed updates, discretization, action selection,
reward shape, table serialization, and the training/online loops."""

import numpy as np
import pytest
from scipy.stats import chisquare

from sdeepc.behavior import blocks_from_trajectory
from sdeepc.controller import ControllerConfig
from sdeepc.plant import NoiseModel, excite, make_benchmark
from sdeepc.tuner import (
    QTable,
    RLState,
    TunerConfig,
    calibrate_edges,
    discretize,
    reward,
    run_online,
    sarsa_update,
    select_action,
    sidecar_path,
    train_offline,
)


def make_state(eb, rb, e=0.0, r=0.0):
    return RLState(energy_raw=e, rmse_raw=r, energy_bin=eb, rmse_bin=rb)


class TestSarsaUpdateByHand:
    """Each case checks one table cell against arithmetic done on paper."""

    def test_zero_table_single_step(self):
        q = QTable.zeros((3, 3, 2))
        # new = 0 + 0.5*(r + gamma*0 - 0) = 0.5 * (-2.0)
        new = sarsa_update(q, make_state(1, 1), 0, -2.0, make_state(2, 0), 1,
                           alpha=0.5, gamma=0.9)
        assert new == -1.0
        assert q.values[1, 1, 0] == -1.0
        assert np.count_nonzero(q.values) == 1

    def test_bootstrap_from_next_cell(self):
        q = QTable.zeros((2, 2, 2))
        q.values[0, 1, 1] = 4.0       # value of the realized next action
        q.values[0, 1, 0] = 10.0      # better action, must be ignored on-policy
        # new = 1 + 0.25*( -1 + 0.5*4 - 1 ) = 1 + 0.25*0 = 1
        q.values[1, 0, 0] = 1.0
        new = sarsa_update(q, make_state(1, 0), 0, -1.0, make_state(0, 1), 1,
                           alpha=0.25, gamma=0.5)
        assert new == 1.0

    def test_off_policy_uses_max(self):
        q = QTable.zeros((2, 2, 2))
        q.values[0, 1, 1] = 4.0
        q.values[0, 1, 0] = 10.0
        # new = 0 + 1.0*( -1 + 0.5*10 - 0 ) = 4
        new = sarsa_update(q, make_state(1, 0), 0, -1.0, make_state(0, 1), 1,
                           alpha=1.0, gamma=0.5, off_policy=True)
        assert new == 4.0

    def test_alpha_zero_is_noop(self):
        q = QTable.zeros((2, 2, 2))
        q.values[:] = 7.0
        new = sarsa_update(q, make_state(0, 0), 1, -3.0, make_state(1, 1), 0,
                           alpha=0.0, gamma=0.9)
        assert new == 7.0
        assert np.all(q.values == 7.0)

    def test_alpha_one_gamma_zero_overwrites_with_reward(self):
        q = QTable.zeros((2, 2, 2))
        q.values[1, 1, 0] = -5.0
        new = sarsa_update(q, make_state(1, 1), 0, -0.125, make_state(0, 0), 1,
                           alpha=1.0, gamma=0.0)
        assert new == -0.125
        assert q.values[1, 1, 0] == -0.125

    def test_two_sequential_updates(self):
        q = QTable.zeros((2, 2, 1))
        s0, s1 = make_state(0, 0), make_state(1, 1)
        # step 1: q[0,0,0] = 0 + 0.5*(-1 + 1.0*0 - 0) = -0.5
        sarsa_update(q, s0, 0, -1.0, s1, 0, alpha=0.5, gamma=1.0)
        # step 2: q[1,1,0] = 0 + 0.5*(-1 + 1.0*(-0.5) - 0) = -0.75
        new = sarsa_update(q, s1, 0, -1.0, s0, 0, alpha=0.5, gamma=1.0)
        assert q.values[0, 0, 0] == -0.5
        assert new == -0.75

    def test_values_bounded_by_reward_horizon(self):
        """Repeated updates with rewards in [-1, 0] keep values in
        [-1/(1-gamma), 0]."""
        rng = np.random.default_rng(0)
        gamma = 0.8
        q = QTable.zeros((3, 3, 4))
        for _ in range(5000):
            s = make_state(rng.integers(3), rng.integers(3))
            s2 = make_state(rng.integers(3), rng.integers(3))
            sarsa_update(q, s, int(rng.integers(4)), -float(rng.random()),
                         s2, int(rng.integers(4)), alpha=0.9, gamma=gamma)
        assert q.values.min() >= -1.0 / (1.0 - gamma) - 1e-12
        assert q.values.max() <= 0.0


class TestDiscretize:
    CFG = TunerConfig(
        energy_edges=(1.0, 2.0, 3.0),
        rmse_edges=(10.0, 20.0),
        action_grid=(0.1, 0.2),
    )

    def test_interior_value(self):
        s = discretize(2.5, 15.0, self.CFG)
        assert s.energy_bin == 2
        assert s.rmse_bin == 1
        assert s.energy_raw == 2.5 and s.rmse_raw == 15.0

    def test_below_first_edge(self):
        s = discretize(0.0, 0.0, self.CFG)
        assert s.energy_bin == 0 and s.rmse_bin == 0

    def test_clamps_above_last_edge(self):
        s = discretize(1e9, 1e9, self.CFG)
        assert s.energy_bin == 3  # 4 bins from 3 edges
        assert s.rmse_bin == 2

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            discretize(np.nan, 1.0, self.CFG)

    def test_unset_edges_rejected(self):
        with pytest.raises(ValueError):
            discretize(1.0, 1.0, TunerConfig())


class TestSelectAction:
    def test_greedy_takes_argmax(self):
        q = QTable.zeros((2, 2, 5))
        q.values[0, 0] = [-3.0, -1.0, -2.0, -1.5, -4.0]
        rng = np.random.default_rng(0)
        for _ in range(20):
            assert select_action(q, make_state(0, 0), 0.0, rng) == 1

    def test_greedy_tie_breaks_low(self):
        q = QTable.zeros((1, 1, 4))
        rng = np.random.default_rng(0)
        assert select_action(q, make_state(0, 0), 0.0, rng) == 0

    def test_full_exploration_is_uniform(self):
        q = QTable.zeros((1, 1, 6))
        q.values[0, 0] = [0, 0, 0, 0, 0, 100.0]  # greedy would always pick 5
        rng = np.random.default_rng(1)
        n = 30_000
        counts = np.bincount(
            [select_action(q, make_state(0, 0), 1.0, rng) for _ in range(n)],
            minlength=6,
        )
        assert chisquare(counts).pvalue > 1e-4

    def test_epsilon_mixes(self):
        q = QTable.zeros((1, 1, 3))
        q.values[0, 0] = [5.0, 0.0, 0.0]
        rng = np.random.default_rng(2)
        n = 20_000
        picks = np.array([select_action(q, make_state(0, 0), 0.3, rng) for _ in range(n)])
        frac_greedy = np.mean(picks == 0)
        # expected 0.7 + 0.3/3 = 0.8
        assert abs(frac_greedy - 0.8) < 0.02


class TestReward:
    def test_matches_negated_objective(self):
        s = make_state(0, 0, e=2.0, r=3.0)
        assert reward(s, 1.0, 1.0) == -1.0
        assert reward(s, 2.0, 1.0) == -1.0
        assert reward(s, 1.0, 2.0) == -4.0

    def test_uses_raw_not_binned_values(self):
        a = make_state(0, 0, e=1.0, r=1.0)
        b = make_state(0, 0, e=1.4, r=1.0)  # same bins, different raw
        assert reward(a, 1.0, 1.0) != reward(b, 1.0, 1.0)

    def test_never_positive(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            s = make_state(0, 0, e=rng.random(), r=rng.random())
            assert reward(s, rng.random(), rng.random()) <= 0.0


class TestConfigValidation:
    def test_bad_hyperparameters(self):
        with pytest.raises(ValueError):
            TunerConfig(alpha=0.0)
        with pytest.raises(ValueError):
            TunerConfig(gamma=1.5)
        with pytest.raises(ValueError):
            TunerConfig(epsilon=-0.1)

    def test_bad_action_grid(self):
        with pytest.raises(ValueError):
            TunerConfig(action_grid=())
        with pytest.raises(ValueError):
            TunerConfig(action_grid=(0.2, 0.1))
        with pytest.raises(ValueError):
            TunerConfig(action_grid=(0.0, 0.1))

    def test_default_grid_matches_published_setup(self):
        cfg = TunerConfig()
        assert cfg.n_actions == 101
        assert np.isclose(cfg.action_grid[0], 0.006)
        assert np.isclose(cfg.action_grid[-1], 0.606)
        assert cfg.table_dims() == (101, 101, 101)

    def test_table_dims_from_edges(self):
        cfg = TunerConfig(energy_edges=(1.0, 2.0), rmse_edges=(5.0,))
        assert cfg.table_dims() == (3, 2, 101)


class TestQTableSerialization:
    def test_roundtrip_bitwise(self, tmp_path):
        cfg = TunerConfig(
            energy_edges=(1.0, 2.0), rmse_edges=(5.0,),
            action_grid=(0.1, 0.3),
        )
        q = QTable(np.random.default_rng(4).normal(size=cfg.table_dims()))
        path = str(tmp_path / "table.qt")
        q.save(path, cfg)
        back, cfg_back = QTable.load(path)
        assert np.array_equal(back.values, q.values)
        assert cfg_back.action_grid == cfg.action_grid
        assert cfg_back.energy_edges == cfg.energy_edges
        assert cfg_back.alpha == cfg.alpha

    def test_sidecar_path(self):
        assert sidecar_path("/x/y/table.qt") == "/x/y/table.json"

    def test_bad_magic_rejected(self, tmp_path):
        cfg = TunerConfig(energy_edges=(1.0,), rmse_edges=(1.0,), action_grid=(0.1,))
        q = QTable.zeros(cfg.table_dims())
        path = str(tmp_path / "table.qt")
        q.save(path, cfg)
        raw = bytearray(open(path, "rb").read())
        raw[:4] = b"XXXX"
        open(path, "wb").write(bytes(raw))
        with pytest.raises(ValueError):
            QTable.load(path)

    def test_dim_mismatch_rejected(self, tmp_path):
        cfg = TunerConfig(energy_edges=(1.0,), rmse_edges=(1.0,), action_grid=(0.1, 0.2))
        q = QTable.zeros(cfg.table_dims())
        path = str(tmp_path / "table.qt")
        q.save(path, cfg)
        # truncate the payload
        raw = open(path, "rb").read()
        open(path, "wb").write(raw[:-8])
        with pytest.raises(ValueError):
            QTable.load(path)


@pytest.fixture(scope="module")
def loop_setup():
    model = make_benchmark("second_order")
    traj = excite(
        model, 300,
        NoiseModel("gaussian", 0.0, 1e-3),
        NoiseModel("gaussian", 0.0, 1e-8),
        seed=6, t_ini=4, t_f=12,
    )
    blocks = blocks_from_trajectory(traj, 4, 12)
    cfg = TunerConfig(
        action_grid=(0.05, 0.2, 0.5),
        energy_bins=4, rmse_bins=4,
        window_n=10, train_steps_per_action=30,
    )
    cc = ControllerConfig(window_n=10)
    sched = [(0, NoiseModel("uniform", 0.0, 1e-5))]
    return model, blocks, cfg, cc, sched


class TestLoops:
    def test_calibrate_resolves_edges(self, loop_setup):
        model, blocks, cfg, cc, sched = loop_setup
        out = calibrate_edges(model, blocks, cfg, sched, seed=0,
                              controller_config=cc)
        assert out.energy_edges is not None and len(out.energy_edges) == 3
        assert out.rmse_edges is not None and len(out.rmse_edges) == 3
        assert all(e >= 0 for e in out.energy_edges)

    def test_train_offline_touches_every_action(self, loop_setup):
        model, blocks, cfg, cc, sched = loop_setup
        res = train_offline(model, blocks, cfg, episodes=1,
                            noise_schedule=sched, seed=1, controller_config=cc)
        assert res.q.values.shape == (4, 4, 3)
        visited = np.nonzero(res.q.values)[2]
        assert set(visited.tolist()) == {0, 1, 2}
        assert len(res.episode_mean_j) == 1
        assert np.isfinite(res.episode_mean_j[0])

    def test_train_offline_deterministic(self, loop_setup):
        model, blocks, cfg, cc, sched = loop_setup
        r1 = train_offline(model, blocks, cfg, 1, sched, seed=2, controller_config=cc)
        r2 = train_offline(model, blocks, cfg, 1, sched, seed=2, controller_config=cc)
        assert np.array_equal(r1.q.values, r2.q.values)

    def test_zero_episodes_zero_table(self, loop_setup):
        model, blocks, cfg, cc, sched = loop_setup
        res = train_offline(model, blocks, cfg, 0, sched, seed=3, controller_config=cc)
        assert np.count_nonzero(res.q.values) == 0

    def test_run_online_greedy_follows_table(self, loop_setup):
        model, blocks, cfg, cc, sched = loop_setup
        res = train_offline(model, blocks, cfg, 1, sched, seed=4, controller_config=cc)
        frozen = TunerConfig(
            action_grid=res.config.action_grid,
            energy_edges=res.config.energy_edges,
            rmse_edges=res.config.rmse_edges,
            window_n=10, freeze_online=True,
        )
        log = run_online(model, blocks, res.q, frozen, 40, seed=5,
                         noise_schedule=sched, controller_config=cc, epsilon=0.0)
        assert len(log) == 40
        # every applied lambda_g comes from the action grid
        assert set(log.lambda_g) <= set(res.config.action_grid)
        # frozen table is untouched
        res2 = train_offline(model, blocks, cfg, 1, sched, seed=4, controller_config=cc)
        assert np.array_equal(res.q.values, res2.q.values)

    def test_run_online_rejects_mismatched_table(self, loop_setup):
        model, blocks, cfg, cc, sched = loop_setup
        out = calibrate_edges(model, blocks, cfg, sched, seed=0, controller_config=cc)
        with pytest.raises(ValueError):
            run_online(model, blocks, QTable.zeros((2, 2, 3)), out, 10,
                       noise_schedule=sched, controller_config=cc)

    def test_missing_noise_schedule_rejected(self, loop_setup):
        model, blocks, cfg, cc, _ = loop_setup
        with pytest.raises(ValueError):
            train_offline(model, blocks, cfg, 1, None, controller_config=cc)
