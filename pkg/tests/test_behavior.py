"""Hankel construction, rank checks, partitioning, metrics, serialization."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdeepc.behavior import (
    DEFAULT_RANK_TOL,
    MetricWindow,
    blocks_from_trajectory,
    export_blocks,
    hankel,
    import_blocks,
    low_rank_denoise,
    partition,
    persistency_check,
    push_and_measure,
)
from sdeepc.errors import DimensionMismatch
from sdeepc.plant import NoiseModel, excite, make_benchmark


class TestHankel:
    def test_scalar_depth_two(self):
        h = hankel(np.array([1.0, 2.0, 3.0, 4.0, 5.0]), depth=2)
        assert np.array_equal(h, [[1, 2, 3, 4], [2, 3, 4, 5]])

    def test_depth_equals_length_single_column(self):
        w = np.arange(6.0)
        h = hankel(w, depth=6)
        assert h.shape == (6, 1)
        assert np.array_equal(h.ravel(), w)

    def test_index_arithmetic_oracle(self):
        """Entry (block i, channel k, column j) must equal w[i + j, k]."""
        rng = np.random.default_rng(1)
        w = rng.normal(size=(15, 3))
        depth = 5
        h = hankel(w, depth)
        assert h.shape == (3 * depth, 15 - depth + 1)
        for i in range(depth):
            for k in range(3):
                for j in range(h.shape[1]):
                    assert h[3 * i + k, j] == w[i + j, k]

    def test_shift_property(self):
        """Dropping the first block row equals the Hankel matrix of the
        shifted signal restricted to the same columns."""
        rng = np.random.default_rng(2)
        w = rng.normal(size=(12, 2))
        depth = 4
        h = hankel(w, depth)
        h_shift = hankel(w[1:], depth - 1)
        assert np.array_equal(h[2:], h_shift[:, : h.shape[1]])

    def test_invalid_depth(self):
        with pytest.raises(ValueError):
            hankel(np.arange(5.0), depth=0)
        with pytest.raises(ValueError):
            hankel(np.arange(5.0), depth=6)


class TestPersistency:
    def test_zero_signal_rank_zero(self):
        res = persistency_check(np.zeros((30, 1)), depth=3, m=1, n_state=2)
        assert not res
        assert res.rank == 0
        assert res.required == 5

    def test_requirement_exceeding_columns_fails(self):
        # depth 10 on a length-12 scalar signal: 3 columns < m*L + n
        rng = np.random.default_rng(3)
        res = persistency_check(rng.normal(size=(12, 1)), depth=10, m=1, n_state=2)
        assert not res.passed
        assert res.rank <= 3

    def test_second_order_collection_rank(self):
        model = make_benchmark("second_order")
        traj = excite(
            model, 600,
            NoiseModel("gaussian", 0.0, 1e-3),
            NoiseModel("gaussian", 0.0, 1e-8),
            seed=42, t_ini=4, t_f=12,
        )
        w = np.hstack([traj.inputs, traj.outputs])
        res = persistency_check(w, depth=16, m=2, n_state=2, tol=DEFAULT_RANK_TOL)
        assert res.passed
        assert res.rank == 2 * 16 + 2 == 34

    def test_rank_matches_numpy_on_exact_data(self):
        rng = np.random.default_rng(4)
        w = rng.normal(size=(40, 2))
        res = persistency_check(w, depth=5, m=2, n_state=0, tol=1e-12)
        h = hankel(w, 5)
        assert res.rank == np.linalg.matrix_rank(h)


class TestPartition:
    def test_scalar_example(self):
        u = np.array([1.0, 2.0, 3.0, 4.0])
        y = np.array([10.0, 20.0, 30.0, 40.0])
        blocks = partition(u, y, t_ini=1, t_f=1)
        assert np.array_equal(blocks.up, [[1, 2, 3]])
        assert np.array_equal(blocks.uf, [[2, 3, 4]])
        assert np.array_equal(blocks.yp, [[10, 20, 30]])
        assert np.array_equal(blocks.yf, [[20, 30, 40]])

    def test_restack_oracle(self):
        """Stacking past over future blocks recovers the full Hankel matrix."""
        rng = np.random.default_rng(5)
        u = rng.normal(size=(30, 2))
        y = rng.normal(size=(30, 3))
        t_ini, t_f = 4, 6
        blocks = partition(u, y, t_ini, t_f)
        assert np.array_equal(np.vstack([blocks.up, blocks.uf]), hankel(u, t_ini + t_f))
        assert np.array_equal(np.vstack([blocks.yp, blocks.yf]), hankel(y, t_ini + t_f))
        assert blocks.m == 2
        assert blocks.p == 3
        assert blocks.n_cols == 30 - (t_ini + t_f) + 1

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatch):
            partition(np.zeros((10, 1)), np.zeros((11, 1)), 2, 2)

    def test_too_short(self):
        with pytest.raises(ValueError):
            partition(np.zeros((5, 1)), np.zeros((5, 1)), 3, 3)


class TestLowRankDenoise:
    def test_eckart_young_optimality(self):
        """Residual Frobenius norm equals the tail singular values."""
        rng = np.random.default_rng(6)
        h = rng.normal(size=(8, 12))
        s = np.linalg.svd(h, compute_uv=False)
        for r in (1, 3, 5):
            hr = low_rank_denoise(h, r)
            assert np.linalg.matrix_rank(hr, tol=1e-10) == r
            res = np.linalg.norm(h - hr, "fro")
            assert np.isclose(res, np.sqrt(np.sum(s[r:] ** 2)), atol=1e-10)

    def test_full_rank_is_identity(self):
        rng = np.random.default_rng(7)
        h = rng.normal(size=(5, 9))
        assert np.allclose(low_rank_denoise(h, 5), h, atol=1e-12)

    def test_invalid_rank(self):
        with pytest.raises(ValueError):
            low_rank_denoise(np.eye(3), 0)
        with pytest.raises(ValueError):
            low_rank_denoise(np.eye(3), 4)


class TestMetricWindow:
    def test_returns_none_while_filling(self):
        w = MetricWindow(3)
        assert w.push([0.0], [0.0], [0.0]) is None
        assert w.push([0.0], [0.0], [0.0]) is None
        assert w.push([0.0], [0.0], [0.0]) is not None
        assert w.full

    def test_perfect_tracking_gives_zero_m(self):
        w = MetricWindow(4)
        rng = np.random.default_rng(8)
        out = None
        for _ in range(4):
            y = rng.normal(size=2)
            out = w.push(y, y, np.zeros(1))
        m, energy = out
        assert m == 0.0
        assert energy == 0.0

    def test_constant_error_magnitude(self):
        """Constant scalar error e gives M = |e| regardless of window size."""
        for n in (1, 5, 9):
            w = MetricWindow(n)
            out = None
            for _ in range(n):
                out = w.push([1.0], [3.5], [0.0])
            assert np.isclose(out[0], 2.5)

    def test_energy_accumulates_inputs(self):
        w = MetricWindow(2)
        w.push([0.0], [0.0], [3.0])
        m, energy = w.push([0.0], [0.0], [4.0])
        assert np.isclose(energy, 5.0)

    def test_sliding_drops_old_samples(self):
        w = MetricWindow(2)
        w.push([0.0], [9.0], [0.0])
        w.push([0.0], [0.0], [0.0])
        m, _ = w.push([0.0], [0.0], [0.0])
        assert m == 0.0

    def test_permutation_invariance(self):
        """M and energy depend on the window as a set, not the order."""
        rng = np.random.default_rng(9)
        samples = [(rng.normal(size=2), rng.normal(size=2), rng.normal(size=1))
                   for _ in range(6)]
        w1, w2 = MetricWindow(6), MetricWindow(6)
        out1 = out2 = None
        for s in samples:
            out1 = w1.push(*s)
        for s in reversed(samples):
            out2 = w2.push(*s)
        assert np.allclose(out1, out2)

    def test_functional_alias(self):
        w = MetricWindow(1)
        assert push_and_measure(w, [1.0], [0.0], [2.0]) == (1.0, 2.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            MetricWindow(2).push([1.0, 2.0], [1.0], [0.0])

    def test_invalid_length(self):
        with pytest.raises(ValueError):
            MetricWindow(0)


class TestBlockSerialization:
    def test_roundtrip(self, tmp_path):
        model = make_benchmark("second_order")
        traj = excite(
            model, 120,
            NoiseModel("gaussian", 0.0, 1e-3),
            NoiseModel("gaussian", 0.0, 1e-8),
            seed=10, t_ini=4, t_f=12,
        )
        blocks = blocks_from_trajectory(traj, 4, 12)
        out = tmp_path / "blocks"
        export_blocks(blocks, str(out), source=traj)
        back = import_blocks(str(out))
        assert np.array_equal(back.up, blocks.up)
        assert np.array_equal(back.uf, blocks.uf)
        assert np.array_equal(back.yp, blocks.yp)
        assert np.array_equal(back.yf, blocks.yf)
        assert back.t_ini == 4 and back.t_f == 12

    def test_sidecar_mismatch_rejected(self, tmp_path):
        rng = np.random.default_rng(11)
        blocks = partition(rng.normal(size=(20, 1)), rng.normal(size=(20, 1)), 2, 3)
        out = tmp_path / "blocks"
        export_blocks(blocks, str(out))
        # corrupt one CSV by dropping a column
        up = np.loadtxt(out / "Up.csv", delimiter=",", ndmin=2)
        np.savetxt(out / "Up.csv", up[:, :-1], delimiter=",")
        with pytest.raises((ValueError, DimensionMismatch)):
            import_blocks(str(out))


@settings(max_examples=30, deadline=None)
@given(
    t_d=st.integers(4, 40),
    q=st.integers(1, 3),
    depth=st.integers(1, 4),
    seed=st.integers(0, 10_000),
)
def test_hankel_shape_and_entries_property(t_d, q, depth, seed):
    w = np.random.default_rng(seed).normal(size=(t_d, q))
    h = hankel(w, depth)
    assert h.shape == (q * depth, t_d - depth + 1)
    # spot-check the four corners
    assert h[0, 0] == w[0, 0]
    assert h[q - 1, 0] == w[0, q - 1]
    assert h[0, -1] == w[t_d - depth, 0]
    assert h[-1, -1] == w[t_d - 1, q - 1]
