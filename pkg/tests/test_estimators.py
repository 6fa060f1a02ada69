import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_sup_diff, brute_table
from supkde.estimators import (
    A_hat,
    Dataset,
    EstimatorBank,
    EstimatorError,
    EvaluationGrid,
    FittedEstimator,
    GridCoverageError,
    block_volume,
    empirical_f_n,
    fit,
    fit_marginal,
    fit_pair,
    partition_volume,
    sup_norm_diff,
)
from supkde.kernels import build_convolution_table, build_polynomial_kernel, epanechnikov
from supkde.partitions import Partition

K1 = epanechnikov()
K3 = build_polynomial_kernel(3)


def small_fixture(n=60, d=2, seed=0, count=31):
    X = np.random.default_rng(seed).normal(scale=0.3, size=(n, d))
    ds = Dataset(X)
    lo = tuple(float(X[:, j].min()) - 0.65 for j in range(d))
    hi = tuple(float(X[:, j].max()) + 0.65 for j in range(d))
    step = tuple((b - a) / (count - 1) for a, b in zip(lo, hi))
    return ds, EvaluationGrid(lo, step, (count,) * d)


def test_dataset_validation():
    with pytest.raises(EstimatorError, match="at least 2"):
        Dataset(np.zeros((1, 2)))
    with pytest.raises(EstimatorError, match="row 2, column 1"):
        Dataset(np.array([[0.0, 1.0], [np.nan, 2.0]]))
    assert Dataset(np.arange(5.0)).d == 1


def test_point_mass_value():
    ds = Dataset(np.zeros((2, 1)))
    grid = EvaluationGrid((-1.0,), (0.125,), (17,))
    t = fit_marginal(ds, (0,), (0.5,), grid, K1)
    assert t[8] == pytest.approx(3.0)
    assert grid.axes[0][8] == 0.0
    assert np.all(t[np.abs(grid.axes[0]) > 0.25] == 0)


@pytest.mark.parametrize("kernel", [K1, K3])
def test_marginal_equals_brute_force_exactly(kernel):
    X = np.random.default_rng(5).uniform(size=(100, 1))
    ds = Dataset(X)
    grid = EvaluationGrid((-0.5,), (2.0 / 30,), (31,))
    t = fit_marginal(ds, (0,), (0.25,), grid, kernel)
    ref = brute_table(ds.X, grid.axes, (0,), [lambda u: kernel.scaled(u, 0.25)])
    assert np.array_equal(t, ref)


def test_joint_and_pair_equal_brute_force_exactly():
    ds, grid = small_fixture()
    bank = EstimatorBank(ds, K3, grid)
    h, eta = (0.5, 0.25), (0.25, 1.0)
    t = bank.marginal((0, 1), h)
    ref = brute_table(ds.X, grid.axes, (0, 1), [lambda u: K3.scaled(u, 0.5), lambda u: K3.scaled(u, 0.25)])
    assert np.array_equal(t, ref)
    tp = bank.pair_marginal((0, 1), h, eta)
    ref = brute_table(ds.X, grid.axes, (0, 1), [build_convolution_table(K3, 0.5, 0.25), build_convolution_table(K3, 0.25, 1.0)])
    assert np.array_equal(tp, ref)


def test_sup_norm_equals_brute_force_exactly():
    ds, grid = small_fixture(count=11)
    bank = EstimatorBank(ds, K1, grid)
    a = bank.estimator((0.5, 0.25), Partition.singletons(2))
    b = bank.pair_estimator((0.5, 0.25), Partition.singletons(2), (0.25, 0.5), Partition.trivial(2))
    assert sup_norm_diff(a, b) == brute_sup_diff(a, b)
    c = bank.estimator((0.25, 0.25), Partition.trivial(2))
    assert sup_norm_diff(a, c) == brute_sup_diff(a, c)


def test_sup_norm_trivial_cases():
    ds, grid = small_fixture(count=11)
    a = EstimatorBank(ds, K1, grid).estimator((0.5, 0.5), Partition.trivial(2))
    assert sup_norm_diff(a, a) == 0.0
    shifted = FittedEstimator(grid, a.blocks, (a.tables[0] + 0.125,))
    assert sup_norm_diff(a, shifted) == pytest.approx(0.125, abs=1e-15)
    other = EvaluationGrid(grid.lo, grid.step, (12, 11))
    with pytest.raises(EstimatorError):
        sup_norm_diff(a, FittedEstimator(other, ((0, 1),), (np.zeros((12, 11)),)))


def test_pair_commutes():
    ds, grid = small_fixture()
    for p, q in [(Partition.trivial(2), Partition.trivial(2)), (Partition.singletons(2), Partition.trivial(2))]:
        a = fit_pair(ds, ((0.5, 0.25), p), ((0.25, 0.125), q), grid, K1)
        b = fit_pair(ds, ((0.25, 0.125), q), ((0.5, 0.25), p), grid, K1)
        assert np.array_equal(a.materialize(), b.materialize())


def test_pair_single_sample_profile_value():
    ds = Dataset(np.zeros((2, 1)))
    grid = EvaluationGrid((-1.0,), (0.125,), (17,))
    est = fit_pair(ds, ((0.5,), Partition.trivial(1)), ((0.25,), Partition.trivial(1)), grid, K1)
    assert est.tables[0][8] == build_convolution_table(K1, 0.5, 0.25)(np.array([0.0]))[0]


def test_pair_diamond_compositional():
    ds, grid = small_fixture()
    est = fit_pair(ds, ((0.5, 0.25), Partition.singletons(2)), ((0.25, 0.5), Partition.trivial(2)), grid, K1)
    assert est.blocks == ((0,), (1,))
    bank = EstimatorBank(ds, K1, grid)
    full = np.outer(bank.pair_marginal((0,), (0.5,), (0.25,)), bank.pair_marginal((1,), (0.25,), (0.5,)))
    assert np.array_equal(est.materialize(), full)


def test_product_consistency_exhaustive():
    ds, grid = small_fixture(d=3, count=9)
    est = fit(ds, (0.5, 0.25, 1.0), Partition.from_json([[1, 3], [2]]), grid, K1)
    tensor = est.materialize()
    for node in np.ndindex(tensor.shape):
        assert tensor[node] == est.tables[0][node[0], node[2]] * est.tables[1][node[1]]
        assert tensor[node] == est.value_at(node)


def test_chunked_materialize_matches_full():
    ds, grid = small_fixture(count=21)
    est = fit(ds, (0.5, 0.25), Partition.singletons(2), grid, K1)
    full = est.materialize()
    assert np.array_equal(np.concatenate([est.materialize(slice(0, 7)), est.materialize(slice(7, 21))]), full)


@pytest.mark.parametrize("h", [(0.5,), (0.25,), (0.125,)])
def test_mass_near_one(h):
    X = np.random.default_rng(1).normal(size=(200, 1))
    ds = Dataset(X)
    grid = EvaluationGrid.for_data(ds, (1.0,), h[0] / 4)
    est = fit(ds, h, Partition.trivial(1), grid, K3)
    assert 0.98 <= est.marginal_mass()[0] <= 1.02


def test_grid_coverage_error():
    ds = Dataset(np.random.default_rng(0).normal(size=(30, 1)))
    grid = EvaluationGrid((-0.5,), (0.1,), (11,))
    with pytest.raises(GridCoverageError, match="axis 1"):
        fit_marginal(ds, (0,), (0.5,), grid, K1)


def test_translation_equivariance_dyadic_shift():
    rng = np.random.default_rng(3)
    X = np.round(rng.normal(size=(40, 2)) * 64) / 64
    grid = EvaluationGrid((-4.0, -4.0), (1 / 16, 1 / 16), (129, 129))
    a = fit(Dataset(X), (0.5, 0.25), Partition.trivial(2), grid, K1)
    shift = np.array([1.5, -0.75])
    grid2 = EvaluationGrid(tuple(np.array(grid.lo) + shift), grid.step, grid.count)
    b = fit(Dataset(X + shift), (0.5, 0.25), Partition.trivial(2), grid2, K1)
    assert np.array_equal(a.tables[0], b.tables[0])


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_translation_equivariance_property(sx, sy, seed):
    X = np.random.default_rng(seed).normal(size=(25, 2))
    grid = EvaluationGrid.for_data(Dataset(X), (1.0, 1.0), 0.1)
    a = fit(Dataset(X), (0.5, 0.5), Partition.singletons(2), grid, K1)
    shift = np.array([sx, sy])
    grid2 = EvaluationGrid(tuple(np.array(grid.lo) + shift), grid.step, grid.count)
    b = fit(Dataset(X + shift), (0.5, 0.5), Partition.singletons(2), grid2, K1)
    for ta, tb in zip(a.tables, b.tables):
        np.testing.assert_allclose(ta, tb, rtol=0, atol=1e-9)


def test_A_hat_and_volume():
    h = (0.5, 0.25)
    assert partition_volume(h, Partition.trivial(2)) == 0.125
    assert partition_volume(h, Partition.singletons(2)) == 0.25
    assert block_volume(h, (0, 1)) == 0.125
    assert A_hat(1.0, h, Partition.trivial(2), 1000) == pytest.approx(math.sqrt(math.log(1000) / 125))
    assert A_hat(1.0, h, Partition.singletons(2), 1000) < A_hat(1.0, h, Partition.trivial(2), 1000)
    with pytest.raises(EstimatorError):
        A_hat(0.5, h, Partition.trivial(2), 1000)
    with pytest.raises(EstimatorError):
        A_hat(1.0, h, Partition.trivial(2), 2)


def test_empirical_f_n_brute_force():
    X = np.random.default_rng(11).normal(size=(50, 2))
    ds = Dataset(X)
    hs = [(1.0, 1.0), (0.5, 1.0), (1.0, 0.5), (0.5, 0.5)]
    grid = EvaluationGrid.for_data(ds, (1.0, 1.0), 0.3)
    for kernel in (K1, K3):
        bank = EstimatorBank(ds, kernel, grid)
        f_n, f_bar = empirical_f_n(bank, hs)
        ref = 0.0
        for h in hs:
            for block in ((0,), (1,), (0, 1)):
                t = brute_table(X, grid.axes, block, [lambda u, hh=h[j]: np.abs(kernel.scaled(u, hh)) for j in block])
                ref = max(ref, float(t.max()))
        assert f_n == ref
        assert f_bar == max(1.0, 2 * ref) >= 1.0
    assert f_n >= float(bank.marginal((0, 1), (0.5, 0.5)).max())


def test_bandwidth_validation():
    ds, grid = small_fixture()
    with pytest.raises(EstimatorError):
        fit(ds, (0.0, 0.5), Partition.trivial(2), grid, K1)
    with pytest.raises(EstimatorError):
        fit(ds, (1.5, 0.5), Partition.trivial(2), grid, K1)
    with pytest.raises(EstimatorError):
        fit_marginal(ds, (), (), grid, K1)


@given(
    rows=st.lists(
        st.tuples(st.integers(0, 12), st.integers(0, 12), st.floats(-2, 2, allow_nan=False)),
        min_size=1,
        max_size=6,
    )
)
def test_banded_rows_roundtrip(rows):
    from supkde._accumulate import BandedRows

    v = np.zeros((len(rows), 12))
    for i, (a, b, x) in enumerate(rows):
        v[i, min(a, b) : max(a, b)] = x
    v[0, 5] = 0.0  # interior zeros survive inside a window
    r = BandedRows.from_dense(v)
    assert np.array_equal(r.dense(), v)
    assert r.band.shape[1] == int((r.hi - r.lo).max(initial=0))
    assert np.array_equal(r.abs().dense(), np.abs(v))
