import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.special import roots_legendre

import supkde.densities as dens
from supkde.densities import (
    BUMP_MIN,
    DensityError,
    block_gaussian,
    bump_profile,
    correlated_gaussian,
    custom_product,
    density_from_config,
    gaussian_with_bumps,
    parse_density_spec,
    product_gaussian,
    truncated_gaussian,
)
from supkde.partitions import Partition


def gl_grid(lo, hi, panels=64, order=16):
    """Tensor composite Gauss-Legendre nodes and weights on a box."""
    x, w = roots_legendre(order)
    nodes, weights = [], []
    for a, b in zip(lo, hi):
        e = np.linspace(a, b, panels + 1)
        mid, half = 0.5 * (e[1:] + e[:-1]), 0.5 * (e[1:] - e[:-1])
        nodes.append((mid[:, None] + half[:, None] * x).ravel())
        weights.append((half[:, None] * w).ravel())
    mesh = np.stack(np.meshgrid(*nodes, indexing="ij"), -1).reshape(-1, len(lo))
    wt = np.prod(np.stack(np.meshgrid(*weights, indexing="ij"), -1).reshape(-1, len(lo)), axis=1)
    return mesh, wt


def bumpy2():
    return gaussian_with_bumps(2, 0.25, [0, 1], 0.6, 0.2, [[0.0, 0.0], [0.25, 0.0]])


DENSITIES = {
    "product": lambda: product_gaussian(2, [0.25, 0.4], [0.1, -0.2]),
    "correlated": lambda: correlated_gaussian(2, 0.25, 0.7),
    "block3": lambda: block_gaussian([((0, 2), [0, 0], [[0.1, 0.03], [0.03, 0.05]]), ((1,), [0.5], [[0.2]])], 3),
    "bumps": bumpy2,
    "truncated": lambda: truncated_gaussian([0.1, 0.0], [[0.09, 0.02], [0.02, 0.04]], [-0.3, -0.4], [0.5, 0.3]),
    "custom": lambda: custom_product([stats.beta(2, 3), stats.norm(0, 0.3)]),
}


@pytest.mark.parametrize("name", sorted(DENSITIES))
def test_integrates_to_one(name):
    f = DENSITIES[name]()
    lo, hi = f.box()
    if name == "custom":
        lo[0], hi[0] = 0.0, 1.0
    panels = 24 if f.d == 3 else 96
    mesh, wt = gl_grid(lo, hi, panels=panels, order=12)
    assert f.pdf(mesh) @ wt == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("name", ["product", "block3", "bumps", "custom"])
def test_factorizes_over_true_partition(name):
    f = DENSITIES[name]()
    rng = np.random.default_rng(0)
    lo, hi = f.box(3.0)
    x = rng.uniform(lo, hi, size=(1000, f.d))
    if name == "custom":
        x[:, 0] = rng.uniform(0, 1, 1000)
    prod = np.ones(1000)
    for b in f.P_true.blocks:
        prod *= f.marginal_pdf(b, x[:, list(b)])
    np.testing.assert_allclose(f.pdf(x), prod, rtol=1e-12, atol=0)


def test_correlated_does_not_factorize():
    f = correlated_gaussian(2, 0.25, 0.7)
    assert f.P_true == Partition.trivial(2)
    x = np.random.default_rng(1).normal(scale=0.25, size=(1000, 2))
    prod = f.marginal_pdf((0,), x[:, :1]) * f.marginal_pdf((1,), x[:, 1:])
    assert np.max(np.abs(f.pdf(x) - prod)) > 0.1


def test_bump_profile_shape():
    assert integrate.quad(bump_profile, -0.5, 0.5, epsabs=1e-14)[0] == pytest.approx(0, abs=1e-13)
    t = np.linspace(-0.6, 0.6, 200_001)
    g = bump_profile(t)
    assert g.max() == pytest.approx(1.0) and bump_profile(0.0) == 1.0
    assert g.min() == pytest.approx(BUMP_MIN, abs=1e-9)
    assert np.all(g[np.abs(t) >= 0.5] == 0)
    # C^2: second differences stay bounded through the support edge
    d2 = np.diff(g, 2) / (t[1] - t[0]) ** 2
    assert np.max(np.abs(np.diff(d2))) < 1.0


@given(
    c=st.lists(st.floats(-0.6, 0.6), min_size=4, max_size=4),
    s=st.floats(0.05, 0.3),
    x=st.lists(st.floats(-1, 1), min_size=2, max_size=2),
)
def test_bumps_have_disjoint_support(c, s, x):
    centers = [c[:2], c[2:]]
    try:
        f = gaussian_with_bumps(2, 0.5, [0, 1], 0.01, s, centers)
    except DensityError as exc:
        assert "overlap" in str(exc)
        return
    bf = f.factors[0]
    x = np.asarray(x)
    g = [np.prod(bump_profile((x - np.asarray(cc)) / bf.scales)) for cc in centers]
    assert g[0] * g[1] == 0.0


def test_bump_marginals_are_gaussian():
    f = bumpy2()
    xs = np.linspace(-0.6, 0.6, 13)
    u, w = gl_grid([-2.0], [2.0], panels=128, order=12)
    for j in (0, 1):
        num = []
        for xi in xs:
            pts = np.empty((len(w), 2))
            pts[:, j] = xi
            pts[:, 1 - j] = u[:, 0]
            num.append(f.pdf(pts) @ w)
        np.testing.assert_allclose(num, f.marginal_pdf((j,), xs), atol=1e-10)
        np.testing.assert_allclose(f.marginal_pdf((j,), xs), stats.norm(0, 0.25).pdf(xs), rtol=1e-12)


def test_bump_amplitude_guard():
    with pytest.raises(DensityError, match="negative"):
        gaussian_with_bumps(1, 0.25, [0], 5.0, 0.2, [[0.0]])
    with pytest.raises(DensityError, match="overlap"):
        gaussian_with_bumps(1, 0.25, [0], 0.1, 0.2, [[0.0], [0.1]])


def test_rejection_envelope_dominates():
    f = gaussian_with_bumps(1, 0.25, [0], 0.7, 0.2, [[0.0], [0.3]])
    bf = f.factors[0]
    x = np.linspace(-1, 1, 20001)[:, None]
    ratio = bf.pdf(x) / (bf._envelope * bf._base.pdf(x))
    assert ratio.max() <= 1.0


def test_rejection_sampler_matches_density():
    f = gaussian_with_bumps(1, 0.25, [0], 0.7, 0.2, [[0.0], [0.3]])
    X = f.sample(np.random.default_rng(2), 20000)[:, 0]
    cdf = lambda t: integrate.quad(lambda s: float(f.pdf(np.array([s]))[0]), -2.5, t, points=[0, 0.3], limit=200)[0]  # noqa: E731
    grid = np.linspace(-0.8, 0.8, 33)
    emp = np.searchsorted(np.sort(X), grid) / len(X)
    ks = max(abs(emp[i] - cdf(t)) for i, t in enumerate(grid))
    assert ks < 1.63 / np.sqrt(len(X))


def test_low_efficiency_is_refused(monkeypatch):
    f = gaussian_with_bumps(1, 0.25, [0], 1.5, 0.2, [[0.0]])
    monkeypatch.setattr(dens, "REJECTION_MIN_EFFICIENCY", 0.99)
    with pytest.raises(DensityError, match="efficiency"):
        f.sample(np.random.default_rng(0), 10)


def test_truncated_marginal_integrates_to_one():
    f = DENSITIES["truncated"]()
    lo, hi = f.box()
    for j in (0, 1):
        u, w = gl_grid([lo[j]], [hi[j]], panels=16, order=16)
        assert f.marginal_pdf((j,), u) @ w == pytest.approx(1.0, abs=1e-8)
    X = f.sample(np.random.default_rng(3), 500)
    assert np.all((X >= lo) & (X <= hi))


def test_samples_are_reproducible():
    f = bumpy2()
    a = f.sample(np.random.default_rng(9), 100)
    b = f.sample(np.random.default_rng(9), 100)
    assert np.array_equal(a, b)


def test_config_parsing():
    cfg = parse_density_spec("gaussian-with-bumps:d=2,block=1+2,amplitude=0.5,centers=0+0/0.3+0")
    assert cfg == {"kind": "gaussian-with-bumps", "d": 2, "block": [1, 2], "amplitude": 0.5, "centers": [[0, 0], [0.3, 0]]}
    f = density_from_config(cfg)
    assert f.P_true == Partition.trivial(2)
    g = density_from_config(parse_density_spec("product-gaussian:d=3,sigma=0.5"))
    assert g.P_true == Partition.singletons(3)
    with pytest.raises(DensityError, match="unknown parameters"):
        density_from_config({"kind": "product-gaussian", "d": 2, "sigmaa": 1})
    with pytest.raises(DensityError, match="missing parameter"):
        density_from_config({"kind": "product-gaussian"})
    with pytest.raises(DensityError, match="unknown density kind"):
        density_from_config({"kind": "laplace"})
    with pytest.raises(DensityError, match="key=value"):
        parse_density_spec("product-gaussian:d")
