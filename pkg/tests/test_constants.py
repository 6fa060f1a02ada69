import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from supkde.constants import (
    DEFAULT_A_FLOOR,
    ConstantsContext,
    ConstantsError,
    big_C,
    big_C_parts,
    big_lambda,
    delta_star,
    gamma_p,
    lambda_and_threshold,
    phi,
    pi_const,
    tau_p,
    theoretical_a_star,
    threshold,
)
from supkde.kernels import build_polynomial_kernel, epanechnikov


def test_delta_star_residual_and_mpmath():
    ds = delta_star()
    assert abs(8 * math.pi**2 * ds * (1 + math.log(ds) ** 2) - 1) < 1e-12
    assert ds == pytest.approx(float(oracles.mp_delta_star()), rel=1e-14)
    assert ds == pytest.approx(1.6472786e-4, rel=1e-6)


def test_phi_value():
    assert phi(1.0) == pytest.approx(6 / math.pi**2)


@pytest.mark.parametrize("s", [1, 2, 3, 5])
def test_big_C_grid_doubling(s):
    a = big_C_parts(s, points=10_000)
    b = big_C_parts(s, points=20_000)
    assert abs(a.total - b.total) / b.total < 1e-3


@pytest.mark.parametrize("s", [1, 2, 4])
def test_big_C_matches_mpmath_value_at_delta_star(s):
    assert big_C(s) == pytest.approx(float(oracles.mp_big_C(s)), rel=1e-10)


def test_terms_decrease_beyond_delta_star():
    ds = oracles.mp_delta_star()
    xs = [ds * mp.mpf(1 + 0.5 * k) for k in range(20)] + [mp.mpf(10) ** k for k in range(-3, 3)]
    for s in (1, 3):
        c1 = [oracles.mp_c1_term(s, x) for x in xs]
        assert max(c1) == c1[0]
        c2 = [oracles.mp_c2_term(s, x) for x in xs]
        assert max(c2) == c2[0]


def test_big_C_range():
    with pytest.raises(ConstantsError):
        big_C_parts(0)
    with pytest.raises(ConstantsError):
        big_C_parts(13)


def test_random_triples_match_mpmath():
    rng = np.random.default_rng(20261016)
    lip = epanechnikov().lipschitz_const
    for _ in range(12):
        p = float(rng.uniform(1, 6))
        s = int(rng.integers(1, 6))
        a = float(rng.uniform(0.2, 5))
        for ours, ref in (
            (tau_p(p, s, a), oracles.mp_tau(p, s, a)),
            (gamma_p(p, s, a, lip), oracles.mp_gamma(p, s, a, lip)),
            (pi_const(s, a, lip), oracles.mp_pi(s, a, lip)),
        ):
            assert abs(ours - float(ref)) <= 1e-12 * abs(float(ref))


def test_lambda_and_a_star_theoretical():
    k = epanechnikov()
    ctx = ConstantsContext.for_kernel(k, 2, mode="theoretical")
    lam_big = big_lambda(ctx)
    assert lam_big == pytest.approx(gamma_p(2.0, 2, k.sup_norm, k.lipschitz_const))
    lam, a = lambda_and_threshold(ctx, 3.0)
    assert lam == pytest.approx(lam_big * 2 * 3.0 ** 2)
    assert a == pytest.approx((2 * lam_big) ** -2)
    assert theoretical_a_star(ctx) == a == threshold(ctx)
    assert a < 1e-20


def test_calibrated_mode():
    ctx = ConstantsContext.for_kernel(epanechnikov(), 3, kappa=0.7)
    assert lambda_and_threshold(ctx, 5.0) == (0.7, DEFAULT_A_FLOOR)
    ctx = ConstantsContext.for_kernel(epanechnikov(), 3, kappa=0.7, a_floor=0.1)
    assert threshold(ctx) == 0.1


def test_context_validation():
    with pytest.raises(ConstantsError):
        ConstantsContext(2, 1.5, 6.0, mode="bogus")
    with pytest.raises(ConstantsError):
        ConstantsContext(2, 1.5, 6.0, q=0.5)
    with pytest.raises(ConstantsError):
        ConstantsContext(2, 1.5, 6.0, kappa=0.0)
    with pytest.raises(ConstantsError):
        lambda_and_threshold(ConstantsContext(2, 1.5, 6.0), 0.5)


def test_gamma_increasing_in_s_for_default_kernels():
    for b in (1, 3):
        k = build_polynomial_kernel(b)
        vals = [gamma_p(2.0, s, k.sup_norm, k.lipschitz_const) for s in range(1, 7)]
        assert all(y > x for x, y in zip(vals, vals[1:]))


@given(st.floats(1, 10), st.integers(1, 6), st.floats(0.05, 10))
def test_gamma_dominates_tau_scale(p, s, a):
    # gamma >= (16e/3) * 8a * tau, directly from its second term
    g = gamma_p(p, s, a, 6.0)
    assert g >= (16 * math.e / 3) * 8 * a * tau_p(p, s, a) * (1 - 1e-12)


@given(st.floats(1, 10), st.integers(1, 6), st.floats(0.05, 10), st.floats(0.05, 10))
def test_tau_monotone_in_abs_log_a(p, s, a, b):
    if abs(math.log(a)) <= abs(math.log(b)):
        assert tau_p(p, s, a) <= tau_p(p, s, b)
