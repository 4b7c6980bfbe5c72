import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from helpers import central_difference, hinge_arguments, relative_error, smooth_coordinates, tape_gradient, violating_surface
from voldiff import arbitrage as arb
from voldiff import gridmath as gm
from voldiff.dataprep import parametric_surface
from voldiff.errors import DomainError
from voldiff.grid import DEFAULT_GRID

ZERO_RATE = arb.PricingContext(rate=0.0)
M = DEFAULT_GRID.m
TAU = DEFAULT_GRID.tau


def mp_call(m, tau, sigma, r=0.0, q=0.0):
    """Black-Scholes relative call at 50-digit precision."""
    mpmath.mp.dps = 50
    m, tau, sigma, r, q = map(mpmath.mpf, (m, tau, sigma, r, q))
    std = sigma * mpmath.sqrt(tau)
    d1 = (-mpmath.log(m) + (r - q + sigma**2 / 2) * tau) / std
    d2 = d1 - std
    return float(mpmath.exp(-q * tau) * mpmath.ncdf(d1) - m * mpmath.exp(-r * tau) * mpmath.ncdf(d2))


# ---------------------------------------------------------------- pricing


def test_atm_call_matches_high_precision_oracle():
    c = arb.bs_relative_call(1.0, 1.0, 0.2, ZERO_RATE)
    assert abs(c - mp_call(1.0, 1.0, 0.2)) < 1e-14
    assert abs(c - 0.0796556745540580) < 1e-14  # 2 N(0.1) - 1


@given(
    st.sampled_from(list(M)),
    st.sampled_from(list(TAU)),
    st.floats(0.02, 1.5),
    st.floats(-0.02, 0.08),
)
def test_call_price_matches_mpmath(m, tau, sigma, r):
    c = arb.bs_relative_call(m, tau, sigma, arb.PricingContext(rate=r))
    assert abs(c - mp_call(m, tau, sigma, r)) < 1e-13


def test_vanishing_vol_gives_intrinsic_value():
    assert arb.bs_relative_call(0.8, 1.0, 1e-15, ZERO_RATE) == pytest.approx(0.2, abs=1e-15)
    assert arb.bs_relative_call(1.2, 1.0, 1e-15, ZERO_RATE) == 0.0
    assert arb.bs_relative_call(0.8, 1.0, 1e-6, ZERO_RATE) == pytest.approx(0.2, abs=1e-12)


def test_call_price_decreases_in_moneyness():
    for tau in TAU:
        prices = [arb.bs_relative_call(m, tau, 0.3) for m in M]
        assert all(a > b for a, b in zip(prices, prices[1:]))


def test_nonpositive_inputs_raise():
    for args in [(0.0, 1.0, 0.2), (1.0, 0.0, 0.2), (1.0, 1.0, 0.0), (1.0, 1.0, -0.1)]:
        with pytest.raises(DomainError):
            arb.bs_relative_call(*args)


def test_vectorized_prices_match_scalar(rng):
    iv = rng.uniform(0.05, 1.0, (9, 9))
    c = arb.relative_call_surface(iv)
    ref = [[arb.bs_relative_call(M[i], TAU[j], iv[i, j]) for j in range(9)] for i in range(9)]
    np.testing.assert_allclose(c, ref, rtol=0, atol=1e-15)


def test_prices_lie_in_unit_interval(rng):
    c = arb.relative_call_surface(rng.uniform(0.05, 1.0, (20, 9, 9)))
    assert np.all((c >= 0) & (c < 1))
    # strictly positive wherever the out-of-the-money tail does not underflow
    assert np.all(c[:, :, 3:] > 0)


# --------------------------------------------------------------- penalties


def test_flat_surface_is_arbitrage_free():
    bd = arb.penalty_loops(np.full((9, 9), 0.2))
    assert max(bd.values()) < 1e-12
    conv = arb.penalty_conv(np.full((9, 9), 0.2))
    assert max(conv.values()) < 1e-12


def test_flat_surface_penalty_gradient_is_zero():
    (g,) = tape_gradient(lambda iv: arb.penalty_conv(iv).total, np.full((9, 9), 0.2))
    # hinges only see rounding-level arguments on a flat surface
    assert np.max(np.abs(g)) < 1e-12


def test_lowered_call_price_gives_calendar_penalty():
    c = arb.relative_call_surface(np.full((9, 9), 0.25))
    i, j, delta = 4, 3, 1e-2
    # push c[i, j+1] below c[i, j] by delta
    c[i, j + 1] = c[i, j] - delta
    bd = arb.penalty_loops_prices(c)
    assert bd.p1 == pytest.approx(delta / (TAU[j + 1] - TAU[j]), rel=1e-12)
    conv = arb.penalty_conv_prices(c)
    np.testing.assert_allclose(conv.values(), bd.values(), atol=1e-10)


def test_prices_increasing_in_moneyness_give_summed_slopes():
    c = np.tile((0.05 + 0.1 * M)[:, None], (1, 9)) + 0.01 * TAU[None, :]
    bd = arb.penalty_loops_prices(c)
    # each of the 8 moneyness gaps has slope 0.01 / 0.1 in every column
    assert bd.p2 == pytest.approx(8 * 9 * 0.1, rel=1e-12)
    assert bd.p1 == 0.0
    assert bd.p3 == pytest.approx(0.0, abs=1e-9)


def test_convex_violation_shows_up_in_butterfly():
    c = arb.relative_call_surface(np.full((9, 9), 0.25))
    c[4, 6] += 0.02  # a bump makes the price concave around m=1.0
    bd = arb.penalty_loops_prices(c)
    s_left = (c[4, 6] - c[3, 6]) / (M[4] - M[3])
    s_right = (c[5, 6] - c[4, 6]) / (M[5] - M[4])
    assert s_left - s_right > 0
    # the neighbouring rows become more convex, so this is the only butterfly violation
    assert bd.p3 == pytest.approx(s_left - s_right, rel=1e-12)


def test_conv_matches_loops_on_random_surfaces():
    r = np.random.default_rng(5)
    ivs = r.uniform(0.05, 1.0, (100, 9, 9))
    conv = arb.penalty_conv(ivs)
    for k in range(100):
        ref = arb.penalty_loops(ivs[k])
        got = (conv.p1.data[k], conv.p2.data[k], conv.p3.data[k], conv.total.data[k])
        assert np.max(np.abs(np.array(got) - np.array(ref.values()))) < 1e-10


@given(hnp.arrays(np.float64, (9, 9), elements=st.floats(0.05, 1.0)))
def test_conv_matches_loops_property(iv):
    a = np.array(arb.penalty_conv(iv).values())
    b = np.array(arb.penalty_loops(iv).values())
    assert np.max(np.abs(a - b)) < 1e-10


@given(hnp.arrays(np.float64, (9, 9), elements=st.floats(0.0, 1.0)))
def test_penalties_are_homogeneous_in_prices(c):
    one = np.array(arb.penalty_loops_prices(c).values())
    two = np.array(arb.penalty_loops_prices(2.0 * c).values())
    np.testing.assert_allclose(two, 2.0 * one, rtol=1e-12, atol=1e-12)


@given(st.floats(0.05, 0.8), st.floats(0.0, 0.5))
def test_shifted_flat_surface_keeps_moneyness_penalties_zero(level, shift):
    bd = arb.penalty_loops(np.full((9, 9), level + shift))
    assert bd.p2 < 1e-12 and bd.p3 < 1e-12


@given(st.floats(-2.0, -1.0), st.floats(-0.2, 0.3), st.floats(-0.8, -0.2), st.floats(0.3, 1.2))
def test_parametric_family_is_arbitrage_free(log_level, term, skew, curv):
    surface = parametric_surface(math.exp(log_level), term, skew, curv)
    assert arb.penalty_loops(surface).values()[3] < 1e-12


def test_nonpositive_iv_raises():
    iv = np.full((9, 9), 0.2)
    iv[2, 3] = 0.0
    with pytest.raises(DomainError):
        arb.penalty_loops(iv)
    with pytest.raises(DomainError):
        arb.penalty_conv(iv)


@pytest.mark.parametrize("seed", [1, 2, 3, 4, 6])
def test_penalty_gradient_matches_finite_differences(seed):
    iv = violating_surface(np.random.default_rng(seed))
    assert arb.penalty_loops(iv).values()[3] > 0
    (g,) = tape_gradient(lambda x: arb.penalty_conv(x).total, iv)
    # probes that move a hinge across zero are not differentiable there
    coords = smooth_coordinates(hinge_arguments, iv)
    assert len(coords) > 60
    fd = central_difference(lambda x: float(arb.penalty_conv(x).total.data), iv, coords=coords)
    assert relative_error(g.ravel()[coords], fd.ravel()[coords]).max() < 1e-4


def test_batched_penalty_returns_one_value_per_surface(rng):
    ivs = rng.uniform(0.05, 1.0, (3, 9, 9))
    out = arb.penalty_conv(ivs)
    assert out.total.shape == (3,)
    assert arb.total_penalty(ivs).shape == (3,)
    assert isinstance(arb.penalty_conv(ivs[0]).total, gm.Array)


def test_breakdown_total_is_sum_of_parts(rng):
    bd = arb.penalty_loops(rng.uniform(0.05, 1.0, (9, 9)))
    p1, p2, p3, total = bd.values()
    assert total == p1 + p2 + p3
    assert min(p1, p2, p3) >= 0.0


def test_kernels_are_integer_valued():
    for k in (arb.CALENDAR_KERNEL, arb.MONEYNESS_DIFF_KERNEL, arb.SLOPE_DROP_KERNEL):
        assert np.array_equal(k, np.round(k))


def test_pricing_context_rejects_non_finite():
    with pytest.raises(ValueError):
        arb.PricingContext(rate=float("nan"))
