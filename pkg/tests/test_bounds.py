import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import optimize

from treatrisk import (
    InvalidInput, corollary_slack_bounds, dte_cvar_binary, empirical_cvar, interquantile_average,
    lower_bound_one_sided_range, lower_bound_two_sided_range, lower_bound_variance,
    upper_bound_cate_cvar, variance_from_outcomes,
)
from treatrisk.bounds import (
    maximize_variance_bound, mixture_sample, variance_bound_bracket, variance_bound_objective,
)

from conftest import tail_sup

taus = arrays(float, st.integers(1, 40), elements=st.floats(-50, 50, allow_nan=False))
levels = st.floats(0.01, 1.0)
widths = st.floats(0.0, 20.0)


def _objective(tau, s2, alpha, beta):
    # direct transcription, evaluated without the stable rewrite
    return beta + np.mean(tau - beta - np.sqrt((tau - beta) ** 2 + s2)) / (2 * alpha)


def test_two_sided_range_hand_values():
    tau = np.zeros(4)
    assert lower_bound_two_sided_range(tau, 1.0, 0.5) == pytest.approx(-1.0)
    assert lower_bound_two_sided_range(tau, 1.0, 0.75) == pytest.approx(-1.0 / 3.0)
    assert lower_bound_two_sided_range(tau, 1.0, 1.0) == pytest.approx(0.0)


def test_zero_width_bounds_equal_upper(rng):
    tau = rng.normal(size=50)
    up = upper_bound_cate_cvar(tau, 0.2)
    assert lower_bound_two_sided_range(tau, 0.0, 0.2) == pytest.approx(up, abs=1e-12)
    assert lower_bound_one_sided_range(tau, 0.0, 0.2) == pytest.approx(up, abs=1e-12)
    assert lower_bound_variance(tau, 0.0, 0.2) == pytest.approx(up, abs=1e-8)


def test_mixture_matches_brute_force(rng):
    tau = rng.normal(size=30)
    z, w = mixture_sample(tau, 0.7)
    for alpha in (0.05, 0.3, 0.9):
        assert lower_bound_two_sided_range(tau, 0.7, alpha) == pytest.approx(
            tail_sup(z, alpha, w), abs=1e-10)


@given(taus, widths, levels)
def test_bound_chain(tau, b, alpha):
    one = lower_bound_one_sided_range(tau, b, alpha)
    two = lower_bound_two_sided_range(tau, b, alpha)
    up = upper_bound_cate_cvar(tau, alpha)
    var = lower_bound_variance(tau, b * b, alpha)
    tol = 1e-9 * (1 + np.abs(tau).max() + b)
    assert one <= two + tol
    assert two <= up + tol
    assert up <= tau.mean() + tol
    assert var <= two + tol


@given(taus, st.floats(0.0, 25.0), st.floats(0.0, 25.0), st.floats(0.01, 0.99))
def test_variance_bound_decreases_in_sigma2(tau, s1, s2, alpha):
    lo, hi = sorted((s1, s2))
    tol = 1e-8 * (1 + np.abs(tau).max() + hi)
    assert lower_bound_variance(tau, hi, alpha) <= lower_bound_variance(tau, lo, alpha) + tol


@given(taus, st.floats(0.0, 25.0), st.floats(0.01, 0.99))
def test_variance_bound_within_sd_slack_of_upper(tau, s2, alpha):
    slack = corollary_slack_bounds(np.full(tau.size, s2), alpha).variance
    tol = 1e-8 * (1 + np.abs(tau).max() + s2)
    assert lower_bound_variance(tau, s2, alpha) >= upper_bound_cate_cvar(tau, alpha) - slack - tol


@pytest.mark.parametrize("alpha", [0.001, 0.02, 0.3, 0.5, 0.97, 0.999])
def test_golden_agrees_with_scipy(rng, alpha):
    tau = rng.normal(size=40)
    s2 = rng.uniform(0, 3, size=40)
    beta, val = maximize_variance_bound(tau, s2, alpha)
    lo, hi = variance_bound_bracket(tau, s2, alpha)
    assert lo < beta < hi
    res = optimize.minimize_scalar(lambda b: -_objective(tau, s2, alpha, b),
                                   bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12})
    assert val == pytest.approx(-res.fun, abs=1e-9)
    assert variance_bound_objective(tau, s2, alpha, beta) == pytest.approx(val, abs=1e-14)


def test_variance_bound_at_one_is_mean(rng):
    tau = rng.normal(size=20)
    beta, val = maximize_variance_bound(tau, 1.0, 1.0)
    assert beta == np.inf
    assert val == pytest.approx(tau.mean())


def test_variance_bound_rejects_bad_sigma2():
    with pytest.raises(InvalidInput):
        lower_bound_variance([0.0, 1.0], [1.0, -1.0], 0.5)
    with pytest.raises(InvalidInput):
        lower_bound_variance([0.0, 1.0], [1.0, np.nan], 0.5)
    with pytest.raises(InvalidInput):
        lower_bound_variance([0.0, 1.0], [1.0, 1.0, 1.0], 0.5)


def test_variance_from_outcomes():
    assert variance_from_outcomes(1.0, 1.0, -1.0) == pytest.approx(4.0)
    assert variance_from_outcomes(1.0, 1.0, 0.0) == pytest.approx(2.0)
    assert variance_from_outcomes(1.0, 1.0, 1.0) == 0.0
    assert variance_from_outcomes(4.0, 1.0, 1.0) == pytest.approx(1.0)
    np.testing.assert_allclose(variance_from_outcomes([1.0, 4.0], [1.0, 1.0], 0.0), [2.0, 5.0])
    with pytest.raises(InvalidInput):
        variance_from_outcomes(1.0, 1.0, 1.5)
    with pytest.raises(InvalidInput):
        variance_from_outcomes(-1.0, 1.0, 0.0)


def test_slack_bounds_arithmetic():
    s = corollary_slack_bounds(np.full(5, 4.0), 0.5, rmse0=0.3, rmse1=0.3,
                               var0=np.full(5, 1.0), var1=np.full(5, 9.0))
    assert s.variance == pytest.approx(2.0)
    assert s.outcome_sd == pytest.approx(4.0)
    assert s.rmse == pytest.approx(0.6)
    assert corollary_slack_bounds(np.ones(3), 0.1, rmse0=0.3, rmse1=0.3).rmse == pytest.approx(3.0)
    part = corollary_slack_bounds(np.ones(3), 0.5)
    assert part.outcome_sd is None and part.rmse is None
    with pytest.raises(InvalidInput):
        corollary_slack_bounds(np.ones(3), 0.5, rmse0=0.3)


@given(arrays(float, st.integers(1, 30), elements=st.floats(0, 10)),
       arrays(float, st.integers(1, 30), elements=st.floats(0, 10)), levels)
def test_outcome_sd_slack_dominates_variance_slack(v0, v1, alpha):
    n = min(v0.size, v1.size)
    v0, v1 = v0[:n], v1[:n]
    s2 = variance_from_outcomes(v0, v1, -1.0)
    s = corollary_slack_bounds(s2, alpha, var0=v0, var1=v1)
    assert s.variance <= s.outcome_sd + 1e-9


def test_interquantile_average_middle_half():
    tau = np.arange(1.0, 101.0)
    assert interquantile_average(tau, 0.25, 0.75) == pytest.approx(np.mean(tau[25:75]))
    assert interquantile_average(tau, 0.5, 1.0) == pytest.approx(np.mean(tau[50:]))
    with pytest.raises(InvalidInput):
        interquantile_average(tau, 0.5, 0.5)


@given(taus, st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_interquantile_between_quantile_levels(tau, a1, a2):
    lo, hi = sorted((a1, a2))
    if hi - lo < 1e-3:
        return
    val = interquantile_average(tau, lo, hi)
    tol = 1e-6 * (1 + np.abs(tau).max())
    assert empirical_cvar(tau, lo) - tol <= val <= tau.max() + tol


def test_dte_binary_equal_marginals_is_zero():
    for p in (0.0, 0.2, 0.5, 1.0):
        for alpha in np.linspace(0.01, 1.0, 25):
            assert dte_cvar_binary(p, p, alpha) == 0.0


def test_dte_binary_hand_values():
    # p1 = 0.3: tail mass above 1 - alpha only once alpha > 0.7
    assert dte_cvar_binary(0.2, 0.3, 0.75) == pytest.approx(0.05 / 0.75)
    assert dte_cvar_binary(0.2, 0.3, 0.9) == pytest.approx((0.2 - 0.1) / 0.9)
    assert dte_cvar_binary(0.2, 0.3, 0.5) == 0.0
    with pytest.raises(InvalidInput):
        dte_cvar_binary(1.2, 0.3, 0.5)
