import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fnac.risk import (
    RiskEstimates, RiskSpec, apply, estimate, estimate_J, estimate_rho, transform_mean_volatility, transform_rcvar,
)

rewards_st = st.lists(st.floats(-1e-2, 1e-2, allow_nan=False), min_size=1, max_size=60)


def test_rho_examples():
    assert estimate_rho([0.7] * 5, 0.3) == 0.7
    assert estimate_rho([1, 2, 3, 4], 0.5) == 2.5
    assert estimate_rho([3, -1, 8, 2], 1.0) == 8


def test_rho_matches_order_statistic_interpolation():
    # independent oracle: h = (n-1)*alpha, interpolate sorted values by hand
    r = np.array([5.0, -2.0, 0.5, 9.0, 1.0, 3.0, -7.0])
    alpha = 0.35
    s = sorted(r)
    h = (len(s) - 1) * alpha
    lo = int(np.floor(h))
    expected = s[lo] + (h - lo) * (s[lo + 1] - s[lo])
    assert estimate_rho(r, alpha) == pytest.approx(expected, abs=1e-15)


def test_empty_and_bad_alpha():
    with pytest.raises(ValueError):
        estimate_rho([], 0.5)
    with pytest.raises(ValueError):
        estimate_J([])
    with pytest.raises(ValueError):
        estimate_rho([1.0], 0.0)
    with pytest.raises(ValueError):
        transform_rcvar(1.0, 0.0, 1.5)
    with pytest.raises(ValueError):
        transform_mean_volatility(1.0, 0.0, -1.0)


def test_rcvar_examples():
    assert transform_rcvar(3.0, 2.0, 0.5) == 2.0
    assert transform_rcvar(2.0, 2.0, 0.5) == 2.0
    assert transform_rcvar(1.0, 2.0, 0.5) == 0.0  # rho - 2
    assert transform_rcvar(-4.0, 2.0, 1.0) == -4.0


def test_mean_volatility_examples():
    assert transform_mean_volatility(0.37, 0.1, 0.0) == 0.37
    assert transform_mean_volatility(0.25, 0.25, 5.0) == 0.25
    assert transform_mean_volatility(0.002, 0.001, 1e-3) == pytest.approx(0.002 - 1e-9, abs=1e-18)


def test_J_examples():
    assert estimate_J([1, -1]) == 0
    assert estimate_J([0.4] * 3) == pytest.approx(0.4)
    assert estimate_J([0.1, 0.2, 0.3]) == pytest.approx(0.2, abs=1e-16)


@given(rewards_st, st.floats(-1e-2, 1e-2), st.floats(0.01, 1.0))
def test_rcvar_capped_and_monotone(r, rho, alpha):
    r = np.sort(np.asarray(r))
    out = transform_rcvar(r, rho, alpha)
    assert np.all(out <= rho)
    assert np.all(np.diff(out) >= 0)


@given(rewards_st, st.floats(-1e-2, 1e-2), st.floats(0, 1e3))
def test_mean_volatility_penalises_and_monotone_below_vertex(r, J, lam):
    r = np.asarray(r)
    out = transform_mean_volatility(r, J, lam)
    assert np.all(out <= r)
    if lam > 0:
        below = np.sort(r[r <= J + 1 / (2 * lam)])
        assert np.all(np.diff(transform_mean_volatility(below, J, lam)) >= -1e-18)


@given(rewards_st)
def test_alpha_one_at_max_is_identity_on_mean(r):
    r = np.asarray(r)
    out = transform_rcvar(r, estimate_rho(r, 1.0), 1.0)
    assert np.mean(out) == pytest.approx(np.mean(r), abs=1e-15)


@settings(max_examples=25)
@given(rewards_st, st.integers(0, 2**31 - 1))
def test_transforms_commute_with_shuffling(r, seed):
    r = np.asarray(r)
    perm = np.random.default_rng(seed).permutation(len(r))
    for spec in (RiskSpec("rcvar", alpha=0.2), RiskSpec("mean_volatility", lam=2.0, scale=100.0)):
        est = estimate(spec, r)
        other = estimate(spec, r[perm])
        np.testing.assert_allclose([other.rho, other.J], [est.rho, est.J], rtol=1e-12, atol=1e-15)
        np.testing.assert_array_equal(apply(spec, r, est)[perm], apply(spec, r[perm], est))


def test_neutral_is_identity():
    r = np.array([0.1, -0.3, 0.2])
    spec = RiskSpec()
    assert not spec.active
    np.testing.assert_array_equal(apply(spec, r, estimate(spec, r)), r)


def test_scale_units():
    # penalty is expressed in scaled units: r*s - lam*(r*s - J)^2, divided back by s
    r = np.array([1e-4, -2e-4, 3e-4])
    spec = RiskSpec("mean_volatility", lam=1e-3, scale=1e5)
    est = estimate(spec, r)
    assert est.J == pytest.approx(np.mean(r) * 1e5)
    expected = (r * 1e5 - 1e-3 * (r * 1e5 - est.J) ** 2) / 1e5
    np.testing.assert_allclose(apply(spec, r, est), expected, rtol=1e-14)


def test_fixed_rho():
    spec = RiskSpec("rcvar", alpha=0.5, rho_mode="fixed", rho=-3.0, scale=10.0)
    est = estimate(spec, [1.0, 2.0])
    assert est.rho == -3.0
    np.testing.assert_allclose(apply(spec, np.array([-0.4, 0.5]), est), [(-3.0 - 2 * 1.0) / 10, -0.3])


def test_spec_validation():
    for kw in ({"kind": "var"}, {"alpha": 0.0}, {"lam": -1.0}, {"scale": 0.0}, {"rho_mode": "x"}):
        with pytest.raises(ValueError):
            RiskSpec(**kw)
    assert RiskEstimates().rho != RiskEstimates().rho  # NaN placeholders
