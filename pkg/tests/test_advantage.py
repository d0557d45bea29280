import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fnac import actor
from fnac.actor import CONTINUOUS, DISCRETE, PolicyArch, PolicyParameters, log_prob, zero_params
from fnac.advantage import (
    CompatibleDesign, build_design, empirical_fisher, solve, td_residuals, visitation_weights,
)
from fnac.critic import BoostedEnsemble, CriticConfig, Tree, fit_value
from fnac.env import EnvConfig, TransitionBatch, rollout
from fnac.marketdata import MINUTE_IDX, N_FEATURES


def gauss_solve(A, b):
    """Textbook Gaussian elimination with partial pivoting, pure Python."""
    n = len(b)
    M = [list(map(float, A[i])) + [float(b[i])] for i in range(n)]
    for c in range(n):
        piv = max(range(c, n), key=lambda r: abs(M[r][c]))
        M[c], M[piv] = M[piv], M[c]
        for r in range(c + 1, n):
            f = M[r][c] / M[c][c]
            for k in range(c, n + 1):
                M[r][k] -= f * M[c][k]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        x[r] = (M[r][n] - sum(M[r][k] * x[k] for k in range(r + 1, n))) / M[r][r]
    return np.array(x)


def random_design(seed, n=20, p=5):
    rng = np.random.default_rng(seed)
    return CompatibleDesign(rng.normal(size=(n, p)), rng.normal(size=n), rng.uniform(0.5, 2.0, n))


def test_identity_design():
    c = np.array([0.3, -1.2, 2.0, 0.0])
    g = solve(CompatibleDesign(np.eye(4), c, np.ones(4)), 0.0)
    np.testing.assert_allclose(g.w, c, atol=1e-15)
    assert not g.fallback


def test_matches_gaussian_elimination():
    d = random_design(0)
    M, b = 0.0, 0.0
    # accumulate sums in plain loops for an independent normal-equation build
    P = d.n_params
    M = [[sum(d.weights[i] * d.rows[i, r] * d.rows[i, c] for i in range(20)) + (0.1 if r == c else 0.0)
          for c in range(P)] for r in range(P)]
    b = [sum(d.weights[i] * d.rows[i, r] * d.targets[i] for i in range(20)) for r in range(P)]
    np.testing.assert_allclose(solve(d, 0.1).w, gauss_solve(M, b), rtol=0, atol=1e-8)


def test_large_ridge_shrinks_to_zero():
    d = random_design(1)
    norms = [solve(d, lam).norm for lam in (1e2, 1e4, 1e8, 1e12)]
    assert norms[-1] < 1e-9 * norms[0] * 1e4


@settings(max_examples=40)
@given(st.integers(0, 2**31 - 1), st.floats(0, 10), st.floats(0, 10))
def test_ridge_monotone(seed, l1, l2):
    d = random_design(seed, n=12, p=6)
    lo, hi = sorted((l1, l2))
    assert solve(d, lo).norm >= solve(d, hi).norm - 1e-12


@settings(max_examples=40)
@given(st.integers(0, 2**31 - 1), st.floats(0, 5))
def test_normal_equation_residual(seed, lam):
    d = random_design(seed, n=15, p=6)
    g = solve(d, lam)
    M, b = d.normal_equations()
    assert np.linalg.norm((M + lam * np.eye(6)) @ g.w - b) <= 1e-8 * (np.linalg.norm(b) + 1)
    assert g.residual_norm <= 1e-8 * (np.linalg.norm(b) + 1)


@settings(max_examples=30)
@given(st.integers(0, 2**31 - 1), st.floats(0, 2))
def test_duplication_invariance(seed, lam):
    d = random_design(seed, n=10, p=4)
    dd = CompatibleDesign(np.vstack([d.rows, d.rows]), np.tile(d.targets, 2), np.tile(d.weights, 2))
    # doubling sums means the equivalent ridge doubles as well
    np.testing.assert_allclose(solve(dd, 2 * lam).w, solve(d, lam).w, rtol=1e-9, atol=1e-12)


def test_duplication_invariance_unregularised():
    d = random_design(5)
    dd = CompatibleDesign(np.vstack([d.rows, d.rows]), np.tile(d.targets, 2), np.tile(d.weights, 2))
    np.testing.assert_allclose(solve(dd, 0.0).w, solve(d, 0.0).w, rtol=1e-9)


def test_degenerate_zero_design():
    g = solve(CompatibleDesign(np.zeros((5, 3)), np.ones(5), np.ones(5)), 0.0)
    assert g.degenerate and not g.w.any()


def test_singular_design_falls_back():
    rows = np.array([[1.0, 1.0, 0.0], [2.0, 2.0, 0.0], [0.0, 0.0, 1.0]])
    g = solve(CompatibleDesign(rows, np.array([1.0, 2.0, 3.0]), np.ones(3)), 0.0)
    assert g.fallback
    # minimum-norm solution of the consistent system splits weight evenly on the collinear pair
    np.testing.assert_allclose(g.w, [0.5, 0.5, 3.0], atol=1e-10)
    assert np.all(np.isfinite(g.w))


def test_errors():
    with pytest.raises(ValueError):
        solve(CompatibleDesign(np.zeros((3, 0)), np.zeros(3), np.ones(3)), 0.0)
    with pytest.raises(ValueError):
        solve(random_design(0), -1.0)
    with pytest.raises(ValueError):
        CompatibleDesign(np.zeros((2, 2)), np.zeros(2), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        CompatibleDesign(np.zeros((2, 2)), np.zeros(3), np.ones(2))


def test_uniform_M_is_scaled_fisher():
    rng = np.random.default_rng(2)
    arch = PolicyArch.default(DISCRETE, (4,))
    p = PolicyParameters(rng.normal(0, 0.5, arch.n_params), arch)
    X = rng.normal(0, 1e-3, (40, N_FEATURES))
    X[:, MINUTE_IDX] = rng.integers(45, 600, 40)
    A = rng.integers(-1, 2, 40)
    scores = actor.grad_log_prob_batch(p, X, A)
    M, _ = CompatibleDesign(scores, np.zeros(40), np.ones(40)).normal_equations()
    np.testing.assert_allclose(M / 40, empirical_fisher(scores), rtol=0, atol=1e-12)


def zero_critic():
    return BoostedEnsemble([], 0.0, 1.0)


@pytest.fixture
def small_rollout(planted_series):
    cfg = EnvConfig(persistence=60, mode=CONTINUOUS)
    p = actor.init_params(PolicyArch.default(CONTINUOUS, (3, 3)), 0)
    data = rollout(planted_series.split(1)[0], p, cfg, seed=4)
    return p, data


def test_design_rows_match_finite_differences(small_rollout):
    p, data = small_rollout
    idx = [0, 3, 7]
    sub = TransitionBatch(*(getattr(data, f)[idx] for f in
                            ("states", "actions", "rewards", "next_states", "dones", "forced", "episode", "prev_alloc")))
    d = build_design(sub, p, zero_critic())
    h = 1e-6
    for i in range(3):
        fd = np.empty(p.n_params)
        for j in range(p.n_params):
            up, dn = p.theta.copy(), p.theta.copy()
            up[j] += h
            dn[j] -= h
            fd[j] = (log_prob(p.with_theta(up), sub.states[i], sub.actions[i])
                     - log_prob(p.with_theta(dn), sub.states[i], sub.actions[i])) / (2 * h)
        np.testing.assert_allclose(d.rows[i], fd, rtol=1e-5, atol=1e-7)


def test_design_excludes_forced_and_uses_td(small_rollout):
    p, data = small_rollout
    critic = fit_value(data, None, CriticConfig(rounds=3))
    d = build_design(data, p, critic)
    assert d.rows.shape == ((~data.forced).sum(), p.n_params)
    np.testing.assert_allclose(d.targets, td_residuals(data, critic)[~data.forced])
    assert np.all(d.weights == 1)


def test_zero_residual_targets(small_rollout):
    p, data = small_rollout
    data = data.with_rewards(np.zeros_like(data.rewards))
    assert not build_design(data, p, zero_critic()).targets.any()


def test_symmetric_policy_mean_coordinates_vanish():
    arch = PolicyArch.default(CONTINUOUS, (3, 3))
    p = zero_params(arch)
    X = np.zeros((4, N_FEATURES))
    X[:, MINUTE_IDX] = [45, 55, 65, 75]
    data = TransitionBatch(X, np.zeros(4), np.ones(4), X, np.zeros(4, bool), np.zeros(4, bool),
                           np.zeros(4, int), np.zeros(4))
    d = build_design(data, p, zero_critic())
    w_sl, b_sl, (n_out, n_in) = arch.layer_slices()[-1]
    mean_coords = np.concatenate([d.rows[:, w_sl].reshape(4, n_out, n_in)[:, 0, :], d.rows[:, b_sl][:, :1]], axis=1)
    assert np.all(mean_coords == 0)


def test_empirical_weights(small_rollout):
    p, data = small_rollout
    w = visitation_weights(data)
    assert np.all(w > 0) and w.mean() == pytest.approx(1.0)
    d = build_design(data, p, zero_critic(), weighting="empirical")
    assert d.weights.shape[0] == (~data.forced).sum()
    with pytest.raises(ValueError):
        build_design(data, p, zero_critic(), weighting="bogus")


def test_nonfinite_gradient_reported():
    arch = PolicyArch.default(DISCRETE, (2,))
    X = np.zeros((3, N_FEATURES))
    X[1, 7] = np.nan
    data = TransitionBatch(X, np.zeros(3), np.zeros(3), X, np.ones(3, bool), np.zeros(3, bool), np.zeros(3, int), np.zeros(3))
    with pytest.raises(FloatingPointError, match="sample 1, parameter"):
        build_design(data, actor.init_params(arch, 0), zero_critic())
