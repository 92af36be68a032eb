"""State-space kernels against brute-force joint-Gaussian computations."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from tvpsvar.statespace import (
    StateSpaceError,
    StateSpaceSpec,
    backward_sample,
    ffbs,
    kalman_filter,
    smoother_moments,
)


def joint_moments(spec: StateSpaceSpec):
    """Mean and covariance of the stacked (states, observations) vector."""
    T, p, k = spec.dims
    # x_t = x_1 + sum_{s=2..t} w_s
    Sx = np.zeros((T * k, T * k))
    for t in range(T):
        for s in range(T):
            Sx[t * k : (t + 1) * k, s * k : (s + 1) * k] = spec.init_cov + min(t, s) * spec.trans_cov
    mx = np.tile(spec.init_mean, T)
    Z = np.zeros((T * p, T * k))
    R = np.zeros((T * p, T * p))
    for t in range(T):
        Z[t * p : (t + 1) * p, t * k : (t + 1) * k] = spec.obs_loading[t]
        R[t * p : (t + 1) * p, t * p : (t + 1) * p] = spec.obs_cov[t]
    return mx, Sx, Z @ mx, Z @ Sx @ Z.T + R, Sx @ Z.T


def conditional(mx, Sx, my, Sy, Sxy, y, rows_y):
    """E[x | y[rows_y]] and Cov[x | y[rows_y]]."""
    Syy = Sy[np.ix_(rows_y, rows_y)]
    C = Sxy[:, rows_y]
    K = np.linalg.solve(Syy, C.T).T
    return mx + K @ (y[rows_y] - my[rows_y]), Sx - K @ C.T


def random_spec(rng, T, p, k, trans_scale=0.1):
    A = rng.standard_normal((k, k))
    Q = trans_scale * (A @ A.T / k + 0.1 * np.eye(k))
    B = rng.standard_normal((k, k))
    P0 = B @ B.T / k + 0.5 * np.eye(k)
    R = np.empty((T, p, p))
    for t in range(T):
        C = rng.standard_normal((p, p))
        R[t] = C @ C.T / p + 0.2 * np.eye(p)
    return StateSpaceSpec(rng.standard_normal((T, p, k)), R, Q, rng.standard_normal(k), P0)


def test_exact_observation():
    obs = np.array([1.0, -2.0, 0.5, 3.0])
    spec = StateSpaceSpec(np.ones((4, 1, 1)), np.zeros((4, 1, 1)), [[0.3]], [0.0], [[1.0]])
    f = kalman_filter(spec, obs)
    np.testing.assert_allclose(f.m_filt[:, 0], obs, atol=1e-12)


def test_local_level_filter_matches_joint_gaussian():
    T = 5
    spec = StateSpaceSpec(np.ones((T, 1, 1)), np.full((T, 1, 1), 0.7), [[0.2]], [0.3], [[2.0]])
    y = np.array([0.1, 0.9, -0.4, 1.3, 0.8])
    f = kalman_filter(spec, y)
    mx, Sx, my, Sy, Sxy = joint_moments(spec)
    for t in range(T):
        m, S = conditional(mx, Sx, my, Sy, Sxy, y, list(range(t + 1)))
        assert f.m_filt[t, 0] == pytest.approx(m[t], abs=1e-12)
        assert f.P_filt[t, 0, 0] == pytest.approx(S[t, t], abs=1e-12)


def test_constant_coefficient_is_bayesian_regression(rng):
    T, k = 40, 3
    X = rng.standard_normal((T, k))
    beta = np.array([0.5, -1.0, 2.0])
    s2 = 0.3
    y = X @ beta + np.sqrt(s2) * rng.standard_normal(T)
    m0, P0 = np.zeros(k), 4.0 * np.eye(k)
    spec = StateSpaceSpec(X[:, None, :], np.full((T, 1, 1), s2), np.zeros((k, k)), m0, P0)
    f = kalman_filter(spec, y)
    prec = np.linalg.inv(P0) + X.T @ X / s2
    post_cov = np.linalg.inv(prec)
    post_mean = post_cov @ (np.linalg.inv(P0) @ m0 + X.T @ y / s2)
    np.testing.assert_allclose(f.m_filt[-1], post_mean, atol=1e-10)
    np.testing.assert_allclose(f.P_filt[-1], post_cov, atol=1e-10)


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 3), st.integers(1, 3))
def test_loglik_is_joint_density(seed, T, p, k):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, T, p, k)
    y = rng.standard_normal((T, p))
    f = kalman_filter(spec, y)
    _, _, my, Sy, _ = joint_moments(spec)
    direct = multivariate_normal(my, Sy).logpdf(y.reshape(-1))
    assert f.total_loglik == pytest.approx(direct, abs=1e-8)
    # covariance hygiene
    for P in np.concatenate([f.P_filt, f.P_pred]):
        assert np.max(np.abs(P - P.T)) < 1e-10
        assert np.linalg.eigvalsh(P).min() >= -1e-8


@given(st.integers(0, 10_000), st.integers(2, 5), st.integers(1, 2), st.integers(1, 3))
def test_smoother_matches_joint_gaussian(seed, T, p, k):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, T, p, k)
    y = rng.standard_normal((T, p))
    ms, Ps = smoother_moments(kalman_filter(spec, y), spec.trans_cov)
    mx, Sx, my, Sy, Sxy = joint_moments(spec)
    m, S = conditional(mx, Sx, my, Sy, Sxy, y.reshape(-1), list(range(T * p)))
    np.testing.assert_allclose(ms.reshape(-1), m, atol=1e-9)
    for t in range(T):
        np.testing.assert_allclose(Ps[t], S[t * k : (t + 1) * k, t * k : (t + 1) * k], atol=1e-9)


def test_degenerate_path_is_deterministic():
    obs = np.array([1.0, 1.0, 1.0])
    spec = StateSpaceSpec(np.ones((3, 1, 1)), np.zeros((3, 1, 1)), [[0.0]], [0.0], [[1.0]])
    a = ffbs(spec, obs, np.random.default_rng(1))
    b = ffbs(spec, obs, np.random.default_rng(2))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a[:, 0], 1.0)


def test_backward_sample_moments_local_level():
    """100k paths of a T=3 local-level model: mean and covariance within 3 MC standard errors."""
    T = 3
    spec = StateSpaceSpec(np.ones((T, 1, 1)), np.full((T, 1, 1), 0.5), [[0.3]], [0.0], [[1.0]])
    y = np.array([0.4, -0.2, 1.1])
    f = kalman_filter(spec, y)
    rng = np.random.default_rng(7)
    N = 100_000
    paths = np.array([backward_sample(f, spec.trans_cov, rng)[:, 0] for _ in range(N)])
    mx, Sx, my, Sy, Sxy = joint_moments(spec)
    m, S = conditional(mx, Sx, my, Sy, Sxy, y, [0, 1, 2])
    se_mean = np.sqrt(np.diag(S) / N)
    assert np.all(np.abs(paths.mean(axis=0) - m) < 3 * se_mean)
    emp = np.cov(paths, rowvar=False)
    # se of a sample covariance entry: sqrt((S_ii S_jj + S_ij^2) / N)
    se_cov = np.sqrt((np.outer(np.diag(S), np.diag(S)) + S**2) / N)
    assert np.all(np.abs(emp - S) < 3 * se_cov)


def test_fixed_seed_repeat_is_identical(rng):
    spec = random_spec(rng, 8, 2, 3)
    y = rng.standard_normal((8, 2))
    a = ffbs(spec, y, np.random.default_rng(5))
    b = ffbs(spec, y, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)


def test_dimension_errors():
    with pytest.raises(StateSpaceError):
        StateSpaceSpec(np.ones((3, 1, 2)), np.ones((3, 1, 1)), np.eye(3), np.zeros(2), np.eye(2))
    spec = StateSpaceSpec(np.ones((3, 1, 1)), np.ones((3, 1, 1)), [[0.1]], [0.0], [[1.0]])
    with pytest.raises(StateSpaceError, match="observations"):
        kalman_filter(spec, np.zeros((4, 1)))


def test_nonfinite_innovation_covariance_reports_date():
    R = np.ones((4, 1, 1))
    R[2] = np.nan
    spec = StateSpaceSpec(np.ones((4, 1, 1)), R, [[0.1]], [0.0], [[1.0]])
    with pytest.raises(StateSpaceError) as exc:
        kalman_filter(spec, np.zeros(4))
    assert exc.value.date == 2
