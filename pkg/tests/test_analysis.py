import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tvpsvar import analysis as an
from tvpsvar.analysis import (
    AnalysisError,
    AnalysisSpec,
    EpisodeSpec,
    analyze_draws,
    conditional_volatility,
    episode_shocks,
    fevd,
    irf,
    predictability,
    structural_shocks,
    summarize,
    unconditional_variance,
    write_csvs,
)
from tvpsvar.identify import complete_basis, haar_orthogonal, ma_coefficients
from tvpsvar.sampler import SamplerConfig, VarData, run_gibbs
from tvpsvar.simulate import DgpSpec, geweke_priors, recovery_design, simulate_panel


def random_var(rng, n=3, lags=2, scale=0.3):
    phi = np.zeros((n, 1 + n * lags))
    phi[:, 1:] = scale * rng.standard_normal((n, n * lags)) / math.sqrt(n)
    C = rng.standard_normal((n, n))
    sigma = C @ C.T + 0.2 * np.eye(n)
    return phi.reshape(-1), sigma


# ---------------------------------------------------------------- impulse responses


def test_white_noise_irf():
    B = ma_coefficients(np.zeros(2 * 5), 2, 2, 5)
    r = irf(B, np.eye(2), np.array([1.0, 0.0]), 5)
    np.testing.assert_array_equal(r[0], np.ones(6))
    np.testing.assert_array_equal(r[1], np.zeros(6))


def test_scalar_ar1_cumulated_response():
    B = ma_coefficients(np.array([0.0, 0.5]), 1, 1, 5)
    r = irf(B, np.eye(1), np.array([1.0]), 5)
    assert r[0, 5] == pytest.approx(1.96875, abs=1e-15)
    np.testing.assert_allclose(irf(B, np.eye(1), np.array([1.0]), 5, cumulate=False)[0], 0.5 ** np.arange(6))


@given(st.integers(0, 10_000))
def test_irf_sign_flip_and_linearity(seed):
    rng = np.random.default_rng(seed)
    phi, sigma = random_var(rng)
    B = ma_coefficients(phi, 3, 2, 5)
    om = np.linalg.cholesky(sigma)
    q = haar_orthogonal(3, rng)[:, 0]
    a = irf(B, om, q)
    np.testing.assert_allclose(irf(B, om, -q), -a, atol=1e-14)
    np.testing.assert_array_equal(irf(B, 2 * om, q), 2 * a)


# ---------------------------------------------------------------- variance shares


def test_fevd_identity():
    B = np.stack([np.eye(2), np.diag([0.5, -0.3]), np.diag([0.25, 0.09])])
    np.testing.assert_allclose(fevd(B, np.eye(2), np.array([1.0, 0.0]), 3), [1.0, 0.0])


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_fevd_completeness(seed, K):
    rng = np.random.default_rng(seed)
    phi, sigma = random_var(rng)
    B = ma_coefficients(phi, 3, 2, K)
    om = np.linalg.cholesky(sigma)
    Q = haar_orthogonal(3, rng)
    total = sum(fevd(B, om, Q[:, j], K) for j in range(3))
    np.testing.assert_allclose(total, 1.0, atol=1e-10)
    assert np.all((total >= 0) & (total <= 1 + 1e-12))


def test_fevd_monte_carlo():
    rng = np.random.default_rng(21)
    phi, sigma = random_var(rng, scale=0.6)
    K, n, N = 3, 3, 1_000_000
    B = ma_coefficients(phi, n, 2, K)
    om = np.linalg.cholesky(sigma)
    q = haar_orthogonal(n, rng)[:, 0]
    share = fevd(B, om, q, K)
    BO = B[:K] @ om  # (K, n, n)
    a = np.zeros((N, n))
    b = np.zeros((N, n))
    eps = rng.standard_normal((N, K, n))
    for k in range(1, K + 1):
        # k-step forecast error: sum_{j<k} B_j Ω ε_{k-j}
        e = np.zeros((N, n))
        eq = np.zeros((N, n))
        for j in range(k):
            e += eps[:, k - 1 - j] @ BO[j].T
            eq += np.outer(eps[:, k - 1 - j] @ q, BO[j] @ q)
        a += eq**2
        b += e**2
    R = a.mean(axis=0) / b.mean(axis=0)
    se = (a - R * b).std(axis=0) / (math.sqrt(N) * b.mean(axis=0))
    assert np.all(np.abs(R - share) < 3 * se)


def test_fevd_zero_variance():
    with pytest.raises(AnalysisError):
        fevd(np.eye(2)[None], np.zeros((2, 2)), np.array([1.0, 0.0]), 1)


# ---------------------------------------------------------------- volatilities


def test_conditional_volatility_hand_values():
    om = np.array([[2.0, 0.0], [1.0, 3.0]])
    q = np.array([0.6, 0.8])
    unc, cond = conditional_volatility(om, q)
    np.testing.assert_allclose(unc, [2.0, math.sqrt(10.0)])
    np.testing.assert_allclose(cond, [1.2, 0.6 + 2.4])
    unc, cond = conditional_volatility(np.eye(2), np.array([1.0, 0.0]))
    assert unc[0] == cond[0] == 1.0


@given(st.integers(0, 10_000))
def test_conditional_volatility_projection(seed):
    rng = np.random.default_rng(seed)
    _, sigma = random_var(rng)
    om = np.linalg.cholesky(sigma)
    Q = haar_orthogonal(3, rng)
    unc, _ = conditional_volatility(om, Q[:, 0])
    conds = np.array([conditional_volatility(om, Q[:, j])[1] for j in range(3)])
    assert np.all(conds <= unc + 1e-12)
    np.testing.assert_allclose(np.sum(conds**2, axis=0), unc**2, atol=1e-10)
    np.testing.assert_allclose(unc**2, np.diag(sigma), atol=1e-12)


# ---------------------------------------------------------------- predictability


def test_white_noise_predictability():
    r2, stable = predictability(np.zeros(2 * 5), np.eye(2), 2, 2, [1, 3])
    assert stable
    np.testing.assert_allclose(r2, 0.0, atol=1e-15)


@pytest.mark.parametrize("rho", [0.9, 0.5, 0.1, -0.7])
def test_ar1_r2_is_rho_squared(rho):
    r2, _ = predictability(np.array([0.0, rho]), np.eye(1), 1, 1, [1, 2])
    assert r2[0, 0] == pytest.approx(rho**2, abs=1e-12)
    # two-step error variance 1 + rho^2 out of 1 / (1 - rho^2)
    assert r2[0, 1] == pytest.approx(1 - (1 + rho**2) * (1 - rho**2), abs=1e-12)


def test_r2_monotone_in_persistence():
    hi, _ = predictability(np.array([0.0, 0.9]), np.eye(1), 1, 1)
    lo, _ = predictability(np.array([0.0, 0.1]), np.eye(1), 1, 1)
    assert hi[0, 0] == pytest.approx(0.81) and lo[0, 0] == pytest.approx(0.01)


def test_unstable_date_flagged():
    phis = np.array([[0.0, 0.5], [0.0, 1.2]])
    r2, stable = predictability(phis, np.ones((2, 1, 1)), 1, 1)
    assert list(stable) == [True, False]
    assert np.isfinite(r2[0, 0, 0]) and np.isnan(r2[1, 0, 0])


@given(st.integers(0, 10_000))
def test_r2_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    phi, sigma = random_var(rng, scale=0.5)
    r2, stable = predictability(phi, sigma, 3, 2, [1, 2, 5])
    if stable:
        assert np.all((r2 >= -1e-12) & (r2 < 1))


@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 3))
def test_lyapunov_routes_agree(seed, n, lags):
    rng = np.random.default_rng(seed)
    phi, sigma = random_var(rng, n=n, lags=lags, scale=0.4)
    phis = np.stack([phi, 0.5 * phi])
    sigmas = np.stack([sigma, 2 * sigma])
    vec, st_vec = unconditional_variance(phis, sigmas, n, lags)
    old = an.LYAPUNOV_VEC_MAX
    an.LYAPUNOV_VEC_MAX = 0
    try:
        lyap, st_lyap = unconditional_variance(phis, sigmas, n, lags)
    finally:
        an.LYAPUNOV_VEC_MAX = old
    np.testing.assert_array_equal(st_vec, st_lyap)
    np.testing.assert_allclose(vec, lyap, rtol=1e-10, atol=1e-12)


# ---------------------------------------------------------------- shocks and episodes


def test_structural_shocks_invert_the_impact():
    rng = np.random.default_rng(3)
    _, sigma = random_var(rng)
    om = np.linalg.cholesky(sigma)
    Q = haar_orthogonal(3, rng)
    eps = rng.standard_normal((10, 3))
    resid = eps @ (om @ Q).T
    np.testing.assert_allclose(structural_shocks(np.broadcast_to(om, (10, 3, 3)), np.broadcast_to(Q, (10, 3, 3)), resid),
                               eps, atol=1e-12)


def test_episode_shocks():
    dates = np.arange(1600, 1610)
    zero = np.zeros((5, 10, 1))
    np.testing.assert_array_equal(episode_shocks(zero, dates, [EpisodeSpec("z", 1601, 1603)]), [[0.0]])
    rng = np.random.default_rng(0)
    sh = rng.standard_normal((7, 10, 2))
    one = episode_shocks(sh, dates, [EpisodeSpec("y", 1604, 1604)])
    np.testing.assert_allclose(one[0], np.median(sh[:, 4], axis=0))
    three = episode_shocks(sh, dates, [EpisodeSpec("w", 1600, 1602)])
    np.testing.assert_allclose(three[0], np.median(sh[:, :3], axis=0).sum(axis=0))
    with pytest.raises(AnalysisError, match="outside"):
        episode_shocks(sh, dates, [EpisodeSpec("late", 1605, 1700)])
    with pytest.raises(AnalysisError):
        EpisodeSpec("bad", 1700, 1600)


# ---------------------------------------------------------------- summaries


def test_summarize_conventions():
    np.testing.assert_array_equal(summarize(np.full((5, 2), 3.0)), np.full((3, 2), 3.0))
    q = summarize(np.arange(1, 101, dtype=float))
    assert q[1] == 50.5
    assert q[0] == pytest.approx(1 + 0.16 * 99) and q[2] == pytest.approx(1 + 0.84 * 99)
    with pytest.raises(AnalysisError):
        summarize(np.ones((1, 3)))


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=60))
def test_quantiles_monotone(xs):
    q = summarize(np.array(xs))
    assert q[0] <= q[1] <= q[2]


# ---------------------------------------------------------------- end to end on a tiny chain


@pytest.fixture(scope="module")
def tiny_run():
    spec = DgpSpec(n=2, lags=2, T=62, phi=recovery_design(2), alpha=[0.3], lnsig=[math.log(0.25)] * 2, seed=4,
                   start_year=1598)
    panel, _ = simulate_panel(spec)
    data = VarData.from_array(panel.data, 2, panel.dates, ("output", "prices"))
    store = run_gibbs(data, geweke_priors(2), SamplerConfig(n_draws=40, burn_in=20, thin=2, seed=1))
    return data, store


@pytest.mark.parametrize("scheme", ["maxshare", "cholesky", "sign"])
def test_analyze_and_export(tiny_run, tmp_path, scheme):
    data, store = tiny_run
    kw = {}
    if scheme == "sign":
        kw = dict(sign_matrix=np.array([[1.0, 1.0], [1.0, -1.0]]), shock_names=("AD", "AS"))
    spec = AnalysisSpec(scheme=scheme, K=2, predictability_horizons=[1, 4],
                        episodes=[EpisodeSpec("e", 1610, 1612)], **kw)
    res = analyze_draws(iter(store), data, spec, len(store))
    paths = write_csvs(res, tmp_path)
    assert set(paths) == {"irf", "fevd", "volatility", "predictability", "episodes", "shocks"}
    for name in ("irf", "fevd", "volatility", "predictability", "shocks"):
        with open(paths[name], newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert rows and list(rows[0])[:7] == ["date", "variable", "horizon", "q16", "q50", "q84", "stat_name"]
        for r in rows:
            a, b, c = float(r["q16"]), float(r["q50"]), float(r["q84"])
            if not math.isnan(b):
                assert a <= b <= c
    with open(paths["episodes"], newline="") as fh:
        eps = list(csv.DictReader(fh))
    assert len(eps) == spec.n_shocks
    res.close()


def test_threads_and_spill_match_serial(tiny_run, tmp_path):
    data, store = tiny_run
    spec = AnalysisSpec(K=1)
    a = analyze_draws(iter(store), data, spec, len(store))
    b = analyze_draws(iter(store), data, spec, len(store), threads=4, spill_dir=tmp_path / "spill")
    for k in a.stats:
        np.testing.assert_array_equal(np.asarray(a.stats[k]), np.asarray(b.stats[k]))
    b.close()
    assert not any((tmp_path / "spill").iterdir())


def test_fevd_completeness_over_draws(tiny_run):
    data, store = tiny_run
    n = data.n
    for state, _ in store:
        from tvpsvar.varutil import reduced_cov

        om = np.linalg.cholesky(reduced_cov(state.alpha, state.lnsig, state.lam))
        B = ma_coefficients(state.phi, n, 2, 5)
        q, _ = an.max_fev_batch(B, om, 0, 1)
        total = 0.0
        for t in range(data.T):
            F = complete_basis(q[t])
            total = sum(fevd(B[t], om[t], F[:, j], 5) for j in range(n))
            np.testing.assert_allclose(total, 1.0, atol=1e-10)


def test_record_count_checked(tiny_run):
    data, store = tiny_run
    with pytest.raises(AnalysisError):
        analyze_draws(iter(store), data, AnalysisSpec(), len(store) + 1)
    with pytest.raises(AnalysisError, match="outside"):
        analyze_draws(iter(store), data, AnalysisSpec(episodes=[{"name": "x", "start_year": 1, "end_year": 2}]), len(store))
