import math

import numpy as np
import pytest
from scipy import stats

from tvpsvar.drawstore import VarState
from tvpsvar.simulate import (
    STAT_NAMES,
    DgpSpec,
    SimulationError,
    draw_prior,
    geweke_check,
    geweke_priors,
    mcmc_se,
    monitored_stats,
    recovery_design,
    simulate_panel,
    simulate_y,
)
from tvpsvar.varutil import A_from_alpha


def test_zero_noise_follows_the_recursion():
    phi = recovery_design(2)
    T = 30
    st = VarState(np.tile(phi, (T, 1)), np.full((T, 1), 0.3), np.zeros((T, 2)), np.ones((T, 2)))
    pre = np.array([[1.0, -1.0], [0.5, 2.0]])
    y = simulate_y(st, pre, np.random.default_rng(0), np.zeros((T, 2)))
    ref = [pre[0], pre[1]]
    for _ in range(T):
        ref.append(0.1 + 0.5 * ref[-1] + 0.2 * ref[-2])
    np.testing.assert_allclose(y, np.array(ref[2:]), rtol=1e-14)


def test_long_sample_covariance():
    spec = DgpSpec(n=2, lags=2, T=100_000, phi=np.zeros(10), alpha=[0.3], lnsig=[0.0, math.log(2.0)], seed=11)
    panel, _ = simulate_panel(spec)
    Ainv = np.linalg.inv(A_from_alpha(np.array([[0.3]]), 2)[0])
    target = Ainv @ np.diag([1.0, 2.0]) @ Ainv.T
    emp = np.cov(panel.data.T)
    assert np.max(np.abs(emp - target)) < 0.01 * np.max(np.abs(target))


def test_student_t_shocks():
    spec = DgpSpec(n=1, lags=2, T=50_000, phi=np.zeros(3), alpha=[], lnsig=[0.0], dof=3.0, seed=5)
    panel, truth = simulate_panel(spec)
    x = panel.data[:, 0]
    assert stats.kstest(x, stats.t(3).cdf).pvalue > 1e-3
    assert stats.kstest(x, stats.norm.cdf).pvalue < 1e-6
    assert truth.lam.mean() == pytest.approx(1.0, abs=0.02)


def test_seed_reproducibility():
    spec = DgpSpec(n=2, lags=2, T=80, phi=recovery_design(2), alpha=[0.1], lnsig=[0, 0], vol="random_walk", g=0.01,
                   seed=3)
    a, ta = simulate_panel(spec)
    b, tb = simulate_panel(spec)
    np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_array_equal(ta.lnsig, tb.lnsig)
    spec.seed = 4
    assert not np.array_equal(simulate_panel(spec)[0].data, a.data)


def test_planted_shock_enters_the_data():
    base = dict(n=1, lags=2, T=60, phi=[0.0, 0.0, 0.0], alpha=[], lnsig=[0.0], seed=1, start_year=1590)
    a, _ = simulate_panel(DgpSpec(**base))
    b, _ = simulate_panel(DgpSpec(**base, planted=[(10, 0, -5.0)]))
    diff = np.flatnonzero(a.data[:, 0] != b.data[:, 0])
    assert list(diff) == [10] and b.data[10, 0] == -5.0
    assert a.dates[10] == 1600


def test_dgp_validation_and_round_trip(tmp_path):
    ok = dict(n=2, lags=2, T=60, phi=recovery_design(2), alpha=[0.1], lnsig=[0, 0])
    with pytest.raises(SimulationError, match="phi"):
        DgpSpec(**{**ok, "phi": [0.0]})
    with pytest.raises(SimulationError, match="alpha"):
        DgpSpec(**{**ok, "alpha": []})
    with pytest.raises(SimulationError, match="stable"):
        DgpSpec(**{**ok, "phi": recovery_design(2, own1=1.2)})
    with pytest.raises(SimulationError):
        DgpSpec(**{**ok, "T": 10})
    with pytest.raises(SimulationError):
        DgpSpec(**{**ok, "vol": "garch"})
    spec = DgpSpec(**ok, dof=7.0, planted=[[3, 0, -1.0]])
    spec.save(tmp_path / "d.json")
    assert DgpSpec.load(tmp_path / "d.json") == spec
    gauss = DgpSpec(**ok)
    gauss.save(tmp_path / "g.json")
    assert math.isinf(DgpSpec.load(tmp_path / "g.json").dof)


def test_prior_draw_shapes():
    pri = geweke_priors(3)
    st, hy = draw_prior(pri, 25, np.random.default_rng(0))
    assert st.phi.shape == (25, pri.k) and st.alpha.shape == (25, 3) and st.lnsig.shape == (25, 3)
    assert np.all(st.lam > 0) and hy.g.shape == (3,) and [b.shape for b in hy.s_blocks] == [(1, 1), (2, 2)]
    assert monitored_stats(st, hy).shape == (len(STAT_NAMES),) == (20,)


def test_mcmc_se():
    rng = np.random.default_rng(0)
    N = 200_000
    iid = rng.standard_normal(N)
    assert mcmc_se(iid)[0] == pytest.approx(1 / math.sqrt(N), rel=0.05)
    rho = 0.8
    e = rng.standard_normal(N)
    x = np.empty(N)
    x[0] = e[0] / math.sqrt(1 - rho**2)
    for t in range(1, N):
        x[t] = rho * x[t - 1] + e[t]
    # long-run sd of an AR(1): sigma / (1 - rho)
    assert mcmc_se(x)[0] == pytest.approx(1 / (1 - rho) / math.sqrt(N), rel=0.1)
    assert np.isnan(mcmc_se(np.ones(3))[0])


def test_geweke_empty():
    res = geweke_check(n_rep=0)
    assert res.passed() and res.max_abs_z == 0.0


def test_geweke_short_run_and_csv(tmp_path):
    res = geweke_check(n_rep=300, seed=2)
    assert res.breakdown is None and np.all(np.isfinite(res.z))
    res.to_csv(tmp_path / "g.csv")
    assert len((tmp_path / "g.csv").read_text().splitlines()) == 21


def test_geweke_detects_fault():
    res = geweke_check(n_rep=300, seed=2, fault="lambda")
    assert not res.passed()
    assert res.breakdown is not None or res.max_abs_z > 6
