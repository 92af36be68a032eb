"""Synthetic data from the model and the joint-distribution check of the sampler.

``simulate_panel`` generates a panel together with the true state paths.
``geweke_check`` compares prior draws of monitored statistics (marginal-
conditional simulator) with the same statistics along a chain that alternates
one Gibbs sweep with a fresh data draw (successive-conditional simulator).
If every conditional is right the two distributions coincide.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import TimeSeriesPanel
from .drawstore import Hyperparams, VarState
from .priors import PriorSet
from .sampler import GibbsChain, GibbsError, SamplerConfig, VarData
from .varutil import A_from_alpha, alpha_slices, coef_matrix, n_alpha, spectral_radius


class SimulationError(RuntimeError):
    pass


@dataclass
class DgpSpec:
    """Data-generating process.

    ``phi`` is the (initial) equation-major coefficient vector.  With
    ``coef="random_walk"`` it drifts with innovation covariance
    ``hyperq * I``; with ``vol="random_walk"`` each log-volatility drifts with
    innovation variance ``g``.  ``dof=inf`` gives Gaussian shocks.
    ``planted`` lists ``(row, variable, value)`` overrides of the
    standardised structural shock.
    """

    n: int
    lags: int
    T: int
    phi: list
    alpha: list
    lnsig: list
    coef: str = "fixed"
    hyperq: float = 0.0
    vol: str = "constant"
    g: float = 0.0
    dof: float = float("inf")
    seed: int = 0
    burn: int = 100
    start_year: int = 1000
    planted: list = field(default_factory=list)

    def __post_init__(self):
        k = self.n * (1 + self.n * self.lags)
        self.phi = [float(x) for x in np.ravel(self.phi)]
        self.alpha = [float(x) for x in np.ravel(self.alpha)]
        self.lnsig = [float(x) for x in np.ravel(self.lnsig)]
        if len(self.phi) != k:
            raise SimulationError(f"phi must have {k} elements")
        if len(self.alpha) != n_alpha(self.n):
            raise SimulationError(f"alpha must have {n_alpha(self.n)} elements")
        if len(self.lnsig) != self.n:
            raise SimulationError(f"lnsig must have {self.n} elements")
        if self.coef not in ("fixed", "random_walk") or self.vol not in ("constant", "random_walk"):
            raise SimulationError("coef must be fixed|random_walk and vol constant|random_walk")
        if self.T < 50:
            raise SimulationError("T must be at least 50")
        if self.coef == "fixed" and spectral_radius(np.array(self.phi), self.n, self.lags) >= 1.0:
            raise SimulationError("fixed coefficients must be stable")
        if self.dof <= 0 or self.hyperq < 0 or self.g < 0:
            raise SimulationError("dof must be positive, hyperq and g nonnegative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dof"] = None if np.isinf(self.dof) else self.dof
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DgpSpec":
        d = dict(d)
        if d.get("dof") is None:
            d["dof"] = float("inf")
        return cls(**d)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DgpSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def simulate_y(state: VarState, presample: np.ndarray, rng: np.random.Generator,
               shocks: np.ndarray | None = None) -> np.ndarray:
    """Observations given full state paths and ``lags`` initial rows.

    ``shocks`` (``(T, n)`` standard normals) may be supplied; otherwise drawn.
    """
    T, n = state.lnsig.shape
    lags = presample.shape[0]
    C = coef_matrix(state.phi, n)
    Ainv = np.linalg.inv(A_from_alpha(state.alpha, n))
    sd = np.sqrt(np.exp(state.lnsig) / state.lam)
    if shocks is None:
        shocks = rng.standard_normal((T, n))
    y = np.vstack([presample, np.zeros((T, n))])
    x = np.ones(1 + n * lags)
    for t in range(T):
        r = lags + t
        for l in range(1, lags + 1):
            x[1 + (l - 1) * n : 1 + l * n] = y[r - l]
        y[r] = C[t] @ x + Ainv[t] @ (sd[t] * shocks[t])
    return y[lags:]


def _dgp_paths(spec: DgpSpec, total: int, rng: np.random.Generator) -> VarState:
    n, k = spec.n, len(spec.phi)
    phi = np.tile(np.array(spec.phi), (total, 1))
    if spec.coef == "random_walk":
        phi = phi + np.cumsum(np.sqrt(spec.hyperq) * rng.standard_normal((total, k)), axis=0)
    lnsig = np.tile(np.array(spec.lnsig), (total, 1))
    if spec.vol == "random_walk":
        lnsig = lnsig + np.cumsum(np.sqrt(spec.g) * rng.standard_normal((total, n)), axis=0)
    alpha = np.tile(np.array(spec.alpha), (total, 1))
    if np.isinf(spec.dof):
        lam = np.ones((total, n))
    else:
        lam = rng.gamma(0.5 * spec.dof, 2.0 / spec.dof, size=(total, n))
    return VarState(phi, alpha, lnsig, lam)


def simulate_panel(spec: DgpSpec, variables=None) -> tuple[TimeSeriesPanel, VarState]:
    """Panel of ``spec.T`` rows plus the true paths aligned with its rows.

    The process runs ``spec.burn`` unrecorded dates from zero initial lags
    (with the first date's parameters) before the recorded ones.  Random-walk
    coefficient paths with an unstable date are regenerated, up to 100 times.
    """
    rng = np.random.default_rng(spec.seed)
    n, lags, T, burn = spec.n, spec.lags, spec.T, spec.burn
    total = burn + T
    for _ in range(100):
        truth = _dgp_paths(spec, T, rng)
        if spec.coef == "fixed" or np.all(spectral_radius(truth.phi, n, lags) < 1.0):
            break
    else:
        raise SimulationError("explosive coefficient path in 100 attempts")
    head = VarState(
        np.tile(truth.phi[0], (burn, 1)),
        np.tile(truth.alpha[0], (burn, 1)),
        np.tile(truth.lnsig[0], (burn, 1)),
        np.ones((burn, n)) if np.isinf(spec.dof) else rng.gamma(0.5 * spec.dof, 2.0 / spec.dof, size=(burn, n)),
    )
    full = VarState(*(np.vstack([a, b]) for a, b in
                      ((head.phi, truth.phi), (head.alpha, truth.alpha), (head.lnsig, truth.lnsig), (head.lam, truth.lam))))
    shocks = rng.standard_normal((total, n))
    for row, var, value in spec.planted:
        shocks[burn + int(row), int(var)] = float(value)
        full.lam[burn + int(row), int(var)] = 1.0
        truth.lam[int(row), int(var)] = 1.0
    y = simulate_y(full, np.zeros((lags, n)), rng, shocks)[burn:]
    if not np.all(np.isfinite(y)):
        raise SimulationError("simulated data are not finite")
    names = tuple(variables) if variables is not None else tuple(f"y{i + 1}" for i in range(n))
    dates = np.arange(spec.start_year, spec.start_year + T, dtype=np.int64)
    panel = TimeSeriesPanel(names, dates, y, meta={"source": "simulated", "seed": str(spec.seed)})
    return panel, truth


# ----------------------------------------------------------------------------
# prior simulation and the joint-distribution check


def draw_prior(priors: PriorSet, T: int, rng: np.random.Generator) -> tuple[VarState, Hyperparams]:
    """Parameters and state paths drawn from the prior."""
    from scipy.stats import invwishart

    n = priors.n
    hq = np.atleast_2d(invwishart.rvs(df=priors.hyperq_dof, scale=priors.hyperq_scale, random_state=rng))
    s_blocks = [np.atleast_2d(invwishart.rvs(df=d, scale=s, random_state=rng)) for s, d in zip(priors.s_scales, priors.s_dofs)]
    g = priors.g_scale / rng.gamma(priors.g_shape)
    v = rng.gamma(0.5 * priors.v_dof, 2.0 * priors.v0 / priors.v_dof, size=n)

    def rw(mean, cov, q):
        start = rng.multivariate_normal(mean, cov)
        steps = rng.multivariate_normal(np.zeros(mean.size), q, size=T - 1)
        return np.vstack([start, start + np.cumsum(steps, axis=0)])

    phi = rw(priors.phi0_mean, priors.phi0_cov, hq)
    alpha = np.zeros((T, n_alpha(n)))
    for i, sl in enumerate(alpha_slices(n)):
        alpha[:, sl] = rw(priors.a0_mean[sl], priors.a0_cov[sl, sl], s_blocks[i])
    lnsig = np.log(priors.sigma0)[None, :] + np.cumsum(np.sqrt(g)[None, :] * rng.standard_normal((T, n)), axis=0)
    lam = rng.gamma(0.5 * v[None, :], 2.0 / v[None, :], size=(T, n))
    return VarState(phi, alpha, lnsig, lam), Hyperparams(hq, s_blocks, g, v)


def geweke_priors(n: int = 2, lags: int = 2) -> PriorSet:
    """Proper, moderately informative priors for the joint-distribution check."""
    m = 1 + n * lags
    k = n * m
    phi0 = np.zeros((n, m))
    for i in range(n):
        phi0[i, 1 + i] = 0.3
    na = n_alpha(n)
    return PriorSet(
        n=n,
        lags=lags,
        phi0_mean=phi0.reshape(-1),
        phi0_cov=0.01 * np.eye(k),
        a0_mean=np.full(na, 0.3),
        a0_cov=0.1 * np.eye(na),
        sigma0=np.ones(n),
        hyperq_scale=1e-3 * 11 * np.eye(k),
        hyperq_dof=k + 12.0,
        s_scales=[0.1 * np.eye(i) for i in range(1, n)],
        s_dofs=[12.0] * (n - 1),
        g_shape=10.0,
        g_scale=0.2,
        v0=20.0,
        v_dof=40.0,
    )


def monitored_stats(state: VarState, hyper: Hyperparams) -> np.ndarray:
    """Twenty functions of the parameters touching every Gibbs block."""
    T = state.T
    dates = (0, T // 2, T - 1)
    out = []
    for t in dates:
        x = state.phi[t, 1]
        out += [x, x * x]
    for t in dates:
        x = state.lnsig[t, 0]
        out += [x, x * x]
    a = state.alpha[T // 2, 0] if state.alpha.shape[1] else 0.0
    out += [a, a * a]
    tr = float(np.trace(hyper.hyperq))
    out += [tr, tr * tr]
    out += [hyper.v[0], hyper.v[0] ** 2]
    out += [state.lam[0, 0], state.lam[T - 1, 0]]
    return np.array(out, dtype=float)


STAT_NAMES = (
    [f"phi1_t{d}_{p}" for d in ("first", "mid", "last") for p in ("mean", "sq")]
    + [f"lnsig1_t{d}_{p}" for d in ("first", "mid", "last") for p in ("mean", "sq")]
    + ["alpha1_mid_mean", "alpha1_mid_sq", "hyperq_trace_mean", "hyperq_trace_sq", "v1_mean", "v1_sq",
       "lambda1_first", "lambda1_last"]
)


def mcmc_se(x: np.ndarray) -> np.ndarray:
    """Standard error of the mean of each column of an autocorrelated series.

    Geyer's initial monotone sequence estimator of the asymptotic variance:
    autocovariances are summed in adjacent pairs while the pair sums stay
    positive, with the pair sums forced to be nonincreasing.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    N = x.shape[0]
    out = np.zeros(x.shape[1])
    if N < 4:
        return np.full(x.shape[1], np.nan)
    xc = x - x.mean(axis=0)
    f = np.fft.rfft(xc, 2 * N, axis=0)
    acov = np.fft.irfft(f * np.conj(f), axis=0)[:N] / N
    for j in range(x.shape[1]):
        c = acov[:, j]
        if c[0] <= 0:
            continue
        total, prev = 0.0, np.inf
        for m in range(N // 2):
            pair = c[2 * m] + c[2 * m + 1]
            if pair <= 0:
                break
            pair = min(pair, prev)
            total += pair
            prev = pair
        out[j] = np.sqrt(max(2.0 * total - c[0], c[0]) / N)
    return out


@dataclass
class GewekeResult:
    names: list[str]
    mean_marginal: np.ndarray
    mean_successive: np.ndarray
    z: np.ndarray
    n_rep: int
    breakdown: str | None = None

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z))) if self.z.size else 0.0

    def passed(self, threshold: float = 4.0) -> bool:
        return self.breakdown is None and self.max_abs_z < threshold

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["statistic", "mean_marginal", "mean_successive", "z"])
            for row in zip(self.names, self.mean_marginal, self.mean_successive, self.z):
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def geweke_check(
    priors: PriorSet | None = None,
    n_rep: int = 5000,
    *,
    T: int = 30,
    seed: int = 0,
    sweeps_per_rep: int = 10,
    mh_scale: float = 16.0,
    fault: str | None = None,
) -> GewekeResult:
    """Joint-distribution test of the Gibbs sampler.

    Each successive-conditional replication runs ``sweeps_per_rep`` Gibbs
    sweeps and then redraws the data.  The dof proposal scale is held fixed
    (no adaptation) so every sweep is the same Markov kernel.  Presample lags
    are fixed at zero.  The z-scores use an autocorrelation-consistent
    standard error for the chain means.
    """
    priors = priors or geweke_priors()
    n, lags = priors.n, priors.lags
    if n_rep <= 0:
        empty = np.zeros(0)
        return GewekeResult([], empty, empty, empty, 0)
    rng = np.random.default_rng(seed)
    presample = np.zeros((lags, n))

    mc = np.empty((n_rep, len(STAT_NAMES)))
    for r in range(n_rep):
        st, hy = draw_prior(priors, T, rng)
        mc[r] = monitored_stats(st, hy)

    cfg = SamplerConfig(n_draws=2, burn_in=0, thin=1, seed=seed, mh_scale=mh_scale, adapt=False, init_lnsig="prior")
    st, hy = draw_prior(priors, T, rng)
    y = simulate_y(st, presample, rng)
    chain = GibbsChain(VarData.from_array(np.vstack([presample, y]), lags), priors, cfg, rng=rng, fault=fault)
    chain.state, chain.hyper = st, hy
    sc = np.empty((n_rep, len(STAT_NAMES)))
    breakdown = None
    done = 0
    for r in range(n_rep):
        try:
            for _ in range(sweeps_per_rep):
                chain.sweep(adapt=False)
        except GibbsError as exc:
            breakdown = f"replication {r}: {exc}"
            break
        with np.errstate(over="ignore", invalid="ignore"):
            y = simulate_y(chain.state, presample, rng)
        chain.data = VarData.from_array(np.vstack([presample, y]), lags)
        sc[r] = monitored_stats(chain.state, chain.hyper)
        done = r + 1
    if done < 4:
        nan = np.full(len(STAT_NAMES), np.nan)
        return GewekeResult(list(STAT_NAMES), mc.mean(axis=0), nan, np.full(len(STAT_NAMES), np.inf), n_rep, breakdown)
    sc = sc[:done]

    m1, m2 = mc.mean(axis=0), sc.mean(axis=0)
    se1 = mc.std(axis=0, ddof=1) / np.sqrt(n_rep)
    with np.errstate(invalid="ignore", over="ignore"):
        se2 = mcmc_se(sc)
    denom = np.sqrt(se1**2 + se2**2)
    with np.errstate(invalid="ignore", over="ignore"):
        z = np.where(denom > 0, (m1 - m2) / np.where(denom > 0, denom, 1.0), 0.0)
    z = np.where(np.isfinite(z), z, np.inf)
    return GewekeResult(list(STAT_NAMES), m1, m2, z, n_rep, breakdown)


# ----------------------------------------------------------------------------
# quick recovery suite


def recovery_design(n: int = 2, own1: float = 0.5, own2: float = 0.2, intercept: float = 0.1) -> np.ndarray:
    """Equation-major coefficients with own-lag dynamics only."""
    m = 1 + 2 * n
    phi = np.zeros((n, m))
    phi[:, 0] = intercept
    for i in range(n):
        phi[i, 1 + i] = own1
        phi[i, 1 + n + i] = own2
    return phi.reshape(-1)


def fit_simulated(panel: TimeSeriesPanel, training_len: int, config: SamplerConfig, lags: int = 2):
    """Calibrate on the training rows and run the sampler on the rest."""
    from .priors import calibrate
    from .sampler import run_gibbs

    priors = calibrate(panel.slice_rows(0, training_len), lags)
    data = VarData.from_panel(panel, lags, training_len)
    return run_gibbs(data, priors, config), data


def recovery_suite(seed: int = 0, T: int = 300, n_draws: int = 2000) -> dict[str, tuple[bool, str]]:
    """Small-sample recovery of fixed coefficients and of a log-volatility path."""
    out = {}
    cfg = SamplerConfig(n_draws=n_draws, burn_in=n_draws // 2, thin=3, seed=seed)
    truth_phi = recovery_design()
    spec = DgpSpec(n=2, lags=2, T=T, phi=truth_phi, alpha=[0.3], lnsig=np.log([0.25, 0.25]), seed=seed)
    panel, _ = simulate_panel(spec)
    store, data = fit_simulated(panel, 50, cfg)
    ph = store.stack("phi")[:, data.T // 2]
    err = np.abs(np.median(ph, axis=0) - truth_phi)
    bound = 3.0 * ph.std(axis=0) + 0.05
    out["fixed_coefficients"] = (bool(np.all(err <= bound)), f"max error {err.max():.3f}, tightest bound {bound.min():.3f}")
    spec = DgpSpec(n=2, lags=2, T=T, phi=truth_phi, alpha=[0.3], lnsig=np.log([0.25, 0.25]), vol="random_walk",
                   g=0.03, seed=seed + 1)
    panel, truth = simulate_panel(spec)
    store, data = fit_simulated(panel, 50, cfg)
    med = np.median(store.stack("lnsig"), axis=0)
    corr = [float(np.corrcoef(med[:, i], truth.lnsig[50:, i])[0, 1]) for i in range(2)]
    out["log_volatility"] = (bool(min(corr) > 0.8), "correlations " + ", ".join(f"{c:.3f}" for c in corr))
    return out
