"""Gibbs sampler for the TVP-VAR with stochastic volatility and Student-t shocks.

Model, for dates ``t = 1..T``::

    y_t = Z_t Φ_t + A_t^{-1} H_t^{1/2} e_t,        Z_t = I_n ⊗ x_t',  x_t = [1, y_{t-1}', ..., y_{t-L}']
    H_t = diag(σ²_{i,t} / λ_{i,t}),                 λ_{i,t} ~ Gamma(v_i/2, rate v_i/2)
    Φ_t = Φ_{t-1} + η_t,        η_t ~ N(0, HyperQ)
    α_{i,t} = α_{i,t-1} + ν_t,  ν_t ~ N(0, S_i)     (free elements of row i of A_t)
    ln σ²_{i,t} = ln σ²_{i,t-1} + g_i^{1/2} z_t,    ln σ²_{i,0} = ln sigma0_i

One sweep visits, in order: λ, v, g, ln σ², α, Φ, HyperQ, S.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.special import gammaln
from scipy.stats import invwishart

from . import kernels
from .dataset import TimeSeriesPanel
from .drawstore import DrawStore, Hyperparams, VarState
from .priors import PriorSet
from .statespace import StateSpaceError, StateSpaceSpec, ffbs
from .varutil import A_from_alpha, alpha_slices, coef_matrix, lag_matrix, obs_loading, reduced_cov, spectral_radius

STEPS = ("lambda", "dof", "g", "volatility", "alpha", "phi", "hyperq", "s_blocks")
FAULTS = (None, "lambda")


class GibbsError(RuntimeError):
    """A Gibbs step failed; carries the draw index and the step name."""

    def __init__(self, message: str, draw: int, step: str):
        super().__init__(f"draw {draw}, step {step}: {message}")
        self.draw = draw
        self.step = step


@dataclass
class SamplerConfig:
    """Chain length, thinning and tuning.

    ``n_draws`` counts all sweeps including burn-in, so ``(n_draws - burn_in) / thin``
    records are kept.  ``mh_scale`` is the initial random-walk variance ``c`` of
    the degrees-of-freedom proposal; it is adapted during burn-in towards an
    acceptance rate in ``[accept_low, accept_high]`` and frozen afterwards.
    """

    n_draws: int = 20000
    burn_in: int = 10000
    thin: int = 10
    seed: int = 0
    mh_scale: float = 4.0
    adapt: bool = True
    adapt_window: int = 50
    accept_low: float = 0.2
    accept_high: float = 0.4
    stability_filter: bool = False
    stability_tries: int = 100
    init_lnsig: str = "smoothed"

    def __post_init__(self):
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not 0 <= self.burn_in < self.n_draws:
            raise ValueError("need 0 <= burn_in < n_draws")
        if self.mh_scale <= 0:
            raise ValueError("mh_scale must be positive")
        if self.init_lnsig not in ("smoothed", "prior"):
            raise ValueError("init_lnsig must be 'smoothed' or 'prior'")

    @property
    def n_records(self) -> int:
        return (self.n_draws - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        return cls(**d)


@dataclass
class VarData:
    """Estimation-sample observations with their lagged regressors."""

    y: np.ndarray
    X: np.ndarray
    lags: int
    dates: np.ndarray
    variables: tuple[str, ...]
    loading: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.y = np.ascontiguousarray(self.y, dtype=float)
        self.X = np.ascontiguousarray(self.X, dtype=float)
        self.loading = obs_loading(self.X, self.n)

    @property
    def n(self) -> int:
        return self.y.shape[1]

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @classmethod
    def from_array(cls, data: np.ndarray, lags: int, dates=None, variables=None) -> "VarData":
        """All rows of ``data``; the first ``lags`` serve only as initial lags."""
        y, X = lag_matrix(data, lags)
        if dates is None:
            dates = np.arange(y.shape[0])
        else:
            dates = np.asarray(dates)[lags:]
        if variables is None:
            variables = tuple(f"y{i}" for i in range(y.shape[1]))
        return cls(y, X, lags, np.asarray(dates), tuple(variables))

    @classmethod
    def from_panel(cls, panel: TimeSeriesPanel, lags: int = 2, training_len: int = 50) -> "VarData":
        """Estimation sample after the training rows; its first lags come from the training tail."""
        if training_len < lags:
            raise ValueError("training_len must be at least lags")
        if panel.T - training_len < 2:
            raise ValueError("no estimation sample left after the training rows")
        start = training_len - lags
        return cls.from_array(panel.data[start:], lags, panel.dates[start:], panel.variables)


# ----------------------------------------------------------------------------
# helpers


def residuals(data: VarData, phi: np.ndarray) -> np.ndarray:
    """Reduced-form residuals ``y_t - C_t x_t``, ``(T, n)``."""
    C = coef_matrix(phi, data.n)
    return data.y - np.einsum("tij,tj->ti", C, data.X)


def orthogonal_residuals(resid: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """``A_t`` times the reduced-form residual at every date."""
    A = A_from_alpha(alpha, resid.shape[1])
    return np.einsum("tij,tj->ti", A, resid)


def draw_iw(scale: np.ndarray, dof: float, rng: np.random.Generator) -> np.ndarray:
    """Inverse-Wishart draw (mean ``scale / (dof - dim - 1)``), always 2-D."""
    scale = 0.5 * (scale + scale.T)
    if not np.all(np.isfinite(scale)):
        raise ValueError("non-finite inverse-Wishart scale")
    try:
        np.linalg.cholesky(scale)
    except np.linalg.LinAlgError:
        raise ValueError("inverse-Wishart scale is not positive definite") from None
    out = np.atleast_2d(invwishart.rvs(df=dof, scale=scale, random_state=rng))
    return 0.5 * (out + out.T)


def dof_log_kernel(v: float, sum_log_minus_lam: float, T: int, v0: float, v_dof: float) -> float:
    """Log posterior kernel of a degrees-of-freedom parameter.

    ``sum_log_minus_lam = Σ_t (ln λ_t - λ_t)``; the prior is a gamma with mean
    ``v0`` and ``v_dof`` degrees of freedom.
    """
    if v <= 0:
        return -math.inf
    half = 0.5 * v
    return (
        T * half * math.log(half)
        - T * gammaln(half)
        + half * sum_log_minus_lam
        + (0.5 * v_dof - 1.0) * math.log(v)
        - 0.5 * v_dof / v0 * v
    )


# ----------------------------------------------------------------------------
# conditional draws


def draw_lambda(
    state: VarState, hyper: Hyperparams, resid_orth: np.ndarray, rng: np.random.Generator, *, fault: str | None = None
) -> np.ndarray:
    """Mixture weights given orthogonal residuals.

    ``λ_{i,t} ~ Gamma(shape (v_i+1)/2, rate (v_i + u²_{i,t}/σ²_{i,t})/2)``, so the
    posterior mean is ``(v_i + 1) / (u²/σ² + v_i)``.
    """
    sig2 = np.exp(state.lnsig)
    if not np.all(np.isfinite(sig2)) or np.any(sig2 <= 0):
        raise ValueError("nonpositive or non-finite volatility")
    v = hyper.v[None, :]
    shape = 0.5 * (v + 1.0)
    rate = 0.5 * (v + resid_orth**2 / sig2)
    if fault == "lambda":
        rate = 2.0 * rate
    lam = rng.gamma(np.broadcast_to(shape, rate.shape), 1.0 / rate)
    return np.maximum(lam, np.finfo(float).tiny)


def draw_dof(
    state: VarState, hyper: Hyperparams, priors: PriorSet, rng: np.random.Generator, mh_scale: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Random-walk Metropolis update of each equation's degrees of freedom.

    Returns the new ``v`` and a boolean acceptance flag per equation.
    Proposals ``v <= 0`` are rejected.
    """
    T, n = state.lam.shape
    v = hyper.v.copy()
    acc = np.zeros(n, dtype=bool)
    eps = rng.standard_normal(n)
    logu = np.log(rng.random(n))
    stat = np.sum(np.log(state.lam) - state.lam, axis=0)
    for i in range(n):
        cand = v[i] + math.sqrt(mh_scale[i]) * eps[i]
        if cand <= 0:
            continue
        ratio = dof_log_kernel(cand, stat[i], T, priors.v0, priors.v_dof) - dof_log_kernel(
            v[i], stat[i], T, priors.v0, priors.v_dof
        )
        if logu[i] < ratio:
            v[i] = cand
            acc[i] = True
    return v, acc


def draw_g(state: VarState, priors: PriorSet, rng: np.random.Generator) -> np.ndarray:
    """Inverse-gamma draw of each log-volatility innovation variance."""
    h = np.vstack([np.log(priors.sigma0)[None, :], state.lnsig])
    ss = np.sum(np.diff(h, axis=0) ** 2, axis=0)
    shape = priors.g_shape + 0.5 * state.T
    scale = priors.g_scale + 0.5 * ss
    return scale / rng.gamma(shape)


def draw_volatility(
    state: VarState, hyper: Hyperparams, priors: PriorSet, resid_orth: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Single-move Metropolis sweep over every log-volatility path.

    The effective squared residual is ``u²_{i,t} λ_{i,t}``.  Returns the new
    paths and the number of accepted date updates per equation.
    """
    T, n = state.lnsig.shape
    y2 = np.ascontiguousarray((resid_orth**2 * state.lam).T)
    if not np.all(np.isfinite(y2)):
        raise ValueError("non-finite squared residuals")
    normals = rng.standard_normal((n, T))
    uniforms = rng.random((n, T))
    h0 = np.log(priors.sigma0)
    out = np.empty_like(state.lnsig)
    acc = np.zeros(n, dtype=np.int64)
    for i in range(n):
        path, a = kernels.sv_single_move(
            np.ascontiguousarray(state.lnsig[:, i]), y2[i], float(h0[i]), float(hyper.g[i]), normals[i], uniforms[i]
        )
        out[:, i] = path
        acc[i] = a
    return out, acc


def draw_alpha(
    data: VarData, state: VarState, hyper: Hyperparams, priors: PriorSet, rng: np.random.Generator,
    resid: np.ndarray | None = None,
) -> np.ndarray:
    """Contemporaneous relations, one equation at a time.

    For equation ``i`` the observation is residual ``i`` regressed on minus
    residuals ``1..i-1`` with noise variance ``σ²_{i,t}/λ_{i,t}``.
    """
    n = data.n
    if n == 1:
        return state.alpha.copy()
    if resid is None:
        resid = residuals(data, state.phi)
    out = np.empty_like(state.alpha)
    var = np.exp(state.lnsig) / state.lam
    for i, sl in enumerate(alpha_slices(n), start=1):
        spec = StateSpaceSpec(
            obs_loading=-resid[:, None, :i],
            obs_cov=var[:, i, None, None],
            trans_cov=hyper.s_blocks[i - 1],
            init_mean=priors.a0_mean[sl],
            init_cov=priors.a0_cov[sl, sl],
        )
        out[:, sl] = ffbs(spec, resid[:, i], rng)
    return out


def draw_phi(
    data: VarData, state: VarState, hyper: Hyperparams, priors: PriorSet, rng: np.random.Generator
) -> np.ndarray:
    """Coefficient paths by forward filtering, backward sampling."""
    spec = StateSpaceSpec(
        obs_loading=data.loading,
        obs_cov=reduced_cov(state.alpha, state.lnsig, state.lam),
        trans_cov=hyper.hyperq,
        init_mean=priors.phi0_mean,
        init_cov=priors.phi0_cov,
    )
    return ffbs(spec, data.y, rng)


def draw_hyperq(state: VarState, priors: PriorSet, rng: np.random.Generator) -> np.ndarray:
    d = np.diff(state.phi, axis=0)
    return draw_iw(priors.hyperq_scale + d.T @ d, priors.hyperq_dof + state.T - 1, rng)


def draw_s_blocks(state: VarState, priors: PriorSet, rng: np.random.Generator) -> list[np.ndarray]:
    out = []
    for i, sl in enumerate(alpha_slices(state.lnsig.shape[1])):
        d = np.diff(state.alpha[:, sl], axis=0)
        out.append(draw_iw(priors.s_scales[i] + d.T @ d, priors.s_dofs[i] + state.T - 1, rng))
    return out


def draw_hyper(state: VarState, hyper: Hyperparams, priors: PriorSet, rng: np.random.Generator) -> Hyperparams:
    """HyperQ, the S blocks and g from their conjugate conditionals (v unchanged)."""
    return Hyperparams(draw_hyperq(state, priors, rng), draw_s_blocks(state, priors, rng), draw_g(state, priors, rng), hyper.v.copy())


# ----------------------------------------------------------------------------
# chain


def initial_state(data: VarData, priors: PriorSet, how: str = "smoothed") -> VarState:
    """Deterministic starting paths.

    Φ and α start at their prior means and λ at one.  With ``how="prior"``
    the log-volatilities start at ``ln sigma0``; with ``"smoothed"`` they start
    at the log of a centred 11-date moving average of the squared orthogonal
    residuals implied by the prior means.
    """
    T, n = data.T, data.n
    phi = np.tile(priors.phi0_mean, (T, 1))
    alpha = np.tile(priors.a0_mean, (T, 1))
    lam = np.ones((T, n))
    if how == "prior":
        lnsig = np.tile(np.log(priors.sigma0), (T, 1))
    else:
        u2 = orthogonal_residuals(residuals(data, phi), alpha) ** 2
        w = min(11, T)
        kernel = np.ones(w)
        num = np.apply_along_axis(lambda c: np.convolve(c, kernel, mode="same"), 0, u2)
        den = np.convolve(np.ones(T), kernel, mode="same")[:, None]
        smooth = num / den
        floor = 1e-6 * np.maximum(np.mean(u2, axis=0), np.finfo(float).tiny)
        lnsig = np.log(np.maximum(smooth, floor))
    return VarState(phi, alpha, lnsig, lam)


def initial_hyper(priors: PriorSet) -> Hyperparams:
    k = priors.k
    hq = priors.hyperq_scale / max(priors.hyperq_dof - k - 1.0, 1.0)
    s = [sc / max(d - sc.shape[0] - 1.0, 1.0) for sc, d in zip(priors.s_scales, priors.s_dofs)]
    g = priors.g_scale / (priors.g_shape + 1.0)
    return Hyperparams(hq, s, g, np.full(priors.n, float(priors.v0)))


class GibbsChain:
    """One Markov chain: the current state, hyperparameters and MH tuning."""

    def __init__(
        self,
        data: VarData,
        priors: PriorSet,
        config: SamplerConfig | None = None,
        rng: np.random.Generator | None = None,
        fault: str | None = None,
    ):
        if fault not in FAULTS:
            raise ValueError(f"unknown fault mode {fault!r}")
        if priors.n != data.n or priors.lags != data.lags:
            raise ValueError("priors and data disagree on n or lags")
        self.data = data
        self.priors = priors
        self.config = config or SamplerConfig()
        self.rng = rng if rng is not None else np.random.default_rng(self.config.seed)
        self.fault = fault
        self.state = initial_state(data, priors, self.config.init_lnsig)
        self.hyper = initial_hyper(priors)
        self.mh_scale = np.full(data.n, float(self.config.mh_scale))
        self.iteration = 0
        self.stability_rejections = 0
        self._window = np.zeros(data.n)
        self._window_len = 0
        self.dof_accepted = np.zeros(data.n)
        self.sv_accepted = np.zeros(data.n)
        self.counted = 0

    def reset_counters(self) -> None:
        self.dof_accepted[:] = 0
        self.sv_accepted[:] = 0
        self.counted = 0

    def _adapt(self, acc: np.ndarray) -> None:
        cfg = self.config
        self._window += acc
        self._window_len += 1
        if self._window_len < cfg.adapt_window:
            return
        rate = self._window / self._window_len
        self.mh_scale = np.where(rate < cfg.accept_low, self.mh_scale * 0.6, self.mh_scale)
        self.mh_scale = np.where(rate > cfg.accept_high, self.mh_scale * 1.6, self.mh_scale)
        self._window[:] = 0
        self._window_len = 0

    def _draw_phi(self) -> np.ndarray:
        phi = draw_phi(self.data, self.state, self.hyper, self.priors, self.rng)
        if not self.config.stability_filter:
            return phi
        n, L = self.data.n, self.data.lags
        for _ in range(self.config.stability_tries):
            if np.all(spectral_radius(phi, n, L) < 1.0):
                return phi
            self.stability_rejections += 1
            phi = draw_phi(self.data, self.state, self.hyper, self.priors, self.rng)
        if np.all(spectral_radius(phi, n, L) < 1.0):
            return phi
        return self.state.phi.copy()

    def sweep(self, adapt: bool = False) -> None:
        """One full pass over the eight conditionals, in the fixed order."""
        s, h, rng, pri = self.state, self.hyper, self.rng, self.priors
        step = STEPS[0]
        try:
            resid = residuals(self.data, s.phi)
            u = orthogonal_residuals(resid, s.alpha)
            s.lam = draw_lambda(s, h, u, rng, fault=self.fault)
            step = "dof"
            h.v, acc = draw_dof(s, h, pri, rng, self.mh_scale)
            step = "g"
            h.g = draw_g(s, pri, rng)
            step = "volatility"
            s.lnsig, sv_acc = draw_volatility(s, h, pri, u, rng)
            step = "alpha"
            s.alpha = draw_alpha(self.data, s, h, pri, rng, resid=resid)
            step = "phi"
            s.phi = self._draw_phi()
            step = "hyperq"
            h.hyperq = draw_hyperq(s, pri, rng)
            step = "s_blocks"
            h.s_blocks = draw_s_blocks(s, pri, rng)
        except (ValueError, StateSpaceError, np.linalg.LinAlgError, FloatingPointError) as exc:
            raise GibbsError(str(exc), self.iteration, step) from exc
        self.dof_accepted += acc
        self.sv_accepted += sv_acc / self.data.T
        self.counted += 1
        if adapt:
            self._adapt(acc)
        self.iteration += 1

    def acceptance(self) -> dict:
        c = max(self.counted, 1)
        return {
            "dof": (self.dof_accepted / c).tolist(),
            "volatility": (self.sv_accepted / c).tolist(),
        }


def base_manifest(data: VarData, priors: PriorSet, config: SamplerConfig) -> dict:
    return {
        "format": "tvpsvar-drawstore",
        "version": 1,
        "n": data.n,
        "lags": data.lags,
        "T": data.T,
        "k": priors.k,
        "variables": list(data.variables),
        "dates": [int(d) for d in data.dates],
        "seed": int(config.seed),
        "n_draws": config.n_draws,
        "burn_in": config.burn_in,
        "thin": config.thin,
        "expected_records": config.n_records,
        "backend": kernels.BACKEND,
    }


def run_gibbs(
    data: VarData,
    priors: PriorSet,
    config: SamplerConfig,
    *,
    sink=None,
    fault: str | None = None,
    progress: Callable[[int, dict], None] | None = None,
    progress_every: int = 500,
):
    """Run one chain and store every ``thin``-th post-burn-in sweep.

    ``sink`` is anything with ``append(state, hyper)`` and
    ``finish(complete, error, extra)``; by default an in-memory
    :class:`DrawStore`.  On a step failure the sink is finished with
    ``complete=False`` and the :class:`GibbsError` is re-raised.
    """
    if sink is None:
        sink = DrawStore(base_manifest(data, priors, config))
    chain = GibbsChain(data, priors, config, fault=fault)
    try:
        for it in range(config.n_draws):
            burning = it < config.burn_in
            if it == config.burn_in:
                chain.reset_counters()
            chain.sweep(adapt=burning and config.adapt)
            if not burning and (it - config.burn_in + 1) % config.thin == 0:
                sink.append(chain.state, chain.hyper)
            if progress is not None and ((it + 1) % progress_every == 0 or it + 1 == config.n_draws):
                progress(it + 1, {"acceptance": chain.acceptance(), "mh_scale": chain.mh_scale.tolist(), "burn_in": burning})
    except GibbsError as exc:
        sink.finish(False, str(exc), _summary(chain))
        raise
    sink.finish(True, None, _summary(chain))
    return sink


def _summary(chain: GibbsChain) -> dict:
    return {
        "acceptance": chain.acceptance(),
        "mh_scale": chain.mh_scale.tolist(),
        "stability_rejections": chain.stability_rejections,
    }
