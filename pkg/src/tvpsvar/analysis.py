"""Posterior summaries of identified shocks along the sample.

For every retained draw and every date the coefficient vector and ``Σ_t``
define MA matrices (constant-coefficient approximation) and an identified
rotation; from those come cumulated impulse responses, variance shares,
conditional volatilities, forecast R² and the structural shock series.
Pointwise 16/50/84 quantiles over draws use linear interpolation between
order statistics (numpy's default, "type 7").

The single-date functions accept arbitrary leading axes.
"""
from __future__ import annotations

import csv
import json
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from .drawstore import Hyperparams, VarState
from .identify import MaShape, ma_coefficients, max_fev_batch, sign_rotation
from .sampler import VarData, residuals
from .varutil import companion, reduced_cov

QUANTILES = (0.16, 0.5, 0.84)
LYAPUNOV_VEC_MAX = 12


class AnalysisError(ValueError):
    pass


@dataclass
class EpisodeSpec:
    name: str
    start_year: int
    end_year: int

    def __post_init__(self):
        if self.start_year > self.end_year:
            raise AnalysisError(f"episode {self.name!r}: start after end")


@dataclass
class AnalysisSpec:
    """What to identify and summarise.

    ``scheme`` is ``maxshare`` (target variable and horizon ``K``),
    ``cholesky`` (first recursive shock) or ``sign`` (``sign_matrix`` with
    ``shock_names``; restrictions bind on cumulated responses up to
    ``sign_horizon``; ``seed`` drives the rotation draws).
    """

    scheme: str = "maxshare"
    target: int = 0
    K: int = 1
    irf_horizon: int = 5
    fevd_horizon: int = 5
    predictability_horizons: list[int] = field(default_factory=lambda: [1])
    episodes: list[EpisodeSpec] = field(default_factory=list)
    sign_matrix: np.ndarray | None = None
    shock_names: tuple[str, ...] = ()
    sign_horizon: int = 0
    max_tries: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in ("maxshare", "cholesky", "sign"):
            raise AnalysisError(f"unknown identification scheme {self.scheme!r}")
        if self.scheme == "sign" and self.sign_matrix is None:
            raise AnalysisError("sign scheme needs a sign matrix")
        if min(self.irf_horizon, self.fevd_horizon) < 0 or self.K < 1:
            raise AnalysisError("horizons must be nonnegative and K >= 1")
        if any(h < 1 for h in self.predictability_horizons):
            raise AnalysisError("predictability horizons must be >= 1")
        self.episodes = [e if isinstance(e, EpisodeSpec) else EpisodeSpec(**e) for e in self.episodes]
        if not self.shock_names:
            if self.scheme == "maxshare":
                self.shock_names = ("bc",)
            elif self.scheme == "cholesky":
                self.shock_names = ("chol1",)
            else:
                self.shock_names = tuple(f"shock{j + 1}" for j in range(np.shape(self.sign_matrix)[1]))

    @property
    def n_shocks(self) -> int:
        return len(self.shock_names)

    @property
    def ma_horizon(self) -> int:
        return max(self.irf_horizon, self.fevd_horizon, self.K, self.sign_horizon,
                   max(self.predictability_horizons, default=1))


# ----------------------------------------------------------------------------
# single-date (batched) statistics


def irf(B: np.ndarray, omega: np.ndarray, q: np.ndarray, horizons: int = 5, cumulate: bool = True) -> np.ndarray:
    """Responses ``(..., n, horizons+1)`` to a one-standard-deviation shock ``Ω̃ q``."""
    impact = np.einsum("...ij,...j->...i", omega, q)
    resp = np.einsum("...hij,...j->...ih", B[..., : horizons + 1, :, :], impact)
    return np.cumsum(resp, axis=-1) if cumulate else resp


def fevd(B: np.ndarray, omega: np.ndarray, q: np.ndarray, K: int) -> np.ndarray:
    """Share of each variable's FEV, summed over horizons ``1..K``, due to shock ``q``.

    ``Σ_{j<K} (K-j) (e_i'B_jΩ̃q)² / Σ_{j<K} (K-j) e_i'B_jΣB_j'e_i``.
    """
    if K < 1:
        raise AnalysisError("FEVD horizon must be at least 1")
    w = (K - np.arange(K)).astype(float)
    BO = B[..., :K, :, :] @ omega[..., None, :, :]
    contrib = np.einsum("...hij,...j->...hi", BO, q) ** 2
    total = np.sum(BO**2, axis=-1)
    num = np.einsum("h,...hi->...i", w, contrib)
    den = np.einsum("h,...hi->...i", w, total)
    if np.any(~(den > 0)):
        raise AnalysisError("zero forecast-error variance")
    return num / den


def conditional_volatility(omega: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(√Σ_ii, |e_i'Ω̃q|)`` per variable."""
    uncond = np.sqrt(np.sum(omega**2, axis=-1))
    cond = np.abs(np.einsum("...ij,...j->...i", omega, q))
    return uncond, cond


def unconditional_variance(phi: np.ndarray, sigma: np.ndarray, n: int, lags: int) -> tuple[np.ndarray, np.ndarray]:
    """Implied stationary variances ``(..., n)`` and a stability flag ``(...)``.

    Solves ``V = F V F' + G`` on the companion form, by vectorisation for
    companion dimension up to 12 and with ``scipy.linalg.solve_discrete_lyapunov``
    above that.  Unstable dates get NaN.
    """
    F = companion(phi, n, lags)
    d = F.shape[-1]
    lead = F.shape[:-2]
    stable = np.max(np.abs(np.linalg.eigvals(F)), axis=-1) < 1.0
    G = np.zeros(lead + (d, d))
    G[..., :n, :n] = sigma
    if d <= LYAPUNOV_VEC_MAX:
        kron = np.einsum("...ab,...cd->...acbd", F, F).reshape(lead + (d * d, d * d))
        lhs = np.eye(d * d) - kron
        lhs = np.where(stable[..., None, None], lhs, np.eye(d * d))
        V = np.linalg.solve(lhs, G.reshape(lead + (d * d, 1))).reshape(lead + (d, d))
    else:
        V = np.empty(lead + (d, d))
        for idx in np.ndindex(*lead):
            V[idx] = solve_discrete_lyapunov(F[idx], G[idx]) if stable[idx] else 0.0
    var = np.diagonal(V, axis1=-2, axis2=-1)[..., :n].copy()
    var[~stable] = np.nan
    return var, stable


def predictability(
    phi: np.ndarray, sigma: np.ndarray, n: int, lags: int, horizons: Iterable[int] = (1,),
    B: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Forecast R² ``1 - FEV_i(h) / V_i(∞)``, shape ``(..., n, len(horizons))``.

    ``FEV_i(h) = Σ_{j<h} e_i'B_jΣB_j'e_i`` is the ``h``-step forecast-error
    variance; dates with an unstable companion matrix are NaN and flagged
    in the returned boolean array.
    """
    horizons = list(horizons)
    H = max(horizons)
    if B is None:
        B = ma_coefficients(phi, n, lags, H)
    var, stable = unconditional_variance(phi, sigma, n, lags)
    step = np.einsum("...hij,...jk,...hik->...hi", B[..., :H, :, :], sigma, B[..., :H, :, :])
    fev = np.cumsum(step, axis=-2)
    out = np.stack([1.0 - fev[..., h - 1, :] / var for h in horizons], axis=-1)
    return out, stable


def structural_shocks(omega: np.ndarray, Q: np.ndarray, resid: np.ndarray) -> np.ndarray:
    """``Q'Ω̃^{-1} resid`` per date, ``(..., n_shocks)``."""
    z = np.linalg.solve(omega, resid[..., :, None])[..., 0]
    return np.einsum("...is,...i->...s", Q, z)


def summarize(x: np.ndarray, quantiles=QUANTILES, axis: int = 0) -> np.ndarray:
    """Pointwise quantiles along ``axis`` (type 7), NaN draws ignored."""
    x = np.asarray(x, dtype=float)
    if x.shape[axis] < 2:
        raise AnalysisError("need at least two draws to summarise")
    if np.isnan(x).any():
        return np.nanquantile(x, quantiles, axis=axis)
    return np.quantile(x, quantiles, axis=axis)


def check_episodes(episodes: list[EpisodeSpec], dates: np.ndarray) -> None:
    dates = np.asarray(dates)
    for ep in episodes:
        if ep.start_year < dates[0] or ep.end_year > dates[-1]:
            raise AnalysisError(f"episode {ep.name!r} ({ep.start_year}-{ep.end_year}) outside sample "
                                f"{dates[0]}-{dates[-1]}")


def episode_shocks(shocks: np.ndarray, dates: np.ndarray, episodes: list[EpisodeSpec]) -> np.ndarray:
    """Sum over each episode's years of the posterior-median shock.

    ``shocks`` is ``(draws, T, n_shocks)``; returns ``(n_episodes, n_shocks)``.
    """
    dates = np.asarray(dates)
    check_episodes(episodes, dates)
    med = np.nanmedian(shocks, axis=0) if np.isnan(shocks).any() else np.median(shocks, axis=0)
    out = np.zeros((len(episodes), shocks.shape[-1]))
    for e, ep in enumerate(episodes):
        sel = (dates >= ep.start_year) & (dates <= ep.end_year)
        out[e] = med[sel].sum(axis=0)
    return out


# ----------------------------------------------------------------------------
# per-draw evaluation


STAT_SHAPES = {
    "irf": lambda T, n, s, spec: (T, n, spec.irf_horizon + 1, s),
    "fevd": lambda T, n, s, spec: (T, n, s),
    "uncond_vol": lambda T, n, s, spec: (T, n),
    "cond_vol": lambda T, n, s, spec: (T, n, s),
    "stoch_vol": lambda T, n, s, spec: (T, n),
    "predictability": lambda T, n, s, spec: (T, n, len(spec.predictability_horizons)),
    "shocks": lambda T, n, s, spec: (T, s),
}


def rotations_for_draw(B: np.ndarray, omega: np.ndarray, spec: AnalysisSpec, rng: np.random.Generator | None):
    """Impact rotations ``(T, n, s)`` for one draw; NaN where no sign draw was found."""
    T, n = omega.shape[0], omega.shape[-1]
    if spec.scheme == "maxshare":
        q, share = max_fev_batch(B, omega, spec.target, spec.K)
        return q[..., None], share, 0
    if spec.scheme == "cholesky":
        Q = np.zeros((T, n, 1))
        Q[:, 0, 0] = 1.0
        return Q, None, 0
    s = spec.n_shocks
    Q = np.full((T, n, s), np.nan)
    censored = 0
    for t in range(T):
        rot = sign_rotation(MaShape(B[t], omega[t]), spec.sign_matrix, rng, spec.max_tries, spec.sign_horizon)
        if rot is None:
            censored += 1
        else:
            Q[t] = rot.Q
    return Q, None, censored


def draw_statistics(state: VarState, data: VarData, spec: AnalysisSpec, draw_index: int = 0) -> tuple[dict, int]:
    """All per-date statistics of one draw, plus the number of censored dates."""
    n, lags = data.n, data.lags
    sigma = reduced_cov(state.alpha, state.lnsig, state.lam)
    sigma = 0.5 * (sigma + np.swapaxes(sigma, -1, -2))
    omega = np.linalg.cholesky(sigma)
    B = ma_coefficients(state.phi, n, lags, spec.ma_horizon)
    rng = np.random.default_rng([spec.seed, draw_index]) if spec.scheme == "sign" else None
    Q, _, censored = rotations_for_draw(B, omega, spec, rng)
    out = {}
    out["irf"] = np.stack([irf(B, omega, Q[..., j], spec.irf_horizon) for j in range(Q.shape[-1])], axis=-1)
    out["fevd"] = np.stack([fevd(B, omega, Q[..., j], max(spec.fevd_horizon, 1)) for j in range(Q.shape[-1])], axis=-1)
    uncond, _ = conditional_volatility(omega, Q[..., 0])
    out["uncond_vol"] = uncond
    out["cond_vol"] = np.stack([conditional_volatility(omega, Q[..., j])[1] for j in range(Q.shape[-1])], axis=-1)
    out["stoch_vol"] = np.exp(0.5 * state.lnsig)
    out["predictability"], _ = predictability(state.phi, sigma, n, lags, spec.predictability_horizons, B=B)
    out["shocks"] = structural_shocks(omega, Q, residuals(data, state.phi))
    return out, censored


@dataclass
class AnalysisResult:
    dates: np.ndarray
    variables: tuple[str, ...]
    spec: AnalysisSpec
    stats: dict
    n_draws: int
    censored: int
    workdir: tempfile.TemporaryDirectory | None = None

    def close(self) -> None:
        for k in list(self.stats):
            self.stats[k] = None
        if self.workdir is not None:
            self.workdir.cleanup()
            self.workdir = None


def analyze_draws(
    records: Iterable[tuple[VarState, Hyperparams]],
    data: VarData,
    spec: AnalysisSpec,
    n_records: int,
    *,
    threads: int = 1,
    spill_dir: str | Path | None = None,
) -> AnalysisResult:
    """Evaluate every record; arrays are ``(draws, ...)``.

    With ``spill_dir`` the per-draw arrays live in temporary ``.npy`` memory
    maps under that directory (removed by ``AnalysisResult.close``).
    """
    if n_records < 1:
        raise AnalysisError("no draws to analyse")
    check_episodes(spec.episodes, data.dates)
    T, n, s = data.T, data.n, spec.n_shocks
    workdir = None
    stats = {}
    if spill_dir is not None:
        Path(spill_dir).mkdir(parents=True, exist_ok=True)
        workdir = tempfile.TemporaryDirectory(dir=spill_dir)
    for name, f in STAT_SHAPES.items():
        shape = (n_records,) + f(T, n, s, spec)
        if workdir is not None:
            stats[name] = np.lib.format.open_memmap(Path(workdir.name) / f"{name}.npy", mode="w+", shape=shape)
        else:
            stats[name] = np.empty(shape)
    censored = 0

    def work(item):
        idx, (state, _) = item
        return idx, draw_statistics(state, data, spec, idx)

    count = 0
    it = enumerate(records)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = pool.map(work, it)
            for idx, (vals, cens) in results:
                if idx >= n_records:
                    raise AnalysisError("more records than announced")
                for k, v in vals.items():
                    stats[k][idx] = v
                censored += cens
                count += 1
    else:
        for item in it:
            idx, (vals, cens) = work(item)
            if idx >= n_records:
                raise AnalysisError("more records than announced")
            for k, v in vals.items():
                stats[k][idx] = v
            censored += cens
            count += 1
    if count != n_records:
        raise AnalysisError(f"expected {n_records} records, read {count}")
    return AnalysisResult(np.asarray(data.dates), tuple(data.variables), spec, stats, n_records, censored, workdir)


# ----------------------------------------------------------------------------
# CSV export

TIDY_HEADER = ["date", "variable", "horizon", "q16", "q50", "q84", "stat_name"]


def _fmt(x: float) -> str:
    return "nan" if not np.isfinite(x) else repr(float(x))


def _chunked_quantiles(arr: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Quantiles over axis 0 computed date-chunk by date-chunk (keeps memory flat)."""
    T = arr.shape[1]
    out = np.empty((len(QUANTILES),) + arr.shape[1:])
    for a in range(0, T, chunk):
        out[:, a : a + chunk] = summarize(np.asarray(arr[:, a : a + chunk]))
    return out


def write_csvs(result: AnalysisResult, outdir: str | Path) -> dict[str, Path]:
    """Write irf, fevd, volatility, predictability and episodes CSVs."""
    spec, dates, variables = result.spec, result.dates, result.variables
    check_episodes(spec.episodes, dates)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    shocks = spec.shock_names
    paths = {}

    def tidy(name, rows):
        p = outdir / f"{name}.csv"
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TIDY_HEADER + (["share_stable"] if name == "predictability" else []))
            w.writerows(rows)
        paths[name] = p

    q = _chunked_quantiles(result.stats["irf"])
    tidy("irf", (
        [int(dates[t]), variables[i], h, _fmt(q[0, t, i, h, j]), _fmt(q[1, t, i, h, j]), _fmt(q[2, t, i, h, j]), f"irf:{shocks[j]}"]
        for t in range(len(dates)) for j in range(len(shocks)) for i in range(len(variables))
        for h in range(spec.irf_horizon + 1)
    ))
    q = _chunked_quantiles(result.stats["fevd"])
    tidy("fevd", (
        [int(dates[t]), variables[i], spec.fevd_horizon, _fmt(q[0, t, i, j]), _fmt(q[1, t, i, j]), _fmt(q[2, t, i, j]), f"fevd:{shocks[j]}"]
        for t in range(len(dates)) for j in range(len(shocks)) for i in range(len(variables))
    ))
    qu = _chunked_quantiles(result.stats["uncond_vol"])
    qc = _chunked_quantiles(result.stats["cond_vol"])
    qs = _chunked_quantiles(result.stats["stoch_vol"])
    rows = []
    for t in range(len(dates)):
        for i in range(len(variables)):
            rows.append([int(dates[t]), variables[i], 1, *(_fmt(qu[a, t, i]) for a in range(3)), "unconditional_volatility"])
            for j in range(len(shocks)):
                rows.append([int(dates[t]), variables[i], 1, *(_fmt(qc[a, t, i, j]) for a in range(3)),
                             f"conditional_volatility:{shocks[j]}"])
            rows.append([int(dates[t]), variables[i], 0, *(_fmt(qs[a, t, i]) for a in range(3)), "stochastic_volatility"])
    tidy("volatility", rows)
    pred = result.stats["predictability"]
    qp = _chunked_quantiles(pred)
    frac = np.mean(np.isfinite(np.asarray(pred[:, :, 0, 0])), axis=0)
    tidy("predictability", (
        [int(dates[t]), variables[i], h, *(_fmt(qp[a, t, i, c]) for a in range(3)), "forecast_r2", _fmt(frac[t])]
        for t in range(len(dates)) for i in range(len(variables))
        for c, h in enumerate(spec.predictability_horizons)
    ))
    sh = np.asarray(result.stats["shocks"])
    qsh = summarize(sh)
    p = outdir / "episodes.csv"
    with open(p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "start_year", "end_year", "shock", "cumulated_median_shock"])
        if spec.episodes:
            ep = episode_shocks(sh, dates, spec.episodes)
            for e, epi in enumerate(spec.episodes):
                for j in range(len(shocks)):
                    w.writerow([epi.name, epi.start_year, epi.end_year, shocks[j], _fmt(ep[e, j])])
    paths["episodes"] = p
    tidy("shocks", (
        [int(dates[t]), shocks[j], 0, *(_fmt(qsh[a, t, j]) for a in range(3)), "structural_shock"]
        for t in range(len(dates)) for j in range(len(shocks))
    ))
    return paths


def spec_to_dict(spec: AnalysisSpec) -> dict:
    d = asdict(spec)
    d["sign_matrix"] = None if spec.sign_matrix is None else np.asarray(spec.sign_matrix).tolist()
    d["shock_names"] = list(spec.shock_names)
    return d


# ----------------------------------------------------------------------------
# qualitative checks on exported CSVs


def read_tidy(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _series(rows, variable, stat, horizon=None, col="q50") -> dict[int, float]:
    out = {}
    for r in rows:
        if r["variable"] == variable and r["stat_name"] == stat and (horizon is None or int(r["horizon"]) == horizon):
            out[int(r["date"])] = float(r[col])
    return out


def check_inflation_irf_sign(irf_rows, prices="prices", shock="bc", horizon=5, early=1700, late=1950) -> tuple[bool, str]:
    s = _series(irf_rows, prices, f"irf:{shock}", horizon)
    pre = [v for d, v in s.items() if d < early]
    post = [v for d, v in s.items() if d > late]
    if not pre or not post:
        return False, "no dates in one of the comparison windows"
    neg = np.mean(np.array(pre) < 0)
    pos = np.mean(np.array(post) > 0)
    return bool(neg > 0.5 and pos > 0.5), f"negative share before {early}: {neg:.2f}; positive share after {late}: {pos:.2f}"


def check_output_vol_peak(vol_rows, output="output", window=(1271, 1900), peak=(1600, 1700)) -> tuple[bool, str]:
    s = _series(vol_rows, output, "stochastic_volatility")
    sel = {d: v for d, v in s.items() if window[0] <= d <= window[1]}
    if not sel:
        return False, "no dates in the comparison window"
    year = max(sel, key=lambda d: (sel[d], -d))
    return bool(peak[0] <= year <= peak[1]), f"peak of median output volatility in {year}"


def check_money_fevd_rise(fevd_rows, money="money", shock="bc", early=1500, late=1650) -> tuple[bool, str]:
    s = _series(fevd_rows, money, f"fevd:{shock}")
    if early not in s or late not in s:
        return False, f"dates {early} or {late} not in sample"
    return bool(s[late] > s[early]), f"median money share {early}: {s[early]:.3f}, {late}: {s[late]:.3f}"


def qualitative_checks(analysis_dir: str | Path, names: dict | None = None) -> dict[str, tuple[bool, str]]:
    """Sign and ordering properties of the long-run historical run."""
    names = {"output": "output", "prices": "prices", "money": "money", **(names or {})}
    d = Path(analysis_dir)
    return {
        "inflation_irf_sign": check_inflation_irf_sign(read_tidy(d / "irf.csv"), names["prices"]),
        "output_volatility_peak": check_output_vol_peak(read_tidy(d / "volatility.csv"), names["output"]),
        "money_fevd_rise": check_money_fevd_rise(read_tidy(d / "fevd.csv"), names["money"]),
    }


def write_manifest(result: AnalysisResult, outdir: str | Path, extra: dict | None = None) -> None:
    man = {"draws": result.n_draws, "censored_dates": result.censored, "spec": spec_to_dict(result.spec)}
    if extra:
        man.update(extra)
    Path(outdir, "manifest.json").write_text(json.dumps(man, indent=1, sort_keys=True) + "\n", encoding="utf-8")
