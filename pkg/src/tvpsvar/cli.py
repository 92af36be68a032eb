"""Command-line entry point: ``tvpsvar {estimate,identify,analyze,simulate,check}``.

Everything except the seed, thread count and partial-store override lives
in the JSON config (see ``tvpsvar.config``).  Outputs go to
``<output_dir>/draws``, ``<output_dir>/analysis`` and ``<output_dir>/logs``.
Progress lines are plain text on standard error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import AnalysisError, AnalysisSpec, analyze_draws, rotations_for_draw, write_csvs, write_manifest
from .config import ConfigError, RunConfig
from .dataset import DataError, TimeSeriesPanel, VariableSpec, apply_splice_plan, build_panel, load_csv
from .drawstore import DrawStoreError, DrawStoreWriter, iter_records, read_manifest
from .identify import IdentificationError, default_sign_matrix, load_sign_matrix, ma_coefficients
from .priors import PriorError, calibrate
from .sampler import GibbsError, VarData, base_manifest, run_gibbs
from .simulate import DgpSpec, SimulationError, geweke_check, simulate_panel
from .statespace import StateSpaceError
from .varutil import reduced_cov

MODULE_OF = {
    ConfigError: "config",
    DataError: "dataset",
    PriorError: "priors",
    GibbsError: "sampler",
    StateSpaceError: "statespace",
    IdentificationError: "identify",
    AnalysisError: "analysis",
    SimulationError: "simulate",
    DrawStoreError: "drawstore",
}


class CliError(RuntimeError):
    pass


class Log:
    """Line-oriented log to standard error and, optionally, a file."""

    def __init__(self, path: Path | None = None):
        self.fh = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self.fh = open(path, "w", encoding="utf-8")

    def __call__(self, msg: str) -> None:
        print(msg, file=sys.stderr, flush=True)
        if self.fh:
            self.fh.write(msg + "\n")
            self.fh.flush()

    def close(self) -> None:
        if self.fh:
            self.fh.close()


# ----------------------------------------------------------------------------
# shared plumbing


def build_input_panel(cfg: RunConfig) -> TimeSeriesPanel:
    if cfg.simulate is not None:
        sim = dict(cfg.simulate)
        names = sim.pop("variables", None)
        panel, _ = simulate_panel(DgpSpec.from_dict(sim), names)
        return panel
    d = cfg.data
    series = load_csv(cfg.resolve(d["path"]), d["columns"], d["year_column"])
    series = apply_splice_plan(series, d["splice_plan"])
    if not d["variables"]:
        raise DataError("data.variables must list the panel variables")
    panel = build_panel(series, [VariableSpec(**v) for v in d["variables"]])
    lo = d["start_year"] if d["start_year"] is not None else int(panel.dates[0])
    hi = d["end_year"] if d["end_year"] is not None else int(panel.dates[-1])
    keep = (panel.dates >= lo) & (panel.dates <= hi)
    if not keep.any():
        raise DataError(f"no panel rows between {lo} and {hi}")
    idx = np.flatnonzero(keep)
    return panel.slice_rows(int(idx[0]), int(idx[-1]) + 1)


def target_index(target, variables) -> int:
    if isinstance(target, str):
        if target not in variables:
            raise ConfigError(f"identification target {target!r} is not a panel variable {list(variables)}")
        return variables.index(target)
    t = int(target)
    if not 0 <= t < len(variables):
        raise ConfigError(f"identification target index {t} out of range")
    return t


def analysis_spec(cfg: RunConfig, variables: tuple[str, ...], seed: int | None = None) -> AnalysisSpec:
    ident, an = cfg.identification, cfg.analysis
    scheme = ident["scheme"]
    sign_matrix, shock_names = None, ()
    if scheme == "sign":
        if ident["sign_csv"]:
            sign_matrix, shock_names = load_sign_matrix(cfg.resolve(ident["sign_csv"]), variables)
        else:
            roles = ident["roles"] or list(variables)
            sign_matrix, shock_names = default_sign_matrix(list(roles))
    return AnalysisSpec(
        scheme=scheme,
        target=target_index(ident["target"], list(variables)) if scheme == "maxshare" else 0,
        K=int(ident["horizon"]),
        irf_horizon=int(an["irf_horizon"]),
        fevd_horizon=int(an["fevd_horizon"]),
        predictability_horizons=[int(h) for h in an["predictability_horizons"]],
        episodes=list(an["episodes"]),
        sign_matrix=sign_matrix,
        shock_names=tuple(shock_names),
        sign_horizon=int(ident["sign_horizon"]),
        max_tries=int(ident["max_tries"]),
        seed=int(seed if seed is not None else ident["seed"]),
    )


def open_store(cfg: RunConfig, allow_partial: bool) -> tuple[Path, dict, VarData]:
    draws = cfg.out_path / "draws"
    man = read_manifest(draws)
    if not man.get("complete") and not allow_partial:
        raise DrawStoreError(f"draw store {draws} is incomplete ({man.get('error')}); use --allow-partial to analyse it")
    if man.get("config_hash") != cfg.estimation_hash():
        raise DrawStoreError(f"draw store {draws} was produced by a different estimation config "
                             f"(hash {man.get('config_hash')}, config gives {cfg.estimation_hash()})")
    panel = TimeSeriesPanel.from_csv(draws / "panel.csv")
    data = VarData.from_panel(panel, man["lags"], man["training_len"])
    return draws, man, data


# ----------------------------------------------------------------------------
# commands


def cmd_estimate(args) -> int:
    cfg = RunConfig.load(args.config).with_seed(args.seed)
    out = cfg.out_path
    log = Log(out / "logs" / "estimate.log")
    try:
        panel = build_input_panel(cfg)
        lags, tl = cfg.model["lags"], cfg.model["training_len"]
        if panel.T < tl + lags + 10:
            raise DataError(f"panel has {panel.T} rows; need more than training_len={tl} plus the estimation sample")
        pkw = {k: v for k, v in cfg.priors.items()}
        priors = calibrate(panel.slice_rows(0, tl), lags, **pkw)
        data = VarData.from_panel(panel, lags, tl)
        scfg = cfg.sampler_config()
        draws = out / "draws"
        draws.mkdir(parents=True, exist_ok=True)
        panel.to_csv(draws / "panel.csv")
        priors.save(draws / "priors.json")
        man = base_manifest(data, priors, scfg)
        d = cfg.to_dict()
        man.update({
            "config_hash": cfg.estimation_hash(),
            "config": {k: d[k] for k in ("data", "simulate", "model", "priors", "sampler")},
            "training_len": tl,
        })
        log(f"estimate: n={data.n} T={data.T} k={priors.k} draws={scfg.n_draws} burn_in={scfg.burn_in} "
            f"thin={scfg.thin} seed={scfg.seed} backend={man['backend']}")

        def progress(it, info):
            acc = info["acceptance"]
            phase = "burn-in" if info["burn_in"] else "sampling"
            log(f"draw {it}/{scfg.n_draws} {phase} dof_accept={_fmt_list(acc['dof'])} "
                f"sv_accept={_fmt_list(acc['volatility'])} mh_scale={_fmt_list(info['mh_scale'])}")

        sink = DrawStoreWriter(draws, man)
        run_gibbs(data, priors, scfg, sink=sink, progress=progress,
                  progress_every=max(1, min(500, scfg.n_draws // 10)))
        log(f"estimate: wrote {sink.manifest['records']} records to {draws}")
    finally:
        log.close()
    return 0


def _fmt_list(xs) -> str:
    return "[" + ",".join(f"{x:.3g}" for x in xs) + "]"


def cmd_identify(args) -> int:
    cfg = RunConfig.load(args.config)
    log = Log(cfg.out_path / "logs" / "identify.log")
    try:
        draws, man, data = open_store(cfg, args.allow_partial)
        spec = analysis_spec(cfg, data.variables, args.seed)
        spec.irf_horizon = 0
        spec.episodes = []
        n, s = data.n, spec.n_shocks
        R = man["records"]
        rot = np.empty((R, data.T, n, s))
        share = np.full((R, data.T), np.nan)
        censored = 0
        for r, (state, _) in enumerate(iter_records(draws)):
            sigma = reduced_cov(state.alpha, state.lnsig, state.lam)
            omega = np.linalg.cholesky(0.5 * (sigma + np.swapaxes(sigma, -1, -2)))
            B = ma_coefficients(state.phi, n, data.lags, spec.ma_horizon)
            rng = np.random.default_rng([spec.seed, r]) if spec.scheme == "sign" else None
            Q, sh, cens = rotations_for_draw(B, omega, spec, rng)
            rot[r] = Q
            if sh is not None:
                share[r] = sh
            censored += cens
        outdir = cfg.out_path / "analysis"
        outdir.mkdir(parents=True, exist_ok=True)
        qs = np.nanquantile(rot, [0.16, 0.5, 0.84], axis=0) if np.isnan(rot).any() else np.quantile(rot, [0.16, 0.5, 0.84], axis=0)
        with open(outdir / "rotations.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "variable", "horizon", "q16", "q50", "q84", "stat_name"])
            for t in range(data.T):
                for j in range(s):
                    for i in range(n):
                        w.writerow([int(data.dates[t]), data.variables[i], 0,
                                    *(repr(float(qs[a, t, i, j])) for a in range(3)), f"rotation:{spec.shock_names[j]}"])
                if spec.scheme == "maxshare":
                    qsh = np.quantile(share[:, t], [0.16, 0.5, 0.84])
                    w.writerow([int(data.dates[t]), data.variables[spec.target], spec.K,
                                *(repr(float(v)) for v in qsh), "fev_share:bc"])
        log(f"identify: {R} draws, scheme={spec.scheme}, censored dates={censored}, wrote {outdir / 'rotations.csv'}")
    finally:
        log.close()
    return 0


def cmd_analyze(args) -> int:
    cfg = RunConfig.load(args.config)
    log = Log(cfg.out_path / "logs" / "analyze.log")
    try:
        draws, man, data = open_store(cfg, args.allow_partial)
        spec = analysis_spec(cfg, data.variables, args.seed)
        outdir = cfg.out_path / "analysis"
        threads = args.threads or os.cpu_count() or 1
        res = analyze_draws(iter_records(draws), data, spec, man["records"], threads=threads, spill_dir=outdir)
        try:
            paths = write_csvs(res, outdir)
            write_manifest(res, outdir, {"config_hash": man["config_hash"], "drawstore_complete": man["complete"]})
        finally:
            res.close()
        if res.censored:
            log(f"analyze: {res.censored} (draw, date) pairs without an admissible sign rotation were excluded")
        log(f"analyze: {man['records']} draws, wrote {', '.join(sorted(p.name for p in paths.values()))} to {outdir}")
    finally:
        log.close()
    return 0


def cmd_simulate(args) -> int:
    spec_path = Path(args.config)
    if not spec_path.is_file():
        raise ConfigError(f"simulation spec not found: {spec_path}")
    d = json.loads(spec_path.read_text(encoding="utf-8"))
    if "simulate" in d:
        d = d["simulate"]
    names = d.pop("variables", None)
    if args.seed is not None:
        d["seed"] = int(args.seed)
    spec = DgpSpec.from_dict(d)
    panel, truth = simulate_panel(spec, names)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    panel.to_csv(out)
    np.savez(out.with_suffix(".truth.npz"), phi=truth.phi, alpha=truth.alpha, lnsig=truth.lnsig, lam=truth.lam)
    print(f"simulate: wrote {panel.T} rows to {out}", file=sys.stderr)
    return 0


def cmd_check(args) -> int:
    ok = True
    res = geweke_check(n_rep=args.n_rep, seed=args.seed or 0, fault=args.fault_injection)
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        res.to_csv(args.output)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["statistic", "mean_marginal", "mean_successive", "z"])
        for row in zip(res.names, res.mean_marginal, res.mean_successive, res.z):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    g_ok = res.passed()
    ok &= g_ok
    msg = f"joint-distribution check: n_rep={res.n_rep} max|z|={res.max_abs_z:.3f} {'PASS' if g_ok else 'FAIL'}"
    if res.breakdown:
        msg += f" (chain breakdown: {res.breakdown})"
    print(msg, file=sys.stderr)
    if not args.no_recovery:
        from .simulate import recovery_suite

        for name, (passed, detail) in recovery_suite(seed=args.seed or 0).items():
            ok &= passed
            print(f"recovery {name}: {'PASS' if passed else 'FAIL'} ({detail})", file=sys.stderr)
    return 0 if ok else 1


# ----------------------------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tvpsvar", description="TVP-VAR with stochastic volatility: estimation and analysis")
    p.add_argument("--version", action="version", version=f"tvpsvar {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, partial=False):
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--seed", type=int, default=None, help="override the seed in the config")
        sp.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
        if partial:
            sp.add_argument("--allow-partial", action="store_true", help="accept an incomplete draw store")

    common(sub.add_parser("estimate", help="run the Gibbs sampler and write the draw store"))
    common(sub.add_parser("identify", help="structural rotations per draw and date"), partial=True)
    common(sub.add_parser("analyze", help="impulse responses, variance shares, volatilities, R², episodes"), partial=True)
    sp = sub.add_parser("simulate", help="simulate a panel from a data-generating process spec")
    sp.add_argument("--config", required=True, help="JSON DgpSpec (or a run config with a simulate section)")
    sp.add_argument("--output", required=True, help="CSV path for the simulated panel")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--threads", type=int, default=None)
    sp = sub.add_parser("check", help="joint-distribution test of the sampler and DGP recovery suite")
    sp.add_argument("--n-rep", type=int, default=5000)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--threads", type=int, default=None)
    sp.add_argument("--fault-injection", choices=["lambda"], default=None,
                    help="deliberately corrupt a Gibbs step; the check must then fail")
    sp.add_argument("--no-recovery", action="store_true", help="skip the DGP recovery suite")
    sp.add_argument("--output", default=None, help="write the z-table CSV here instead of standard output")
    return p


COMMANDS = {
    "estimate": cmd_estimate,
    "identify": cmd_identify,
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "check": cmd_check,
}


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except tuple(MODULE_OF) as exc:
        module = next(m for cls, m in MODULE_OF.items() if isinstance(exc, cls))
        print(f"tvpsvar {args.command}: error in {module}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"tvpsvar {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
