"""Batch command-line front end.

Subcommands: simulate, fit, summarize, eval-forecast, regress, regimes,
check. Every command is driven by a flat key = value config file plus
--set overrides (flags win over file values); the effective config is
echoed into each output directory and a MANIFEST lists what was written.

Exit codes: 0 success, 2 config error, 3 data error, 4 convergence error.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import hashlib
import math
import os
import sys

import numpy as np

from . import evaluation, model, sampler, skew_normal, summaries
from .data_io import DataError, TimeSeries, read_csv, write_csv
from .evaluation import EvaluationError
from .model import ModelConfig, ModelError, StaticParams
from .sampler import HmcConfig, SamplerError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CONVERGENCE = 4


class ConfigError(ValueError):
    pass


_MODEL_KEYS = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
_HMC_KEYS = {f.name: f.type for f in dataclasses.fields(HmcConfig)}
_SIM_KEYS = ("sim_T", "sim_mu_h", "sim_phi_h", "sim_sigma_h",
             "sim_alpha_0", "sim_sigma_lambda")
_INT_KEYS = {"n_iter", "n_burnin", "leapfrog_steps", "seed", "n_chains",
             "thin", "threads", "sim_T"}
_BOOL_KEYS = {"jitter_steps"}
_STR_KEYS = {"profile", "skew_mode", "mass_diag"}


def _coerce(key, raw):
    raw = raw.strip()
    if key in _STR_KEYS:
        return raw
    if key in _BOOL_KEYS:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"bad boolean for {key}: {raw!r}")
    try:
        return int(raw) if key in _INT_KEYS else float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def read_config_file(path) -> dict:
    """Flat key = value document; '#' starts a comment."""
    out = {}
    try:
        lines = open(path, encoding="utf-8").read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for i, line in enumerate(lines, start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:{i}: expected key = value")
        key, _, val = body.partition("=")
        out[key.strip()] = val.strip()
    return out


def build_configs(file_values: dict, overrides: dict):
    """Merge defaults, file values and flag overrides into the three config
    objects (model, hmc, simulation truth)."""
    merged = dict(file_values)
    merged.update(overrides)
    known = (set(_MODEL_KEYS) | set(_HMC_KEYS) | set(_SIM_KEYS)
             | {"profile"})
    unknown = set(merged) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    profile = merged.pop("profile", "bonds")
    model_kwargs, hmc_kwargs, sim_kwargs = {}, {}, {}
    for key, raw in merged.items():
        val = _coerce(key, raw) if isinstance(raw, str) else raw
        if key in _MODEL_KEYS:
            model_kwargs[key] = val
        elif key in _HMC_KEYS:
            hmc_kwargs[key] = val
        else:
            sim_kwargs[key] = val
    try:
        m_cfg = model.default_config(profile, **model_kwargs)
        h_cfg = HmcConfig(**hmc_kwargs)
    except (ModelError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    return m_cfg, h_cfg, sim_kwargs, profile


def effective_config_text(m_cfg, h_cfg, sim_kwargs, profile) -> str:
    lines = [f"profile = {profile}"]
    for f in dataclasses.fields(m_cfg):
        lines.append(f"{f.name} = {getattr(m_cfg, f.name)}")
    for f in dataclasses.fields(h_cfg):
        lines.append(f"{f.name} = {getattr(h_cfg, f.name)}")
    for key in _SIM_KEYS:
        if key in sim_kwargs:
            lines.append(f"{key} = {sim_kwargs[key]}")
    return "\n".join(lines) + "\n"


def config_hash(m_cfg: ModelConfig, series: TimeSeries = None) -> str:
    """Digest binding a draws directory to its model config and data."""
    h = hashlib.sha256()
    for f in dataclasses.fields(m_cfg):
        h.update(f"{f.name}={getattr(m_cfg, f.name)};".encode())
    if series is not None:
        h.update(str(len(series)).encode())
        h.update(np.asarray(series.values).tobytes())
        h.update(",".join(d.isoformat() for d in series.dates).encode())
    return h.hexdigest()[:16]


def _write_outputs(outdir, files, config_text=None):
    os.makedirs(outdir, exist_ok=True)
    written = list(files)
    if config_text is not None:
        cfg_path = os.path.join(outdir, "config.txt")
        with open(cfg_path, "w", encoding="utf-8") as fh:
            fh.write(config_text)
        written.append(cfg_path)
    manifest = os.path.join(outdir, "MANIFEST")
    with open(manifest, "w", encoding="utf-8") as fh:
        for f in sorted(written):
            fh.write(os.path.relpath(f, outdir) + "\n")
    return written + [manifest]


def _save_text(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args, m_cfg, h_cfg, sim_kwargs, cfg_text):
    T = int(sim_kwargs.get("sim_T", 450))
    truth = StaticParams(
        mu_h=sim_kwargs.get("sim_mu_h", 3.88),
        phi_h=sim_kwargs.get("sim_phi_h", 0.96),
        sigma_h=sim_kwargs.get("sim_sigma_h", 0.42),
        alpha_0=sim_kwargs.get("sim_alpha_0", -0.06),
        sigma_lambda=sim_kwargs.get("sim_sigma_lambda", 0.17),
    )
    rng = np.random.default_rng(h_cfg.seed)
    y, paths = model.simulate(truth, T, rng, skew_mode=m_cfg.skew_mode)
    os.makedirs(args.out, exist_ok=True)
    files = []
    ypath = os.path.join(args.out, "y.csv")
    write_csv(y, ypath)
    files.append(ypath)
    hseries = TimeSeries([y.dates[0] - dt.timedelta(days=1)] + y.dates,
                         paths.h, label="h")
    hpath = os.path.join(args.out, "true_h.csv")
    write_csv(hseries, hpath, value_column="h")
    files.append(hpath)
    lpath = os.path.join(args.out, "true_lambda.csv")
    write_csv(TimeSeries(y.dates, paths.lam, label="lambda"), lpath,
              value_column="lambda")
    files.append(lpath)
    _write_outputs(args.out, files, cfg_text)
    print(f"simulated T={T} into {args.out}")
    return EXIT_OK


def _fit_outputs(outdir, y, draws, diag, m_cfg, cfg_text):
    os.makedirs(outdir, exist_ok=True)
    files = sampler.save_draws(draws, outdir, config_hash(m_cfg, y))
    rows, cols, table = summaries.static_summary(draws, label=y.label or "")
    files.append(_save_text(os.path.join(outdir, "static_summary.csv"),
                            summaries.format_table(rows, cols, table)))
    for kind in summaries.BAND_KINDS:
        b = summaries.band(draws, kind, index=y.dates)
        path = os.path.join(outdir, f"band_{kind}.csv")
        summaries.write_band(b, path)
        files.append(path)
    diag_lines = ["parameter,rhat,ess"]
    for name in draws.param_names:
        diag_lines.append(f"{name},{diag.rhat[name]:.6g},"
                          f"{diag.ess[name]:.6g}")
    diag_lines.append(f"mean_accept,{diag.mean_accept:.6g},")
    diag_lines.append(f"divergences,{diag.divergence_count},")
    files.append(_save_text(os.path.join(outdir, "diagnostics.csv"),
                            "\n".join(diag_lines) + "\n"))
    _write_outputs(outdir, files, cfg_text)


def cmd_fit(args, m_cfg, h_cfg, sim_kwargs, cfg_text):
    y = read_csv(args.data, label=os.path.basename(args.data))
    draws, diag = sampler.run_chains(y, m_cfg, h_cfg)
    _fit_outputs(args.out, y, draws, diag, m_cfg, cfg_text)
    worst = max(diag.rhat.values())
    print(f"fit complete: {len(draws.statics)} retained draws, "
          f"max rhat {worst:.3f}, {diag.divergence_count} divergences")
    return EXIT_OK


def cmd_summarize(args, m_cfg, h_cfg, sim_kwargs, cfg_text):
    draws, stored_hash = sampler.load_draws(args.draws)
    os.makedirs(args.out, exist_ok=True)
    files = []
    rows, cols, table = summaries.static_summary(draws)
    files.append(_save_text(os.path.join(args.out, "static_summary.csv"),
                            summaries.format_table(rows, cols, table)))
    for kind in summaries.BAND_KINDS:
        b = summaries.band(draws, kind)
        path = os.path.join(args.out, f"band_{kind}.csv")
        summaries.write_band(b, path)
        files.append(path)
    _write_outputs(args.out, files,
                   f"source_draws = {args.draws}\n"
                   f"config_hash = {stored_hash}\n")
    print(f"summaries regenerated from {args.draws}")
    return EXIT_OK


def cmd_eval_forecast(args, m_cfg, h_cfg, sim_kwargs, cfg_text):
    y = read_csv(args.data, label=os.path.basename(args.data))
    try:
        first_end = dt.date.fromisoformat(args.first_window_end)
    except ValueError as exc:
        raise ConfigError(f"bad --first-window-end: {exc}") from None
    report = evaluation.expanding_window_eval(y, m_cfg, h_cfg, first_end)
    os.makedirs(args.out, exist_ok=True)
    files = [_save_text(
        os.path.join(args.out, "forecast_report.csv"),
        evaluation.format_forecast_report(report, label=y.label))]
    rec_lines = ["date,predicted_sign,realized_sign,abs_y,lambda_mean,"
                 "converged"]
    for r in report.records:
        rec_lines.append(f"{r.date.isoformat()},{r.predicted_sign},"
                         f"{r.realized_sign},{r.abs_y:.17g},"
                         f"{r.lambda_mean:.17g},{int(r.converged)}")
    files.append(_save_text(os.path.join(args.out, "windows.csv"),
                            "\n".join(rec_lines) + "\n"))
    _write_outputs(args.out, files, cfg_text)
    print(f"hit ratio {report.hit_ratio:.3f} over "
          f"{report.n_right + report.n_wrong} decided windows "
          f"({report.n_excluded} excluded, "
          f"{report.n_no_prediction} no-prediction)")
    return EXIT_OK


def cmd_regress(args, m_cfg, h_cfg, sim_kwargs, cfg_text):
    lam = read_csv(args.lambda_file, label="lambda")
    covs, names = {}, []
    for path in args.covariates:
        name = os.path.splitext(os.path.basename(path))[0]
        covs[name] = read_csv(path, label=name)
        names.append(name)
    report = evaluation.lambda_regression(lam, covs, names=names)
    os.makedirs(args.out, exist_ok=True)
    files = [_save_text(
        os.path.join(args.out, "regression_report.csv"),
        evaluation.format_regression_report(report, label=args.label))]
    _write_outputs(args.out, files, cfg_text)
    print(f"regression on {report.n_obs} observations: "
          + ", ".join(f"{c.name}={c.mean:.4g}" for c in report.coefficients))
    return EXIT_OK


def cmd_regimes(args, m_cfg, h_cfg, sim_kwargs, cfg_text):
    y = read_csv(args.data, label=os.path.basename(args.data))
    scale = read_csv(args.scale, label="scale")
    report = evaluation.regime_stats(y, scale)
    os.makedirs(args.out, exist_ok=True)
    files = [_save_text(os.path.join(args.out, "regime_report.csv"),
                        evaluation.format_regime_report(report))]
    _write_outputs(args.out, files, cfg_text)
    print(f"regimes split at scale {report.threshold:.6g}: "
          f"high n={report.high.n}, low n={report.low.n}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# self-check suites

def _check_gradients(full):
    rng = np.random.default_rng(20240101)
    n_points = 100 if full else 20
    sizes = (5, 50) if full else (5,)
    cfg = model.default_config()
    worst = 0.0
    for T in sizes:
        y = rng.standard_normal(T)
        for _ in range(n_points):
            x = rng.standard_normal(model.dim_for(T)) * 0.7
            g = model.log_posterior_grad(x, y, cfg)
            eps = 1e-5
            for i in range(len(x)):
                xp, xm = x.copy(), x.copy()
                xp[i] += eps
                xm[i] -= eps
                fd = (model.log_posterior(xp, y, cfg)
                      - model.log_posterior(xm, y, cfg)) / (2 * eps)
                err = abs(g[i] - fd) / max(abs(fd), 1e-2)
                worst = max(worst, err)
    return worst < 1e-5, f"max relative gradient error {worst:.3g}"


def _check_quadrature(full):
    from scipy.integrate import quad
    worst = 0.0
    for lam in (-5.0, -1.0, 0.0, 1.0, 5.0):
        total, _ = quad(
            lambda z, l=lam: math.exp(skew_normal.log_pdf_standard(z, l)),
            -12, 12, limit=200)
        worst = max(worst, abs(total - 1.0))
    return worst < 1e-8, f"max |integral - 1| = {worst:.3g}"


def _check_moments(full):
    rng = np.random.default_rng(7)
    n = 10_000_000 if full else 200_000
    ok = True
    msgs = []
    for lam in (-3.0, 0.0, 2.0):
        draws = skew_normal.sample(lam, rng, size=n)
        m = skew_normal.moments(skew_normal.SkewNormalParams(0.0, 1.0, lam))
        se = math.sqrt(m.variance / n)
        err = abs(draws.mean() - m.mean)
        ok = ok and err < 4 * se
        msgs.append(f"lam={lam}: |mc-analytic|={err:.2e} (4se={4*se:.2e})")
    return ok, "; ".join(msgs)


def _check_sampler(full):
    rng = np.random.default_rng(42)
    dim = 10
    lp = lambda x: -0.5 * float(x @ x)
    grad = lambda x: -x
    q = rng.standard_normal(dim)
    lpv = lp(q)
    n_iter = 6000 if full else 3000
    step = 0.4
    da = sampler.DualAveraging(step, 0.8)
    draws = []
    for it in range(n_iter):
        q, lpv, _, _, ap = sampler.hmc_step(q, lp, grad, step, 8, rng,
                                            lp_current=lpv)
        if it < 1000:
            da.update(ap)
            step = da.step_size if it < 999 else da.adapted_step_size
        else:
            draws.append(q.copy())
    D = np.asarray(draws)
    mean_ok = np.abs(D.mean(axis=0)).max() < 0.08
    var_ok = np.all(np.abs(D.var(axis=0) - 1.0) < 0.15)
    return mean_ok and var_ok, (
        f"gaussian target: max|mean|={np.abs(D.mean(axis=0)).max():.3f}, "
        f"max|var-1|={np.abs(D.var(axis=0) - 1.0).max():.3f}")


def cmd_check(args, m_cfg, h_cfg, sim_kwargs, cfg_text):
    full = args.full
    suites = (("gradient/finite-difference", _check_gradients),
              ("density quadrature", _check_quadrature),
              ("Monte-Carlo moments", _check_moments),
              ("known-target sampler", _check_sampler))
    failures = 0
    for name, fn in suites:
        ok, detail = fn(full)
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failures += 0 if ok else 1
    return EXIT_OK if failures == 0 else 1


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="skewsv",
        description="Stochastic volatility with sparsity-selected dynamic "
                    "skewness.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", default=[],
                       metavar="KEY=VALUE", dest="overrides",
                       help="override one config value (repeatable)")
        p.add_argument("--seed", type=int, help="override the sampler seed")
        p.add_argument("--threads", type=int,
                       help="chain/window parallelism (default from config)")
        if out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("simulate", help="write simulated data + true paths")
    common(p)

    p = sub.add_parser("fit", help="run HMC and persist draws + summaries")
    common(p)
    p.add_argument("--data", required=True, help="input CSV (date,value)")

    p = sub.add_parser("summarize", help="regenerate tables/bands")
    common(p)
    p.add_argument("--draws", required=True, help="draws directory")

    p = sub.add_parser("eval-forecast", help="expanding-window sign hits")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--first-window-end", required=True,
                   help="ISO date closing the first estimation window")

    p = sub.add_parser("regress", help="explain the recovered shape path")
    common(p)
    p.add_argument("--lambda", required=True, dest="lambda_file",
                   help="posterior-mean lambda CSV")
    p.add_argument("--covariates", required=True, nargs="+",
                   help="covariate CSVs (name taken from file name)")
    p.add_argument("--label", default="", help="row-label prefix")

    p = sub.add_parser("regimes", help="high/low volatility return stats")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--scale", required=True,
                   help="posterior-mean scale CSV")

    p = sub.add_parser("check", help="numerical self-check suites")
    common(p, out=False)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--quick", action="store_true")
    group.add_argument("--full", action="store_true")

    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "summarize": cmd_summarize,
    "eval-forecast": cmd_eval_forecast,
    "regress": cmd_regress,
    "regimes": cmd_regimes,
    "check": cmd_check,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        file_values = read_config_file(args.config) if args.config else {}
        overrides = {}
        for item in args.overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, _, val = item.partition("=")
            overrides[key.strip()] = val.strip()
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        if args.threads is not None:
            overrides["threads"] = str(args.threads)
        m_cfg, h_cfg, sim_kwargs, profile = build_configs(file_values,
                                                          overrides)
        cfg_text = effective_config_text(m_cfg, h_cfg, sim_kwargs, profile)
        return _COMMANDS[args.command](args, m_cfg, h_cfg, sim_kwargs,
                                       cfg_text)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, EvaluationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SamplerError,) as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
