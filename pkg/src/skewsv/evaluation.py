"""Empirical procedures: expanding-window sign forecasting, explanatory
regression of the posterior-mean shape path on macro covariates, and
volatility-regime return statistics.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import model, sampler, summaries
from .data_io import TimeSeries
from .model import ModelConfig, StaticParams
from .sampler import HmcConfig

RHAT_FORECAST_LIMIT = 1.2
_MONITORED = ("mu_h", "phi_h", "sigma_h")


class EvaluationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# expanding-window sign forecast

@dataclass
class WindowRecord:
    date: object            # date of the predicted observation y_{t+1}
    predicted_sign: int     # +1, -1, or 0 (no prediction)
    realized_sign: int
    abs_y: float
    lambda_mean: float
    converged: bool


@dataclass
class ForecastReport:
    hit_ratio: float
    avg_abs_when_right: float
    avg_abs_when_wrong: float
    frac_positive: float
    n_windows: int
    n_right: int
    n_wrong: int
    n_no_prediction: int
    n_excluded: int
    records: list = field(default_factory=list)


def expanding_window_eval(y: TimeSeries, model_config: ModelConfig,
                          hmc_config: HmcConfig,
                          first_window_end) -> ForecastReport:
    """Refit on each expanding window and score the sign of the next move.

    The random walk makes the one-step-ahead expectation of the shape equal
    to its current value, so the prediction is the sign of the posterior
    mean of lambda_T for the window. Windows whose chains fail the R-hat
    gate are excluded and counted; an exactly-zero posterior mean counts as
    "no prediction" and leaves the hit-ratio denominator.
    """
    n = len(y)
    try:
        t0 = next(i for i, d in enumerate(y.dates) if d >= first_window_end)
    except StopIteration:
        raise EvaluationError("first_window_end beyond the sample") from None
    t0 = max(t0, 1)
    if t0 + 1 < 50:
        raise EvaluationError("first window must hold at least 50 points")
    if t0 + 1 >= n:
        raise EvaluationError("no out-of-sample points after first window")

    records = []
    prev_means = None
    for t in range(t0, n - 1):
        window = TimeSeries(y.dates[:t + 1], y.values[:t + 1], label=y.label)
        cfg_w = sampler.HmcConfig(
            n_iter=hmc_config.n_iter, n_burnin=hmc_config.n_burnin,
            leapfrog_steps=hmc_config.leapfrog_steps,
            jitter_steps=hmc_config.jitter_steps,
            initial_step_size=hmc_config.initial_step_size,
            target_accept=hmc_config.target_accept,
            mass_diag=hmc_config.mass_diag,
            seed=hmc_config.seed + 1000 * (t - t0 + 1),
            n_chains=hmc_config.n_chains, thin=hmc_config.thin,
            threads=hmc_config.threads)
        draws, diag = sampler.run_chains(window, model_config, cfg_w,
                                         init_statics=prev_means)
        m = draws.statics.mean(axis=0)
        prev_means = StaticParams(
            mu_h=m[0], phi_h=float(np.clip(m[1], -0.99, 0.99)),
            sigma_h=max(m[2], 1e-3), alpha_0=m[3], sigma_lambda=m[4],
            kappa_alpha=max(m[5], 1e-3), kappa_sigma=max(m[6], 1e-3))
        converged = all(diag.rhat[p] <= RHAT_FORECAST_LIMIT
                        for p in _MONITORED)
        lam_mean = float(draws.lam[:, -1].mean()) \
            if model_config.skew_mode != "none" else 0.0
        y_next = float(y.values[t + 1])
        records.append(WindowRecord(
            date=y.dates[t + 1],
            predicted_sign=int(np.sign(lam_mean)),
            realized_sign=int(np.sign(y_next)) if y_next != 0 else 1,
            abs_y=abs(y_next),
            lambda_mean=lam_mean,
            converged=converged,
        ))
    return _aggregate_forecast(records)


def _aggregate_forecast(records) -> ForecastReport:
    usable = [r for r in records if r.converged]
    decided = [r for r in usable if r.predicted_sign != 0]
    right = [r for r in decided if r.predicted_sign == r.realized_sign]
    wrong = [r for r in decided if r.predicted_sign != r.realized_sign]
    n_dec = len(decided)
    return ForecastReport(
        hit_ratio=len(right) / n_dec if n_dec else math.nan,
        avg_abs_when_right=float(np.mean([r.abs_y for r in right]))
        if right else math.nan,
        avg_abs_when_wrong=float(np.mean([r.abs_y for r in wrong]))
        if wrong else math.nan,
        frac_positive=float(np.mean([r.realized_sign > 0 for r in usable]))
        if usable else math.nan,
        n_windows=len(records),
        n_right=len(right),
        n_wrong=len(wrong),
        n_no_prediction=len(usable) - n_dec,
        n_excluded=len(records) - len(usable),
        records=records,
    )


def format_forecast_report(report: ForecastReport, label: str = "") -> str:
    rows = ("Hit Ratio", "Avg when right", "Avg when wrong", "$y_{t+1} > 0$")
    vals = (report.hit_ratio, report.avg_abs_when_right,
            report.avg_abs_when_wrong, report.frac_positive)
    out = io.StringIO()
    out.write("," + (label or "value") + "\n")
    for r, v in zip(rows, vals):
        out.write(f"{r},{v:.6g}\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# explanatory regression

@dataclass
class CoefficientSummary:
    name: str
    q05: float
    mean: float
    q95: float


@dataclass
class RegressionReport:
    coefficients: list
    residual_sd_q05: float
    residual_sd_mean: float
    residual_sd_q95: float
    n_obs: int


# near-flat conjugate normal-inverse-gamma prior
_COEF_PRECISION = 1e-4
_SIGMA2_SHAPE = 0.01
_SIGMA2_SCALE = 0.01


def lambda_regression(lambda_mean: TimeSeries, covariates: dict,
                      names=None) -> RegressionReport:
    """Bayesian linear regression of the posterior-mean shape path on
    covariates under a near-flat conjugate prior.

    covariates maps name -> TimeSeries; all series must share the response's
    dates exactly. Coefficient marginals are Student-t; the report carries
    q05/mean/q95 per coefficient plus the residual-sd summary.
    """
    names = list(names) if names is not None else list(covariates)
    n = len(lambda_mean)
    if n < 10:
        raise EvaluationError("need at least 10 observations")
    cols = [np.ones(n)]
    for name in names:
        series = covariates[name]
        if series.dates != lambda_mean.dates:
            raise EvaluationError(f"covariate {name!r} dates misaligned")
        cols.append(series.values)
    X = np.column_stack(cols)
    p = X.shape[1]
    if np.linalg.matrix_rank(X) < p:
        raise EvaluationError("covariate matrix is rank deficient")
    yv = lambda_mean.values

    P0 = _COEF_PRECISION * np.eye(p)
    Pn = X.T @ X + P0
    beta_n = np.linalg.solve(Pn, X.T @ yv)
    a_n = _SIGMA2_SHAPE + 0.5 * n
    b_n = _SIGMA2_SCALE + 0.5 * float(yv @ yv - beta_n @ Pn @ beta_n)
    Vn = np.linalg.inv(Pn)

    coef_names = ["Intercept"] + names
    coefs = []
    df = 2.0 * a_n
    for i, name in enumerate(coef_names):
        scale = math.sqrt(b_n / a_n * Vn[i, i])
        tq = stats.t.ppf(0.95, df)
        coefs.append(CoefficientSummary(
            name=name,
            q05=beta_n[i] - tq * scale,
            mean=float(beta_n[i]),
            q95=beta_n[i] + tq * scale,
        ))
    # sigma^2 ~ IG(a_n, b_n); sigma quantiles via the inverse-gamma ppf
    s2_q05 = stats.invgamma.ppf(0.05, a_n, scale=b_n)
    s2_q95 = stats.invgamma.ppf(0.95, a_n, scale=b_n)
    sd_mean = math.sqrt(b_n) * math.exp(
        math.lgamma(a_n - 0.5) - math.lgamma(a_n)) if a_n > 0.5 else math.nan
    return RegressionReport(
        coefficients=coefs,
        residual_sd_q05=math.sqrt(s2_q05),
        residual_sd_mean=sd_mean,
        residual_sd_q95=math.sqrt(s2_q95),
        n_obs=n,
    )


def format_regression_report(report: RegressionReport,
                             label: str = "") -> str:
    prefix = f"{label} " if label else ""
    out = io.StringIO()
    out.write("," + ",".join(c.name for c in report.coefficients) + "\n")
    for stat in ("q05", "mean", "q95"):
        vals = [format(getattr(c, stat), ".6g") for c in report.coefficients]
        out.write(f"{prefix}{stat}," + ",".join(vals) + "\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# volatility-regime statistics

@dataclass
class RegimeStats:
    n: int
    mean: float
    sd: float
    q05: float
    min: float
    empty: bool = False


@dataclass
class RegimeReport:
    high: RegimeStats
    low: RegimeStats
    threshold: float


def _regime_stats(values: np.ndarray) -> RegimeStats:
    if len(values) == 0:
        return RegimeStats(n=0, mean=math.nan, sd=math.nan, q05=math.nan,
                           min=math.nan, empty=True)
    return RegimeStats(
        n=len(values),
        mean=float(values.mean()),
        sd=float(values.std(ddof=1)) if len(values) > 1 else math.nan,
        q05=float(summaries.quantile(values, 0.05)),
        min=float(values.min()),
    )


def regime_stats(y: TimeSeries, scale_mean: TimeSeries) -> RegimeReport:
    """Partition returns by whether the posterior-mean scale exceeds its
    full-sample average (ties go to the low regime)."""
    if y.dates != scale_mean.dates:
        raise EvaluationError("return and scale series dates misaligned")
    threshold = float(scale_mean.values.mean())
    high = scale_mean.values > threshold
    return RegimeReport(
        high=_regime_stats(y.values[high]),
        low=_regime_stats(y.values[~high]),
        threshold=threshold,
    )


def format_regime_report(report: RegimeReport) -> str:
    out = io.StringIO()
    out.write(",High Vol,Low Vol\n")
    for row, attr in (("Mean", "mean"), ("Sd", "sd"), ("Q05", "q05"),
                      ("Min", "min")):
        hi = getattr(report.high, attr)
        lo = getattr(report.low, attr)
        fmt = lambda v, empty: "empty" if empty else format(v, ".6g")
        out.write(f"{row},{fmt(hi, report.high.empty)},"
                  f"{fmt(lo, report.low.empty)}\n")
    return out.getvalue()
