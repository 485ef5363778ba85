"""Posterior reduction: static-parameter quantile tables and time-indexed
quantile bands for the volatility scale, the shape path, and its skewness
transform.

Quantiles use linear interpolation of the empirical CDF (numpy's default
"linear" rule, a.k.a. type 7); stated here because defaults differ across
languages.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .sampler import PosteriorDraws
from .skew_normal import gamma_of_lambda

# Table layout: mu_h, phi_h, sigma_h, |sigma_lambda|, alpha_0
TABLE1_COLUMNS = ("$\\mu_h$", "$\\phi_h$", "$\\sigma_h$",
                  "$\\sigma_{\\lambda}$", "$\\alpha_{0}$")
_TABLE1_SOURCE = ("mu_h", "phi_h", "sigma_h", "sigma_lambda", "alpha_0")

BAND_KINDS = ("scale", "lambda", "gamma")


class SummaryError(ValueError):
    pass


@dataclass
class QuantileBand:
    """Per-time-index quantiles and mean; ordering q05<=q25<=q50<=q75<=q95."""

    index: list
    q05: np.ndarray
    q25: np.ndarray
    q50: np.ndarray
    q75: np.ndarray
    q95: np.ndarray
    mean: np.ndarray


def quantile(draws, q, axis=None):
    """Type-7 (linear interpolation) empirical quantile."""
    return np.quantile(np.asarray(draws, dtype=float), q, axis=axis,
                       method="linear")


def static_summary(draws: PosteriorDraws, label: str = ""):
    """Rows q05 / Mean / q95 over the five reported static parameters.

    sigma_lambda's sign is unidentified, so its column summarizes
    |sigma_lambda|. Returns (row_labels, column_labels, 3x5 array).
    """
    if len(draws.statics) == 0:
        raise SummaryError("empty draws")
    cols = []
    for name in _TABLE1_SOURCE:
        v = draws.statics[:, draws.param_names.index(name)]
        if name == "sigma_lambda":
            v = np.abs(v)
        cols.append(v)
    mat = np.column_stack(cols)
    table = np.vstack([
        quantile(mat, 0.05, axis=0),
        mat.mean(axis=0),
        quantile(mat, 0.95, axis=0),
    ])
    prefix = f"{label} " if label else ""
    rows = (f"{prefix}q05", f"{prefix}Mean", f"{prefix}q95")
    return rows, TABLE1_COLUMNS, table


def band(draws: PosteriorDraws, which: str, index=None) -> QuantileBand:
    """Quantile band over time for one latent functional.

    which = "scale": exp(h_t/2) applied draw-wise (t = 1..T);
    "lambda": the shape path; "gamma": the skewness transform of the shape
    path (monotone, so band ordering carries over).
    """
    if which not in BAND_KINDS:
        raise SummaryError(f"unknown band selector {which!r}")
    if len(draws.lam) == 0:
        raise SummaryError("no latent draws")
    if which == "scale":
        mat = np.exp(draws.h[:, 1:] / 2.0)
    elif which == "lambda":
        mat = draws.lam
    else:
        mat = gamma_of_lambda(draws.lam)
    T = mat.shape[1]
    idx = list(index) if index is not None else list(range(1, T + 1))
    if len(idx) != T:
        raise SummaryError(f"index length {len(idx)} != T {T}")
    return QuantileBand(
        index=idx,
        q05=quantile(mat, 0.05, axis=0),
        q25=quantile(mat, 0.25, axis=0),
        q50=quantile(mat, 0.50, axis=0),
        q75=quantile(mat, 0.75, axis=0),
        q95=quantile(mat, 0.95, axis=0),
        mean=mat.mean(axis=0),
    )


def format_table(rows, cols, table, corner="") -> str:
    """Delimited-text rendering with a leading row-label column."""
    out = io.StringIO()
    out.write(",".join([corner] + list(cols)) + "\n")
    for label, row in zip(rows, np.asarray(table)):
        out.write(",".join([label] + [format(v, ".6g") for v in row]) + "\n")
    return out.getvalue()


def write_band(b: QuantileBand, path) -> None:
    """Band file: date/index, q05, q25, mean, q75, q95 per row."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("date,q05,q25,mean,q75,q95\n")
        for i, d in enumerate(b.index):
            fh.write(",".join([str(d)] + [
                format(v, ".17g")
                for v in (b.q05[i], b.q25[i], b.mean[i], b.q75[i], b.q95[i])
            ]) + "\n")
