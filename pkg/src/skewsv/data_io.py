"""Time-series ingestion, validation, differencing and CSV round-tripping."""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass
class TimeSeries:
    """Ordered (date, value) pairs with a free-form label.

    Dates must be strictly increasing; values finite; length >= 1.
    """

    dates: list
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if len(self.dates) != len(self.values):
            raise DataError(
                f"{len(self.dates)} dates vs {len(self.values)} values"
            )
        if len(self.values) < 1:
            raise DataError("series must have at least one observation")
        if not np.all(np.isfinite(self.values)):
            bad = int(np.flatnonzero(~np.isfinite(self.values))[0])
            raise DataError(f"non-finite value at {self.dates[bad]}")
        for a, b in zip(self.dates, self.dates[1:]):
            if not a < b:
                raise DataError(f"dates not strictly increasing at {b}")

    def __len__(self):
        return len(self.values)


def monthly_dates(n: int, start: dt.date = dt.date(2000, 1, 1)) -> list:
    """Synthetic first-of-month date index of length n (for simulated data)."""
    out = []
    y, m = start.year, start.month
    for _ in range(n):
        out.append(dt.date(y, m, 1))
        m += 1
        if m > 12:
            y, m = y + 1, 1
    return out


def _parse_date(text: str, date_format: str) -> dt.date:
    return dt.datetime.strptime(text.strip(), date_format).date()


def read_csv(path, date_column="date", value_column="value",
             date_format="%Y-%m-%d", label=None) -> TimeSeries:
    """Read a (date, value) series from a headed CSV file.

    Rows are sorted by date after parsing; duplicate dates and NaN values are
    rejected with the offending line number or date in the message.
    """
    rows = []
    try:
        fh_ctx = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with fh_ctx as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file, header row required")
        for col in (date_column, value_column):
            if col not in reader.fieldnames:
                raise DataError(f"{path}: missing column {col!r}")
        for lineno, row in enumerate(reader, start=2):
            try:
                d = _parse_date(row[date_column], date_format)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad date: {exc}") from None
            try:
                v = float(row[value_column])
            except (TypeError, ValueError):
                raise DataError(
                    f"{path}:{lineno}: bad value {row[value_column]!r}"
                ) from None
            if not math.isfinite(v):
                raise DataError(f"{path}:{lineno}: non-finite value")
            rows.append((d, v))
    if not rows:
        raise DataError(f"{path}: no data rows")
    rows.sort(key=lambda r: r[0])
    for (d1, _), (d2, _) in zip(rows, rows[1:]):
        if d1 == d2:
            raise DataError(f"{path}: duplicate date {d1.isoformat()}")
    dates = [r[0] for r in rows]
    values = np.array([r[1] for r in rows])
    return TimeSeries(dates, values, label=label or str(path))


def write_csv(series: TimeSeries, path, date_column="date",
              value_column="value") -> None:
    """Write a series as CSV with 17-significant-digit decimal values."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([date_column, value_column])
        for d, v in zip(series.dates, series.values):
            writer.writerow([d.isoformat(), format(v, ".17g")])


def diff(series: TimeSeries) -> TimeSeries:
    """First differences, dated at the later endpoint of each pair."""
    if len(series) < 2:
        raise DataError("need at least 2 observations to difference")
    return TimeSeries(
        dates=series.dates[1:],
        values=np.diff(series.values),
        label=f"diff({series.label})" if series.label else "diff",
    )
