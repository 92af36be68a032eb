"""Loading, splicing and transforming annual macro series.

Series are indexed by integer years.  The estimation panel holds
percent log-growth rates (``100 * diff(log(level))``) for the variables
that are differenced and raw levels for the ones that are not (an
interest rate, say).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed input files or invalid series operations."""


@dataclass(frozen=True)
class RawSeries:
    """One annual series in levels; ``nan`` marks a missing year."""

    name: str
    dates: np.ndarray
    values: np.ndarray
    unit: str = ""

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        if dates.ndim != 1 or values.shape != dates.shape:
            raise DataError(f"{self.name}: dates and values must be 1-D of equal length")
        if dates.size < 2:
            raise DataError(f"{self.name}: a series needs at least two years")
        if np.any(np.diff(dates) != 1):
            raise DataError(f"{self.name}: years must be strictly increasing in steps of 1")
        if np.any(np.isinf(values)):
            raise DataError(f"{self.name}: values must be finite where present")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "values", values)

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def value_at(self, year: int) -> float:
        idx = int(year) - int(self.dates[0])
        if idx < 0 or idx >= self.dates.size:
            return math.nan
        return float(self.values[idx])

    def coverage(self) -> tuple[int, int]:
        """First and last year with a value."""
        idx = np.flatnonzero(self.present)
        if idx.size == 0:
            raise DataError(f"{self.name}: series has no values")
        return int(self.dates[idx[0]]), int(self.dates[idx[-1]])


@dataclass(frozen=True)
class TimeSeriesPanel:
    """Aligned annual observations, ``data`` is ``(T, n)``."""

    variables: tuple[str, ...]
    dates: np.ndarray
    data: np.ndarray
    mask: np.ndarray | None = None
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype=np.int64)
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape != (dates.size, len(self.variables)):
            raise DataError("panel data must be (len(dates), len(variables))")
        if dates.size and np.any(np.diff(dates) != 1):
            raise DataError("panel dates must be contiguous years")
        mask = np.isfinite(data) if self.mask is None else np.asarray(self.mask, dtype=bool)
        if mask.shape != data.shape:
            raise DataError("mask shape does not match data")
        if not np.all(np.isfinite(data[mask])):
            raise DataError("panel entries marked available must be finite")
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def n(self) -> int:
        return len(self.variables)

    @property
    def T(self) -> int:
        return int(self.dates.size)

    def slice_rows(self, start: int, stop: int | None = None) -> "TimeSeriesPanel":
        return TimeSeriesPanel(
            self.variables, self.dates[start:stop], self.data[start:stop], self.mask[start:stop], self.meta
        )

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["year", *self.variables])
            for year, row, ok in zip(self.dates, self.data, self.mask):
                writer.writerow([int(year)] + [repr(float(v)) if m else "" for v, m in zip(row, ok)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "TimeSeriesPanel":
        series = load_csv(path)
        if not series:
            raise DataError(f"{path}: no value columns")
        dates = series[0].dates
        data = np.column_stack([s.values for s in series])
        return cls(tuple(s.name for s in series), dates, data)


@dataclass(frozen=True)
class SampleSplit:
    """Training rows used for prior calibration and the estimation range."""

    training_len: int
    start: int
    end: int

    @classmethod
    def from_panel(cls, panel: TimeSeriesPanel, training_len: int = 50, lags: int = 2) -> "SampleSplit":
        if training_len < panel.n * lags + 10:
            raise DataError(
                f"training_len={training_len} too short for OLS with {panel.n} variables and {lags} lags"
            )
        if training_len >= panel.T:
            raise DataError(f"training_len={training_len} leaves no estimation sample (T={panel.T})")
        return cls(training_len, int(panel.dates[training_len]), int(panel.dates[-1]))


def load_csv(path: str | Path, schema: Mapping[str, str] | None = None, year_column: str = "year") -> list[RawSeries]:
    """Read an annual CSV into ``RawSeries``.

    Parameters
    ----------
    path : path to a UTF-8 CSV with a header row.
    schema : mapping ``series name -> column name``.  ``None`` reads every
        column other than ``year_column`` under its own name.
    year_column : name of the integer year column.

    Blank cells become missing values.  Row numbers in error messages
    count data rows from 1 (the header is not counted).
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)
    if year_column not in header:
        raise DataError(f"{path}: missing year column {year_column!r}")
    if schema is None:
        schema = {h: h for h in header if h != year_column}
    missing = [col for col in schema.values() if col not in header]
    if missing:
        raise DataError(f"{path}: required column(s) not found: {', '.join(missing)}")
    yidx = header.index(year_column)
    cols = {name: header.index(col) for name, col in schema.items()}

    years: list[int] = []
    values = {name: [] for name in schema}
    seen: dict[int, int] = {}
    for rownum, row in enumerate(rows, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        cell = row[yidx].strip() if yidx < len(row) else ""
        try:
            year = int(cell)
        except ValueError:
            raise DataError(f"{path}: row {rownum}: malformed year {cell!r}") from None
        if year in seen:
            raise DataError(f"{path}: row {rownum}: duplicate year {year} (first seen in row {seen[year]})")
        seen[year] = rownum
        years.append(year)
        for name, ci in cols.items():
            raw = row[ci].strip() if ci < len(row) else ""
            if raw == "":
                values[name].append(math.nan)
                continue
            try:
                val = float(raw)
            except ValueError:
                raise DataError(f"{path}: row {rownum}: non-numeric value {raw!r} in column {schema[name]!r}") from None
            if not math.isfinite(val):
                raise DataError(f"{path}: row {rownum}: non-finite value in column {schema[name]!r}")
            values[name].append(val)
    if len(years) < 2:
        raise DataError(f"{path}: need at least two data rows")
    order = np.argsort(years)
    dates = np.asarray(years)[order]
    full = np.arange(dates[0], dates[-1] + 1)
    out = []
    for name in schema:
        v = np.full(full.size, np.nan)
        v[dates - dates[0]] = np.asarray(values[name])[order]
        out.append(RawSeries(name, full, v))
    return out


def splice_by_growth(base: RawSeries, donor: RawSeries, join_year: int, direction: str = "backward") -> RawSeries:
    """Extend ``base`` beyond ``join_year`` using the growth rates of ``donor``.

    Backward: ``value[t] = value[t+1] / (donor[t+1] / donor[t])`` for every
    donor year before ``join_year``.  Forward is the mirror image.  Base
    values on the kept side of the join (``>= join_year`` for backward) are
    returned untouched; base values on the extension side are replaced.
    """
    if direction not in ("backward", "forward"):
        raise DataError(f"direction must be 'backward' or 'forward', got {direction!r}")
    join_year = int(join_year)
    anchor = base.value_at(join_year)
    if math.isnan(anchor):
        raise DataError(f"{base.name}: no value at join year {join_year}")
    if math.isnan(donor.value_at(join_year)):
        raise DataError(f"{donor.name}: no value at join year {join_year}")

    if direction == "backward":
        first, _ = donor.coverage()
        ext_years = np.arange(first, join_year)
        kept = base.dates >= join_year
    else:
        _, last = donor.coverage()
        ext_years = np.arange(join_year + 1, last + 1)
        kept = base.dates <= join_year
    dvals = np.array([donor.value_at(y) for y in ext_years])
    if np.any(np.isnan(dvals)):
        gap = int(ext_years[np.isnan(dvals)][0])
        raise DataError(f"{donor.name}: gap at {gap} inside the extension range")
    kept_vals = base.values[kept]
    touched = np.concatenate([dvals, [donor.value_at(join_year)], kept_vals[~np.isnan(kept_vals)]])
    if np.any(touched <= 0):
        raise DataError("splice requires strictly positive values (growth undefined)")

    if direction == "backward":
        # value[t] = anchor * donor[t] / donor[join]  computed as a chain of ratios
        ext = np.empty(ext_years.size)
        nxt_val, nxt_don = anchor, donor.value_at(join_year)
        for i in range(ext_years.size - 1, -1, -1):
            ext[i] = nxt_val / (nxt_don / dvals[i])
            nxt_val, nxt_don = ext[i], dvals[i]
        dates = np.concatenate([ext_years, base.dates[kept]])
        values = np.concatenate([ext, kept_vals])
    else:
        ext = np.empty(ext_years.size)
        prv_val, prv_don = anchor, donor.value_at(join_year)
        for i in range(ext_years.size):
            ext[i] = prv_val * (dvals[i] / prv_don)
            prv_val, prv_don = ext[i], dvals[i]
        dates = np.concatenate([base.dates[kept], ext_years])
        values = np.concatenate([kept_vals, ext])
    return RawSeries(base.name, dates, values, base.unit)


@dataclass(frozen=True)
class VariableSpec:
    """How one panel variable is built from raw series.

    ``transform`` is ``"dlog"`` (percent log-growth) or ``"level"``.
    ``per_capita`` names a population series to divide by in levels.
    """

    name: str
    source: str
    transform: str = "dlog"
    per_capita: str | None = None

    def __post_init__(self):
        if self.transform not in ("dlog", "level"):
            raise DataError(f"{self.name}: unknown transform {self.transform!r}")


def build_panel(series: Sequence[RawSeries], spec: Sequence[VariableSpec]) -> TimeSeriesPanel:
    """Transform raw series into the estimation panel.

    Rows are trimmed to the years where every variable is available.  A
    gap inside that common range is an error rather than something to
    interpolate.  When any variable is differenced the first common year
    is dropped for all variables.
    """
    by_name = {s.name: s for s in series}
    levels: list[tuple[VariableSpec, np.ndarray, np.ndarray]] = []
    for vs in spec:
        if vs.source not in by_name:
            raise DataError(f"{vs.name}: source series {vs.source!r} not loaded")
        s = by_name[vs.source]
        dates, vals = s.dates, s.values.copy()
        if vs.per_capita is not None:
            if vs.per_capita not in by_name:
                raise DataError(f"{vs.name}: population series {vs.per_capita!r} not loaded")
            pop = by_name[vs.per_capita]
            pvals = np.array([pop.value_at(y) for y in dates])
            vals = vals / pvals
        levels.append((vs, dates, vals))

    lo = max(int(d[0]) for _, d, _ in levels)
    hi = min(int(d[-1]) for _, d, _ in levels)
    if lo > hi:
        raise DataError("variables have no common coverage")
    years = np.arange(lo, hi + 1)
    avail = np.ones(years.size, dtype=bool)
    aligned = []
    for vs, d, v in levels:
        a = v[years - d[0]]
        aligned.append(a)
        avail &= ~np.isnan(a)
    idx = np.flatnonzero(avail)
    if idx.size == 0:
        raise DataError("variables have no common coverage")
    first, last = idx[0], idx[-1]
    if idx.size != last - first + 1:
        hole = int(years[first + np.flatnonzero(~avail[first : last + 1])[0]])
        raise DataError(f"missing value at {hole} inside the common sample")
    years = years[first : last + 1]
    differenced = any(vs.transform == "dlog" for vs in spec)
    cols = []
    meta = {}
    for (vs, _, _), a in zip(levels, aligned):
        a = a[first : last + 1]
        if vs.transform == "dlog":
            if np.any(a <= 0):
                bad = int(years[np.flatnonzero(a <= 0)[0]])
                raise DataError(f"{vs.name}: nonpositive level at {bad}, cannot take logs")
            col = 100.0 * np.diff(np.log(a))
        else:
            col = a[1:] if differenced else a
        cols.append(col)
        meta[vs.name] = vs.transform + (f"/per_capita({vs.per_capita})" if vs.per_capita else "") + f"<-{vs.source}"
    out_years = years[1:] if differenced else years
    if out_years.size == 0:
        raise DataError("common sample too short after differencing")
    return TimeSeriesPanel(tuple(vs.name for vs in spec), out_years, np.column_stack(cols), meta=meta)


def apply_splice_plan(series: Sequence[RawSeries], plan: Sequence[Mapping]) -> list[RawSeries]:
    """Apply ``splice_by_growth`` steps in order.

    Each step is a mapping with ``base``, ``donor``, ``join_year`` and
    optionally ``direction`` (default backward) and ``output`` (default:
    replace ``base``).
    """
    by_name = {s.name: s for s in series}
    for step in plan:
        for key in ("base", "donor", "join_year"):
            if key not in step:
                raise DataError(f"splice step missing {key!r}: {dict(step)}")
        base, donor = by_name.get(step["base"]), by_name.get(step["donor"])
        if base is None or donor is None:
            raise DataError(f"splice step references unknown series: {dict(step)}")
        out = splice_by_growth(base, donor, int(step["join_year"]), step.get("direction", "backward"))
        name = step.get("output", base.name)
        by_name[name] = RawSeries(name, out.dates, out.values, out.unit)
    return list(by_name.values())
