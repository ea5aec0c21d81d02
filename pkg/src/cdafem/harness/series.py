"""Error time series and convergence tables, with CSV I/O."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

SERIES_COLUMNS = ("step", "time", "l2_error", "h1_error")
RATE_COLUMNS = ("resolution", "l2_error", "rate")


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass
class ErrorSeries:
    """Per-step errors ``(step, time, L2, H1)`` plus free-form metadata."""

    steps: list = field(default_factory=list)
    times: list = field(default_factory=list)
    l2: list = field(default_factory=list)
    h1: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, step: int, t: float, l2: float, h1: float) -> None:
        if self.times and not t > self.times[-1]:
            raise ValueError(f"times must increase strictly: {t} after {self.times[-1]}")
        if not (math.isfinite(l2) and l2 >= 0):
            raise ValueError(f"L2 error must be finite and non-negative, got {l2}")
        if not (math.isnan(h1) or (math.isfinite(h1) and h1 >= 0)):
            raise ValueError(f"H1 error must be finite and non-negative, got {h1}")
        self.steps.append(int(step))
        self.times.append(float(t))
        self.l2.append(float(l2))
        self.h1.append(float(h1))

    def __len__(self):
        return len(self.steps)

    @property
    def final_l2(self) -> float:
        return self.l2[-1]

    def at_time(self, t: float) -> int:
        """Index of the record closest to time ``t``."""
        return int(np.argmin(np.abs(np.asarray(self.times) - t)))

    def arrays(self):
        return (np.asarray(self.steps), np.asarray(self.times), np.asarray(self.l2), np.asarray(self.h1))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(SERIES_COLUMNS)
            for row in zip(self.steps, self.times, self.l2, self.h1):
                wr.writerow([row[0], _fmt(row[1]), _fmt(row[2]), _fmt(row[3])])

    @classmethod
    def from_csv(cls, path) -> "ErrorSeries":
        out = cls()
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = tuple(next(rd))
            if header != SERIES_COLUMNS:
                raise ValueError(f"{os.fspath(path)}: unexpected columns {header}")
            for s, t, a, b in rd:
                out.append(int(s), float(t), float(a), float(b))
        return out


@dataclass(frozen=True)
class RateTable:
    """Rows ``(resolution, error, rate)``; the first rate is undefined (nan)."""

    resolutions: tuple
    errors: tuple
    rates: tuple

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(RATE_COLUMNS)
            for r, e, p in zip(self.resolutions, self.errors, self.rates):
                wr.writerow([_fmt(r), _fmt(e), "" if math.isnan(p) else _fmt(p)])

    @classmethod
    def from_csv(cls, path) -> "RateTable":
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = tuple(next(rd))
            if header != RATE_COLUMNS:
                raise ValueError(f"{os.fspath(path)}: unexpected columns {header}")
            rows = [(float(r), float(e), float(p) if p else math.nan) for r, e, p in rd]
        return cls(*(tuple(c) for c in zip(*rows)))


def convergence_rates(rows) -> RateTable:
    """Observed orders ``log(e_{i-1}/e_i) / log(r_{i-1}/r_i)``.

    Parameters
    ----------
    rows : iterable of (resolution, error)
        Resolutions must decrease strictly.

    Raises
    ------
    ValueError
        With fewer than two rows, non-positive errors or resolutions that
        do not decrease.
    """
    rows = [(float(r), float(e)) for r, e in rows]
    if len(rows) < 2:
        raise ValueError("need at least two rows to compute rates")
    res = np.array([r for r, _ in rows])
    err = np.array([e for _, e in rows])
    if np.any(~np.isfinite(err)) or np.any(err <= 0):
        raise ValueError("errors must be positive and finite")
    if np.any(res <= 0) or np.any(np.diff(res) >= 0):
        raise ValueError("resolutions must be positive and strictly decreasing")
    rates = np.log(err[:-1] / err[1:]) / np.log(res[:-1] / res[1:])
    return RateTable(tuple(res), tuple(err), (math.nan,) + tuple(rates))


@dataclass(frozen=True)
class DecayFit:
    slope: float  # d log(error) / dt, negative while decaying
    plateau: float
    onset_step: int

    @property
    def rate(self) -> float:
        """Decay rate per unit time, ``-slope``."""
        return -self.slope


class NoDecayError(ValueError):
    pass


def decay_analysis(series: ErrorSeries) -> DecayFit:
    """Fit exponential decay toward a plateau.

    The plateau is the median of the last 10% of records and the onset
    the first record at or below 1.5x the plateau. The rate is the
    least-squares slope of ``log(error - plateau)`` against time over the
    records from step 2 up to the onset, so a floor does not flatten it.

    Raises
    ------
    ValueError
        For fewer than 20 records.
    NoDecayError
        If there is no decaying segment or the fitted slope is not negative.
    """
    if len(series) < 20:
        raise ValueError(f"decay analysis needs at least 20 records, got {len(series)}")
    steps, t, e, _ = series.arrays()
    tail = max(1, int(math.ceil(0.1 * len(e))))
    plateau = float(np.median(e[-tail:]))
    below = np.nonzero(e <= 1.5 * plateau)[0]
    onset = int(below[0])
    lo = int(np.searchsorted(steps, 2))
    sel = slice(lo, onset)
    if onset - lo < 2:
        raise NoDecayError("no decaying segment before the plateau")
    slope = float(np.polyfit(t[sel], np.log(e[sel] - plateau), 1)[0])
    if not slope < 0:
        raise NoDecayError(f"error does not decay (log-slope {slope:.3g})")
    return DecayFit(slope=slope, plateau=plateau, onset_step=int(steps[onset]))
