"""Series loading, standardization, calendar features, windowing and synthesis."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

# calendar scales in column order of calendar_features()
SCALES = ("minute", "hour", "weekday", "day", "month")
CARDINALITY = {"minute": 60, "hour": 24, "weekday": 7, "day": 31, "month": 12}

STD_FLOOR = 1e-8
SYNTH_EPOCH = int(datetime(2020, 1, 1, tzinfo=timezone.utc).timestamp())
_DATE_FORMATS = ("%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M")


@dataclass(frozen=True)
class SeriesFrame:
    """A regularly sampled multivariate series.

    ``values`` has shape ``(L, d_x)``; timestamps are UTC epoch seconds.
    """

    timestamps: np.ndarray
    values: np.ndarray
    variable_names: tuple[str, ...]
    target_index: int = 0
    interval_seconds: int = 0

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise DataError(f"values must be 2-D (L, d_x), got shape {vals.shape}")
        if len(ts) != len(vals):
            raise DataError("timestamps and values differ in length")
        if len(self.variable_names) != vals.shape[1]:
            raise DataError("variable_names does not match the number of columns")
        if not 0 <= self.target_index < vals.shape[1]:
            raise DataError(f"target_index {self.target_index} out of range")
        if len(ts) > 1:
            gaps = np.diff(ts)
            if (gaps <= 0).any():
                raise DataError("non-increasing timestamps")
            if self.interval_seconds > 0 and (gaps != self.interval_seconds).any():
                bad = int(np.argmax(gaps != self.interval_seconds)) + 1
                raise DataError(f"irregular sampling at row {bad}: expected a "
                                f"{self.interval_seconds}s gap, got {int(gaps[bad - 1])}s")
        if not np.isfinite(vals).all():
            raise DataError("series contains non-finite values")
        ts.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "variable_names", tuple(self.variable_names))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def d_x(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray) -> "SeriesFrame":
        return SeriesFrame(self.timestamps, values, self.variable_names,
                           self.target_index, self.interval_seconds)

    def slice(self, start: int, stop: int) -> "SeriesFrame":
        return SeriesFrame(self.timestamps[start:stop], self.values[start:stop],
                           self.variable_names, self.target_index, self.interval_seconds)


# -- CSV ------------------------------------------------------------------------

def parse_timestamp(text: str) -> int:
    text = text.strip()
    for fmt in _DATE_FORMATS:
        try:
            dt = datetime.strptime(text, fmt)
        except ValueError:
            continue
        return int(dt.replace(tzinfo=timezone.utc).timestamp())
    raise DataError(f"unparseable timestamp {text!r}")


def format_timestamp(ts: int) -> str:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%d %H:%M:%S")


def load_csv(path, target_name: str | None = None, interval: int | None = None) -> SeriesFrame:
    """Read a ``date,<var>,...`` CSV.

    ``interval`` is the declared sampling period in seconds. ``None`` infers it
    from the first gap and still enforces regular sampling; ``0`` disables the
    check.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        if not header or header[0].strip() != "date":
            raise DataError("first column must be named 'date'")
        names = [h.strip() for h in header[1:]]
        if not names:
            raise DataError("no value columns")
        stamps, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            stamps.append(parse_timestamp(row[0]))
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
            if not all(np.isfinite(vals)):
                raise DataError(f"line {lineno}: NaN or infinite cell")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path} has no data rows")
    if target_name is None:
        target_index = len(names) - 1
    else:
        if target_name not in names:
            raise DataError(f"target column {target_name!r} not found in {names}")
        target_index = names.index(target_name)
    ts = np.array(stamps, dtype=np.int64)
    if interval is None:
        interval = int(ts[1] - ts[0]) if len(ts) > 1 else 0
        if interval <= 0:
            raise DataError("non-increasing timestamps")
    return SeriesFrame(ts, np.array(rows), tuple(names), target_index, interval)


def write_csv(frame: SeriesFrame, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *frame.variable_names])
        for ts, row in zip(frame.timestamps, frame.values):
            w.writerow([format_timestamp(ts), *(repr(float(v)) for v in row)])


# -- standardization ------------------------------------------------------------

@dataclass(frozen=True)
class StandardizeStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def invert(self, values: np.ndarray, columns=None) -> np.ndarray:
        if columns is None:
            return values * self.std + self.mean
        return values * self.std[columns] + self.mean[columns]


def fit_stats(frame: SeriesFrame, train_range: tuple[int, int]) -> StandardizeStats:
    """Population mean/std over ``frame[train_range[0]:train_range[1]]``."""
    lo, hi = train_range
    if hi <= lo:
        raise DataError("empty training range for standardization")
    block = frame.values[lo:hi]
    mean = block.mean(axis=0)
    std = block.std(axis=0)
    small = std < STD_FLOOR
    if small.any():
        cols = [frame.variable_names[i] for i in np.flatnonzero(small)]
        log.warning("zero-variance columns %s: std floored at %g", cols, STD_FLOOR)
        std = np.where(small, STD_FLOOR, std)
    return StandardizeStats(mean, std)


def standardize(frame: SeriesFrame, stats: StandardizeStats) -> SeriesFrame:
    return frame.with_values(stats.apply(frame.values))


def destandardize(frame: SeriesFrame, stats: StandardizeStats) -> SeriesFrame:
    return frame.with_values(stats.invert(frame.values))


# -- calendar -------------------------------------------------------------------

def calendar_features(timestamps) -> np.ndarray:
    """Integer codes ``(minute, hour, weekday, day, month)`` per UTC timestamp.

    Weekday is Monday=0; day and month are 1-based as on a calendar.
    """
    ts = np.asarray(timestamps, dtype=np.int64)
    dt = ts.astype("datetime64[s]")
    days = dt.astype("datetime64[D]")
    months = dt.astype("datetime64[M]")
    out = np.empty(ts.shape + (5,), dtype=np.int64)
    out[..., 0] = (ts // 60) % 60
    out[..., 1] = (ts // 3600) % 24
    # 1970-01-01 was a Thursday
    out[..., 2] = (days.astype(np.int64) + 3) % 7
    out[..., 3] = (days - months.astype("datetime64[D]")).astype(np.int64) + 1
    out[..., 4] = months.astype(np.int64) % 12 + 1
    return out


def active_scales(interval_seconds: int) -> tuple[str, ...]:
    """Hourly or coarser data drops the minute scale."""
    if 0 < interval_seconds < 3600:
        return SCALES
    return SCALES[1:]


# -- splitting ------------------------------------------------------------------

def split(frame: SeriesFrame, fractions: Sequence[float] | None = None,
          months: Sequence[int] | None = None) -> dict[str, tuple[int, int]]:
    """Chronological train/val/test row ranges (half-open)."""
    L = len(frame)
    if (fractions is None) == (months is None):
        raise ValueError("give exactly one of fractions or months")
    if fractions is not None:
        if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1) > 1e-9:
            raise DataError(f"split fractions must be three non-negative values summing to 1, got {fractions}")
        n_train = int(round(L * fractions[0]))
        n_val = int(round(L * fractions[1]))
        bounds = [0, n_train, n_train + n_val, L]
    else:
        if len(months) != 3:
            raise DataError("month split needs three counts")
        cal = calendar_features(frame.timestamps)
        years = frame.timestamps.astype("datetime64[s]").astype("datetime64[Y]").astype(np.int64)
        idx = (years - years[0]) * 12 + (cal[:, 4] - cal[0, 4])
        b1, b2, b3 = np.cumsum(months)
        bounds = [0, int(np.searchsorted(idx, b1)), int(np.searchsorted(idx, b2)),
                  int(np.searchsorted(idx, b3))]
    ranges = {name: (bounds[i], bounds[i + 1]) for i, name in enumerate(("train", "val", "test"))}
    for name, (lo, hi) in ranges.items():
        if hi <= lo:
            raise DataError(f"empty {name} split")
    return ranges


# -- windows --------------------------------------------------------------------

@dataclass(frozen=True)
class WindowSample:
    enc_x: np.ndarray
    enc_marks: np.ndarray
    dec_x: np.ndarray
    dec_marks: np.ndarray
    target: np.ndarray


@dataclass
class WindowBatch:
    """Stacked samples; every array has a leading batch axis."""

    enc_x: np.ndarray
    enc_marks: np.ndarray
    dec_x: np.ndarray
    dec_marks: np.ndarray
    target: np.ndarray
    starts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.enc_x)

    def sample(self, i: int) -> WindowSample:
        return WindowSample(self.enc_x[i], self.enc_marks[i], self.dec_x[i],
                            self.dec_marks[i], self.target[i])

    @classmethod
    def stack(cls, samples: Sequence[WindowSample]) -> "WindowBatch":
        return cls(*(np.stack([getattr(s, f) for s in samples])
                     for f in ("enc_x", "enc_marks", "dec_x", "dec_marks", "target")))


def _check_lengths(L: int, L_x: int, L_y: int, L_tok: int) -> None:
    if L_x < 1 or L_y < 1:
        raise DataError("L_x and L_y must be positive")
    if not 0 <= L_tok <= L_x:
        raise DataError(f"L_tok must lie in [0, L_x], got {L_tok}")
    if L < L_x + L_y:
        raise DataError(f"series too short: {L} rows < L_x + L_y = {L_x + L_y}")


class WindowDataset:
    """Rolling input/target windows over a (standardized) frame.

    A window starting at row ``s`` reads inputs ``s .. s+L_x-1`` and targets
    ``s+L_x .. s+L_x+L_y-1``. When ``target_range`` is given only windows whose
    last target row lies inside it are kept; inputs may reach back before it.
    """

    def __init__(self, frame: SeriesFrame, L_x: int, L_y: int, L_tok: int | None = None,
                 stride: int = 1, mode: str = "multivariate",
                 target_range: tuple[int, int] | None = None):
        if mode not in ("multivariate", "univariate"):
            raise ValueError(f"unknown mode {mode!r}")
        L_tok = L_x // 2 if L_tok is None else L_tok
        _check_lengths(len(frame), L_x, L_y, L_tok)
        self.frame = frame
        self.L_x, self.L_y, self.L_tok, self.mode = L_x, L_y, L_tok, mode
        self.marks = calendar_features(frame.timestamps)
        last = np.arange(len(frame) - L_x - L_y + 1) + L_x + L_y - 1
        starts = last - (L_x + L_y - 1)
        if target_range is not None:
            lo, hi = target_range
            keep = (last >= lo) & (last < hi)
            starts = starts[keep]
        self.starts = starts[::stride]
        if len(self.starts) == 0:
            raise DataError("series too short: no complete window in range")

    @property
    def d_t(self) -> int:
        return self.frame.d_x if self.mode == "multivariate" else 1

    def __len__(self) -> int:
        return len(self.starts)

    def __getitem__(self, i: int) -> WindowSample:
        return self.batch(np.array([i])).sample(0)

    def batch(self, indices) -> WindowBatch:
        s = self.starts[np.asarray(indices)]
        L_x, L_y, L_tok = self.L_x, self.L_y, self.L_tok
        vals = self.frame.values
        enc_rows = s[:, None] + np.arange(L_x)
        dec_rows = s[:, None] + np.arange(L_x - L_tok, L_x + L_y)
        tgt_rows = s[:, None] + np.arange(L_x, L_x + L_y)
        enc_x = vals[enc_rows]
        dec_x = np.zeros((len(s), L_tok + L_y, vals.shape[1]))
        dec_x[:, :L_tok] = enc_x[:, L_x - L_tok:]
        target = vals[tgt_rows]
        if self.mode == "univariate":
            ti = self.frame.target_index
            target = target[..., ti:ti + 1]
        return WindowBatch(enc_x, self.marks[enc_rows], dec_x, self.marks[dec_rows],
                           target, starts=s)

    def all(self) -> WindowBatch:
        return self.batch(np.arange(len(self)))


def rolling_windows(frame: SeriesFrame, L_x: int, L_y: int, L_tok: int | None = None,
                    stride: int = 1, mode: str = "multivariate") -> list[WindowSample]:
    ds = WindowDataset(frame, L_x, L_y, L_tok, stride, mode)
    b = ds.all()
    return [b.sample(i) for i in range(len(b))]


# -- synthetic data -------------------------------------------------------------

DEFAULT_PERIODS = (24, 24, 48, 96)


def synth_generate(seed: int, L: int, d_x: int, periods: Sequence[float] | None = None,
                   trend_slope: float = 0.0, noise_std: float = 0.1,
                   interval_seconds: int = 3600) -> SeriesFrame:
    """Sinusoid + linear trend + Gaussian noise, one period per variable.

    Periods cycle through ``periods`` when fewer than ``d_x`` are given.
    Timestamps are regular from 2020-01-01 00:00 UTC.
    """
    if d_x < 1:
        raise DataError("d_x must be at least 1")
    if L < 1:
        raise DataError("L must be at least 1")
    periods = tuple(periods or DEFAULT_PERIODS)
    per = np.array([periods[j % len(periods)] for j in range(d_x)], dtype=np.float64)
    rng = np.random.default_rng(seed)
    t = np.arange(L, dtype=np.float64)[:, None]
    values = np.sin(2 * np.pi * t / per) + trend_slope * t / L
    if noise_std > 0:
        values = values + rng.normal(0.0, noise_std, size=(L, d_x))
    ts = SYNTH_EPOCH + interval_seconds * np.arange(L, dtype=np.int64)
    names = tuple(f"x{j}" for j in range(d_x))
    return SeriesFrame(ts, values, names, d_x - 1, interval_seconds)
