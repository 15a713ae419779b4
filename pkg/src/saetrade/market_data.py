"""Bar and feature ingestion, OHLCV resampling, and time alignment.

Bars are indexed by their open time; a feature value released at time t is
visible from the first bar whose open time is >= t, which rules out
look-ahead in the forward fill.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    CoverageError,
    DataError,
    LeakageError,
    OrderingError,
    ParseError,
)
from .timeutils import NS_PER_MIN, format_utc, parse_utc

BAR_HEADER = ["timestamp", "open", "high", "low", "close", "volume"]
FEATURE_HEADER = ["timestamp", "value"]


@dataclass(frozen=True)
class Bar:
    """One OHLCV observation; ``timestamp`` is the bar open time in epoch ns."""

    timestamp: int
    open: float
    high: float
    low: float
    close: float
    volume: float

    def __post_init__(self):
        if self.low > min(self.open, self.close) or self.high < max(self.open, self.close):
            raise DataError(
                f"bar at {format_utc(self.timestamp)} violates low <= open/close <= high"
            )
        if self.volume < 0:
            raise DataError(f"bar at {format_utc(self.timestamp)} has negative volume")


@dataclass(frozen=True)
class FeatureSeries:
    """Named exogenous series as ordered (epoch ns, value) points."""

    name: str
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.timestamps) != len(self.values):
            raise DataError(f"feature {self.name}: timestamps/values length mismatch")
        if len(self.timestamps) > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise OrderingError(f"feature {self.name}: timestamps not strictly increasing")
        if len(self.values) and not np.all(np.isfinite(self.values)):
            raise DataError(f"feature {self.name}: non-finite value")


@dataclass
class AuditRecord:
    """One read of time-bounded data by a pipeline stage."""

    stage: str
    split_index: Optional[int]
    max_timestamp: int
    cutoff: int

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "split_index": self.split_index,
            "max_timestamp": format_utc(self.max_timestamp),
            "cutoff": format_utc(self.cutoff),
        }


@dataclass
class AlignedFrame:
    """Rectangular time-indexed frame: int64 epoch-ns index plus named float columns.

    ``cutoff`` is a taint bound: when set, any stage that reads the frame
    must record itself via :meth:`record_read`, which raises if the frame
    contains rows at or after the bound. The shared ``audit`` list collects
    those records for the run manifest.
    """

    index: np.ndarray
    columns: dict[str, np.ndarray]
    cutoff: Optional[int] = None
    audit: Optional[list[AuditRecord]] = None
    split_index: Optional[int] = None
    # augmented training matrices repeat timestamps; everything else is a
    # strictly increasing time series
    monotone: bool = True

    def __post_init__(self):
        for name, col in self.columns.items():
            if len(col) != len(self.index):
                raise DataError(f"column {name}: length {len(col)} != index {len(self.index)}")
        if self.monotone and len(self.index) > 1 and not np.all(np.diff(self.index) > 0):
            raise OrderingError("frame index not strictly increasing")

    def __len__(self) -> int:
        return len(self.index)

    @property
    def column_names(self) -> list[str]:
        return list(self.columns)

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    def slice_time(self, start_ns: Optional[int], end_ns: Optional[int]) -> "AlignedFrame":
        """Rows with start_ns <= t < end_ns; shares the audit list."""
        lo = 0 if start_ns is None else int(np.searchsorted(self.index, start_ns, side="left"))
        hi = len(self.index) if end_ns is None else int(np.searchsorted(self.index, end_ns, side="left"))
        return replace(
            self,
            index=self.index[lo:hi],
            columns={k: v[lo:hi] for k, v in self.columns.items()},
        )

    def drop_head(self, k: int) -> "AlignedFrame":
        return replace(
            self,
            index=self.index[k:],
            columns={name: v[k:] for name, v in self.columns.items()},
        )

    def with_columns(self, columns: dict[str, np.ndarray]) -> "AlignedFrame":
        return replace(self, columns=dict(columns))

    def tainted(
        self,
        cutoff: int,
        audit: Optional[list[AuditRecord]],
        split_index: Optional[int],
    ) -> "AlignedFrame":
        return replace(self, cutoff=cutoff, audit=audit, split_index=split_index)

    def record_read(self, stage: str) -> None:
        """Log a read by ``stage``; raise if rows breach the taint bound."""
        if self.cutoff is None or len(self.index) == 0:
            return
        max_ts = int(self.index.max())
        if self.audit is not None:
            self.audit.append(AuditRecord(stage, self.split_index, max_ts, self.cutoff))
        if max_ts >= self.cutoff:
            raise LeakageError(
                f"stage {stage} read row at {format_utc(max_ts)} "
                f">= cutoff {format_utc(self.cutoff)}"
            )


def load_bars_csv(path) -> list[Bar]:
    """Read bars from CSV with header ``timestamp,open,high,low,close,volume``.

    Rows must be strictly increasing in time; duplicates are rejected.
    """
    bars: list[Bar] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("missing header", line=1)
        if [h.strip() for h in header] != BAR_HEADER:
            raise ParseError(f"expected header {','.join(BAR_HEADER)}", line=1)
        prev_ts = None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise ParseError(f"expected 6 fields, got {len(row)}", line=lineno)
            try:
                ts = parse_utc(row[0])
                o, h, l, c, v = (float(x) for x in row[1:])
            except (ValueError, DataError) as exc:
                raise ParseError(str(exc), line=lineno) from exc
            if prev_ts is not None and ts <= prev_ts:
                raise OrderingError(
                    f"line {lineno}: timestamp {row[0]} not after previous row"
                )
            prev_ts = ts
            try:
                bars.append(Bar(ts, o, h, l, c, v))
            except DataError as exc:
                raise ParseError(str(exc), line=lineno) from exc
    return bars


def write_bars_csv(path, bars: Iterable[Bar]) -> None:
    """Write bars with ISO-8601 UTC timestamps and LF line endings."""
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(BAR_HEADER) + "\n")
        for b in bars:
            fh.write(
                f"{format_utc(b.timestamp)},{b.open!r},{b.high!r},{b.low!r},"
                f"{b.close!r},{b.volume!r}\n"
            )


def load_feature_csv(path, name: str) -> FeatureSeries:
    """Read a feature series from CSV with header ``timestamp,value``."""
    stamps: list[int] = []
    values: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("missing header", line=1)
        if [h.strip() for h in header] != FEATURE_HEADER:
            raise ParseError(f"expected header {','.join(FEATURE_HEADER)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", line=lineno)
            try:
                stamps.append(parse_utc(row[0]))
                values.append(float(row[1]))
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from exc
    return FeatureSeries(name, np.asarray(stamps, dtype=np.int64), np.asarray(values, dtype=float))


def write_feature_csv(path, series: FeatureSeries) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(FEATURE_HEADER) + "\n")
        for ts, v in zip(series.timestamps, series.values):
            fh.write(f"{format_utc(int(ts))},{float(v)!r}\n")


def resample(bars: Sequence[Bar], interval_minutes: int) -> list[Bar]:
    """Aggregate 1-minute bars into ``interval_minutes`` buckets.

    Buckets anchor at midnight UTC (exact because the interval divides 60
    and the epoch is midnight-aligned). Per bucket: open = first open,
    high = max, low = min, close = last close, volume = sum. Buckets with
    no source bars are omitted.
    """
    if interval_minutes <= 0 or 60 % interval_minutes != 0:
        raise ConfigError(f"interval {interval_minutes} is not a positive divisor of 60")
    if not bars:
        return []
    bucket_ns = interval_minutes * NS_PER_MIN
    out: list[Bar] = []
    cur_key = None
    o = h = l = c = v = 0.0
    start = 0
    for b in bars:
        key = b.timestamp // bucket_ns
        if key != cur_key:
            if cur_key is not None:
                out.append(Bar(start, o, h, l, c, v))
            cur_key = key
            start = key * bucket_ns
            o, h, l, c, v = b.open, b.high, b.low, b.close, b.volume
        else:
            h = max(h, b.high)
            l = min(l, b.low)
            c = b.close
            v += b.volume
    out.append(Bar(start, o, h, l, c, v))
    return out


def align(bars: Sequence[Bar], features: Sequence[FeatureSeries]) -> AlignedFrame:
    """Forward-fill features onto the bar index and carry the close through.

    Each bar takes the last feature value released at or before its open
    time. A feature whose first point comes after the first bar cannot be
    filled and raises CoverageError.
    """
    if not bars:
        raise DataError("no bars to align")
    index = np.asarray([b.timestamp for b in bars], dtype=np.int64)
    columns: dict[str, np.ndarray] = {}
    for feat in features:
        if len(feat.timestamps) == 0 or feat.timestamps[0] > index[0]:
            raise CoverageError(
                f"feature {feat.name} starts after the first bar "
                f"({format_utc(int(index[0]))})"
            )
        # position of the last release at or before each bar open
        pos = np.searchsorted(feat.timestamps, index, side="right") - 1
        columns[feat.name] = feat.values[pos].astype(float)
    if "close" in columns:
        raise ConfigError("feature named 'close' collides with the price column")
    columns["close"] = np.asarray([b.close for b in bars], dtype=float)
    return AlignedFrame(index=index, columns=columns)
