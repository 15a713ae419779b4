"""Timestamp helpers.

All timestamps are UTC. Human-facing IO uses ISO-8601 strings; vectorized
code uses int64 epoch nanoseconds so bucket arithmetic stays exact.
"""
from __future__ import annotations

from datetime import datetime, timezone

NS_PER_SEC = 1_000_000_000
NS_PER_MIN = 60 * NS_PER_SEC
NS_PER_DAY = 86_400 * NS_PER_SEC


def to_epoch_ns(dt: datetime) -> int:
    """Convert an aware (or naive-UTC) datetime to epoch nanoseconds."""
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp()) * NS_PER_SEC + dt.microsecond * 1_000


def from_epoch_ns(ns: int) -> datetime:
    return datetime.fromtimestamp(ns // NS_PER_SEC, tz=timezone.utc).replace(
        microsecond=(ns % NS_PER_SEC) // 1_000
    )


def parse_utc(text: str) -> int:
    """Parse an ISO-8601 UTC timestamp (``Z`` or explicit offset) to epoch ns."""
    cleaned = text.strip()
    if cleaned.endswith("Z"):
        cleaned = cleaned[:-1] + "+00:00"
    dt = datetime.fromisoformat(cleaned)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return to_epoch_ns(dt)


def format_utc(ns: int) -> str:
    """Render epoch ns as ISO-8601 with a ``Z`` suffix, second precision."""
    dt = from_epoch_ns(ns)
    if dt.microsecond:
        return dt.strftime("%Y-%m-%dT%H:%M:%S.%f") + "Z"
    return dt.strftime("%Y-%m-%dT%H:%M:%S") + "Z"
