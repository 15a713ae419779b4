"""Training-set expansion with volatility-scaled Gaussian noise.

Each replica row perturbs every feature with i.i.d. Gaussian noise whose
standard deviation is ``noise_ratio`` times that feature's trailing sample
volatility. Labels are copied untouched, and the whole expansion is a pure
function of the seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InsufficientDataError
from .market_data import AlignedFrame
from .seeding import derive_seed

LABEL_COLUMN = "label"


@dataclass(frozen=True)
class AugmentConfig:
    noise_ratio: float = 0.1
    copies: int = 1
    vol_window: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.noise_ratio < 0:
            raise ConfigError(f"noise_ratio must be >= 0, got {self.noise_ratio}")
        if self.copies < 0:
            raise ConfigError(f"copies must be >= 0, got {self.copies}")
        if self.vol_window < 2:
            raise ConfigError(f"vol_window must be >= 2, got {self.vol_window}")


def estimate_feature_vol(column: np.ndarray, window: int) -> float:
    """Sample standard deviation of the trailing ``window`` values."""
    x = np.asarray(column, dtype=float)
    if window < 2:
        raise ConfigError(f"window must be >= 2, got {window}")
    if window > len(x):
        raise InsufficientDataError(f"window {window} exceeds column length {len(x)}")
    return float(np.std(x[-window:], ddof=1))


def augment(frame: AlignedFrame, cfg: AugmentConfig) -> AlignedFrame:
    """Append ``cfg.copies`` noisy replicas of every row to the frame.

    Volatilities come from the frame itself (the caller passes training
    rows only); the effective window is capped at the row count. Replica
    noise for copy i is drawn from a generator seeded by (seed, i), so the
    output is bit-deterministic however the copies are batched.

    Replicas reuse the original timestamps, so the result is ordered by
    replica block rather than by time; downstream training shuffles rows
    anyway and never treats the augmented index as a time axis.
    """
    frame.record_read("augment")
    n = len(frame)
    feature_names = [c for c in frame.column_names if c != LABEL_COLUMN]
    if cfg.copies == 0 or n == 0:
        return frame
    window = min(cfg.vol_window, n)
    vols = {
        name: estimate_feature_vol(frame.column(name), window) if window >= 2 else 0.0
        for name in feature_names
    }
    blocks: dict[str, list[np.ndarray]] = {c: [frame.column(c)] for c in frame.column_names}
    index_blocks = [frame.index]
    for copy in range(cfg.copies):
        rng = np.random.default_rng(derive_seed(cfg.seed, "augment-copy", copy))
        for name in feature_names:
            base = frame.column(name)
            std = cfg.noise_ratio * vols[name]
            noise = rng.normal(0.0, std, size=n) if std > 0 else np.zeros(n)
            blocks[name].append(base + noise)
        if LABEL_COLUMN in frame.columns:
            blocks[LABEL_COLUMN].append(frame.column(LABEL_COLUMN).copy())
        index_blocks.append(frame.index)

    stacked = {name: np.concatenate(parts) for name, parts in blocks.items()}
    return AlignedFrame(
        index=np.concatenate(index_blocks),
        columns=stacked,
        cutoff=frame.cutoff,
        audit=frame.audit,
        split_index=frame.split_index,
        monotone=False,
    )
