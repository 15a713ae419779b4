"""Triple-barrier labels and the trade-count selection metric.

Each time point gets +1/-1/0 by which barrier a forward window of closes
touches first: the upper price barrier at close*(1+lam), the lower one at
close*(1-lam), or the time barrier after n bars. The selection metric
compounds (1+lam) per directly correct trade, (1-lam) per directly
incorrect one, and (1-lam/delta) per timed exit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError


@dataclass(frozen=True)
class TblConfig:
    """Barrier geometry: fractional width ``lam``, horizon ``n`` bars, and
    timed-exit penalty divisor ``delta`` (> lam)."""

    lam: float
    n: int
    delta: float = 20.0

    def __post_init__(self):
        if self.lam <= 0:
            raise ConfigError(f"lam must be > 0, got {self.lam}")
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.delta <= self.lam:
            raise ConfigError(f"delta must exceed lam, got delta={self.delta} lam={self.lam}")


@dataclass(frozen=True)
class ClassificationTally:
    """Disjoint prediction/label pair counts."""

    dcc: int = 0
    dic: int = 0
    tec: int = 0
    zero_pred_count: int = 0

    @property
    def total(self) -> int:
        return self.dcc + self.dic + self.tec + self.zero_pred_count


def triple_barrier_labels(closes: np.ndarray, cfg: TblConfig) -> np.ndarray:
    """Label every index by the first barrier its forward close window touches.

    Windows that run past the series end are truncated, not dropped. A bar
    that crosses both price barriers resolves to the upper one because the
    profit target is checked first.
    """
    x = np.asarray(closes, dtype=float)
    if x.ndim != 1:
        raise ConfigError("expected a 1-D close series")
    if len(x) and (not np.all(np.isfinite(x)) or np.any(x <= 0)):
        raise DataError("closes must be finite and positive")
    m = len(x)
    if m == 0:
        return np.zeros(0, dtype=np.int8)
    width = cfg.n + 1  # offsets 0..n inside each window
    labels = np.zeros(m, dtype=np.int8)
    offsets = np.arange(width)[None, :]
    block = max(1, 2_000_000 // width)  # bound the window matrix at ~16 MB
    for lo in range(0, m, block):
        hi = min(lo + block, m)
        rows = np.arange(lo, hi)[:, None]
        # windows[t, j] = close[min(t+j, m-1)]; tail padding repeats the last
        # close and the mask removes those phantom offsets.
        windows = x[np.minimum(rows + offsets, m - 1)]
        valid = rows + offsets <= m - 1
        entry = x[lo:hi, None]
        hit_up = (windows >= entry * (1.0 + cfg.lam)) & valid
        hit_dn = (windows <= entry * (1.0 - cfg.lam)) & valid
        # first touch per row; argmax is 0 on all-False rows, hence the any() guards
        first_up = np.where(hit_up.any(axis=1), hit_up.argmax(axis=1), width)
        first_dn = np.where(hit_dn.any(axis=1), hit_dn.argmax(axis=1), width)
        out = labels[lo:hi]
        out[(first_up < width) & (first_up <= first_dn)] = 1
        out[(first_dn < width) & (first_dn < first_up)] = -1
    return labels


def tally(pred: np.ndarray, truth: np.ndarray) -> ClassificationTally:
    """Count directly-correct, directly-incorrect, and timed-exit pairs."""
    p = np.asarray(pred, dtype=np.int64)
    t = np.asarray(truth, dtype=np.int64)
    if p.shape != t.shape:
        raise ShapeError(f"pred shape {p.shape} != truth shape {t.shape}")
    nonzero = p != 0
    return ClassificationTally(
        dcc=int(np.count_nonzero(nonzero & (p == t))),
        dic=int(np.count_nonzero(nonzero & (t == -p))),
        tec=int(np.count_nonzero(nonzero & (t == 0))),
        zero_pred_count=int(np.count_nonzero(~nonzero)),
    )


def phi_log(t: ClassificationTally, cfg: TblConfig) -> float:
    """log of the selection metric; exact for large counts."""
    return (
        t.dcc * math.log1p(cfg.lam)
        + t.dic * math.log1p(-cfg.lam)
        + t.tec * math.log1p(-cfg.lam / cfg.delta)
    )


def phi_metric(t: ClassificationTally, cfg: TblConfig) -> float:
    """(1+lam)^dcc * (1-lam)^dic * (1-lam/delta)^tec, via the log-space path."""
    return math.exp(phi_log(t, cfg))
