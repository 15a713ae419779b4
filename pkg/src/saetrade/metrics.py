"""Risk-adjusted performance statistics on equity curves.

Annualization uses bar counts, not trading days: crypto trades around the
clock, so a year holds 365*24*60/interval_minutes bars.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .backtest import EquityCurve
from .errors import ConfigError, InsufficientDataError, ShapeError


@dataclass(frozen=True)
class PerfReport:
    total_return: float
    arc: float  # annualized compounded return
    asd: float  # annualized standard deviation of per-bar returns
    mdd: float  # maximum drawdown fraction
    ir: Optional[float]  # arc / asd
    ir_star: Optional[float]  # ir * |arc| / mdd, signed by arc
    bar_count: int
    trade_count: Optional[int] = None
    phi: Optional[float] = None

    def to_json_dict(self) -> dict:
        return asdict(self)


def bars_per_year(interval_minutes: float) -> float:
    return 365.0 * 24.0 * 60.0 / interval_minutes


def max_drawdown(equity: np.ndarray) -> float:
    """Largest peak-to-trough fraction, max over t of (peak - e_t)/peak."""
    peaks = np.maximum.accumulate(equity)
    return float(np.max((peaks - equity) / peaks))


def ir_star(arc: float, ir: float, mdd: float) -> Optional[float]:
    """Drawdown-adjusted ratio ir * arc * sign(arc) / mdd."""
    if mdd <= 0:
        return None
    return ir * abs(arc) / mdd


def perf_report(
    curve: EquityCurve,
    bars_per_year: float,
    trade_count: Optional[int] = None,
    phi: Optional[float] = None,
) -> PerfReport:
    """All headline statistics for one curve.

    ``bar_count`` is the number of per-bar return intervals (points - 1).
    A zero-variance curve reports ASD, IR and IR* as absent rather than
    infinite.
    """
    if len(curve) < 2:
        raise InsufficientDataError("need at least 2 equity points")
    if bars_per_year <= 0:
        raise ConfigError("bars_per_year must be positive")
    equity = np.asarray(curve.equity, dtype=float)
    n = len(equity) - 1
    total = float(equity[-1] / equity[0] - 1.0)
    arc = float((equity[-1] / equity[0]) ** (bars_per_year / n) - 1.0)
    rets = curve.returns
    sd = float(np.std(rets, ddof=1)) if n > 1 else 0.0
    asd = sd * float(np.sqrt(bars_per_year))
    mdd = max_drawdown(equity)
    ir = arc / asd if asd > 0 else None
    star = ir_star(arc, ir, mdd) if ir is not None else None
    return PerfReport(
        total_return=total,
        arc=arc,
        asd=asd,
        mdd=mdd,
        ir=ir,
        ir_star=star,
        bar_count=n,
        trade_count=trade_count,
        phi=phi,
    )


def return_correlation(curves: Sequence[EquityCurve]) -> np.ndarray:
    """Pearson correlation of per-bar returns across curves.

    Zero-variance members get NaN rows/columns (absent), valid diagonals
    are exactly 1.
    """
    if len(curves) < 1:
        raise ConfigError("no curves")
    base = curves[0].timestamps
    for c in curves[1:]:
        if len(c.timestamps) != len(base) or not np.array_equal(c.timestamps, base):
            raise ShapeError("curves do not share an index")
    if len(base) < 2:
        raise InsufficientDataError("need at least 2 bars")
    rets = np.stack([c.returns for c in curves], axis=0)
    k = rets.shape[0]
    stds = rets.std(axis=1, ddof=1) if rets.shape[1] > 1 else np.zeros(k)
    valid = stds > 0
    out = np.full((k, k), np.nan)
    if valid.any():
        sub = np.corrcoef(rets[valid])
        sub = np.atleast_2d(sub)
        ii = np.flatnonzero(valid)
        for a, ia in enumerate(ii):
            for b, ib in enumerate(ii):
                out[ia, ib] = sub[a, b]
        out[ii, ii] = 1.0
    return out


def write_report_json(path, report: PerfReport, extra: Optional[dict] = None) -> None:
    doc = report.to_json_dict()
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
