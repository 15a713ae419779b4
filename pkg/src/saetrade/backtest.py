"""Signal-driven trade simulation under triple-barrier execution.

State machine per bar close: an open position exits at the first of a
price-barrier touch (filled exactly at the barrier level), the time
barrier after n bars (filled at that close), or an opposite nonzero signal
(reversal: close plus reopen, two fee events). A zero signal never closes
an open trade; same-direction signals while open are ignored. Flat plus a
nonzero signal opens a full-equity position at the bar close.

Equity is marked to market at every close, recorded after exit events and
before entry events, so the curve starts exactly at the initial capital.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, EquityBreachError, ShapeError
from .market_data import Bar
from .timeutils import format_utc


@dataclass(frozen=True)
class ExecutionConfig:
    initial_capital: float = 1000.0
    fee_rate: float = 0.0005  # fraction per open and per close
    lam: float = 0.02  # must match the labeling config
    n: int = 20
    reversal_policy: bool = True  # opposite signal closes and reverses
    allow_entry_signals: bool = True

    def __post_init__(self):
        if not 0 <= self.fee_rate <= 0.01:
            raise ConfigError(f"fee_rate must lie in [0, 0.01], got {self.fee_rate}")
        if self.initial_capital <= 0:
            raise ConfigError("initial capital must be positive")
        if self.lam <= 0:
            raise ConfigError("lam must be positive")
        if self.n < 1:
            raise ConfigError("n must be >= 1")


@dataclass(frozen=True)
class Trade:
    direction: str  # "long" | "short"
    entry_time: int
    entry_price: float
    exit_time: int
    exit_price: float
    exit_reason: str  # take_profit | stop_loss | time_barrier | reversal | end_of_data
    gross_return: float
    fees: float  # currency paid on this trade's open and close


@dataclass
class EquityCurve:
    timestamps: np.ndarray  # int64 epoch ns
    equity: np.ndarray

    def __post_init__(self):
        if len(self.timestamps) != len(self.equity):
            raise ShapeError("timestamps/equity length mismatch")

    def __len__(self) -> int:
        return len(self.equity)

    @property
    def returns(self) -> np.ndarray:
        """Simple per-bar returns."""
        e = self.equity
        return e[1:] / e[:-1] - 1.0


class _Position:
    __slots__ = ("direction", "entry_index", "entry_time", "entry_price",
                 "capital", "fees")

    def __init__(self, direction, entry_index, entry_time, entry_price,
                 capital, fees):
        self.direction = direction
        self.entry_index = entry_index
        self.entry_time = entry_time
        self.entry_price = entry_price
        self.capital = capital  # equity committed after the entry fee
        self.fees = fees

    def return_at(self, price: float) -> float:
        if self.direction == "long":
            return price / self.entry_price - 1.0
        return 1.0 - price / self.entry_price

    def value_at(self, price: float) -> float:
        return self.capital * (1.0 + self.return_at(price))


def simulate(
    signals: np.ndarray,
    bars: Sequence[Bar],
    cfg: ExecutionConfig,
) -> tuple[EquityCurve, list[Trade]]:
    """Replay signals bar by bar; returns the equity curve and trade log."""
    sig = np.asarray(signals, dtype=np.int64)
    if len(sig) != len(bars):
        raise ShapeError(f"{len(sig)} signals vs {len(bars)} bars")
    if len(bars) == 0:
        return EquityCurve(np.zeros(0, dtype=np.int64), np.zeros(0)), []

    closes = np.asarray([b.close for b in bars], dtype=float)
    stamps = np.asarray([b.timestamp for b in bars], dtype=np.int64)
    n_bars = len(bars)

    equity = np.empty(n_bars, dtype=float)
    trades: list[Trade] = []
    cash = cfg.initial_capital
    pos: Optional[_Position] = None

    def close_position(i: int, price: float, reason: str,
                       gross_return: Optional[float] = None) -> None:
        nonlocal cash, pos
        # barrier fills pass their defined return (+lam / -lam) exactly
        ret = pos.return_at(price) if gross_return is None else gross_return
        gross_value = pos.capital * (1.0 + ret)
        fee = gross_value * cfg.fee_rate
        cash = gross_value - fee
        trades.append(
            Trade(
                direction=pos.direction,
                entry_time=pos.entry_time,
                entry_price=pos.entry_price,
                exit_time=int(stamps[i]),
                exit_price=price,
                exit_reason=reason,
                gross_return=ret,
                fees=pos.fees + fee,
            )
        )
        pos = None

    def open_position(i: int, direction: str) -> None:
        nonlocal pos
        fee = cash * cfg.fee_rate
        pos = _Position(
            direction=direction,
            entry_index=i,
            entry_time=int(stamps[i]),
            entry_price=closes[i],
            capital=cash - fee,
            fees=fee,
        )

    for i in range(n_bars):
        price = closes[i]
        # 1) barrier-managed exits, price barriers before the time barrier;
        #    the upper level is checked first, mirroring the labeler
        if pos is not None and i > pos.entry_index:
            upper = pos.entry_price * (1.0 + cfg.lam)
            lower = pos.entry_price * (1.0 - cfg.lam)
            if price >= upper:
                long_side = pos.direction == "long"
                close_position(i, upper,
                               "take_profit" if long_side else "stop_loss",
                               gross_return=cfg.lam if long_side else -cfg.lam)
            elif price <= lower:
                long_side = pos.direction == "long"
                close_position(i, lower,
                               "stop_loss" if long_side else "take_profit",
                               gross_return=-cfg.lam if long_side else cfg.lam)
            elif i - pos.entry_index >= cfg.n:
                close_position(i, price, "time_barrier")

        # 2) record the mark: after exits, before any entry at this close
        equity[i] = cash if pos is None else pos.value_at(price)
        if equity[i] <= 0:
            raise EquityBreachError(
                f"equity {equity[i]:.2f} at {format_utc(int(stamps[i]))}"
            )

        # 3) signal action; entries are never initiated on the final bar
        s = int(sig[i])
        if s == 0:
            continue
        direction = "long" if s > 0 else "short"
        if pos is None:
            if cfg.allow_entry_signals and i < n_bars - 1:
                open_position(i, direction)
        elif pos.direction != direction and cfg.reversal_policy:
            close_position(i, price, "reversal")
            if i < n_bars - 1:
                open_position(i, direction)

    if pos is not None:
        close_position(n_bars - 1, closes[-1], "end_of_data")

    return EquityCurve(stamps, equity), trades


def portfolio_equity(
    curves: Sequence[EquityCurve], weights: Optional[Sequence[float]] = None
) -> EquityCurve:
    """Continuously rebalanced combination: portfolio return per bar is the
    weighted sum of member returns, compounded from the first curve's start
    value."""
    if not curves:
        raise ConfigError("no curves to combine")
    if weights is None:
        weights = [1.0 / len(curves)] * len(curves)
    w = np.asarray(weights, dtype=float)
    if len(w) != len(curves):
        raise ShapeError(f"{len(w)} weights vs {len(curves)} curves")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ConfigError("weights must be non-negative and sum to 1")
    base = curves[0].timestamps
    for c in curves[1:]:
        if len(c.timestamps) != len(base) or not np.array_equal(c.timestamps, base):
            raise ShapeError("curves do not share an index")
    rets = np.stack([c.returns for c in curves], axis=0)
    port_ret = w @ rets
    start = float(curves[0].equity[0])
    equity = start * np.concatenate([[1.0], np.cumprod(1.0 + port_ret)])
    return EquityCurve(base.copy(), equity)
