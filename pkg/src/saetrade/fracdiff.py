"""Fixed-width-window fractional differentiation and stationarity search.

A series is differentiated with truncated binomial weights of real order d;
the search picks the smallest d on a grid whose output passes a native
Dickey-Fuller regression test (constant, no trend) at the configured
significance level.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DegenerateInputError,
    InsufficientDataError,
    NoStationaryDError,
    SpecMismatchError,
    WidthOverflowError,
)
from .market_data import AlignedFrame

# Response-surface coefficients for the constant-only single-series case,
# MacKinnon (1994, 2010). p = Phi(poly(tau)) between TAU_MIN and TAU_MAX;
# the small-p polynomial applies at or below TAU_STAR.
TAU_STAR = -1.61
TAU_MIN = -18.83
TAU_MAX = 2.74
SMALL_P_COEF = (2.1659, 1.4412, 0.038269)
LARGE_P_COEF = (1.7339, 0.93202, -0.12745, -0.010368)

P_CLAMP_LO = 0.001
P_CLAMP_HI = 0.999


@dataclass(frozen=True)
class FfdWeights:
    """Truncated differentiation weights for order ``d`` at threshold ``tau``."""

    d: float
    tau: float
    weights: np.ndarray

    @property
    def width(self) -> int:
        return len(self.weights)

    @property
    def warmup(self) -> int:
        """Rows consumed before the first full window."""
        return len(self.weights) - 1


@dataclass(frozen=True)
class AdfResult:
    statistic: float
    p_value: float
    lags_used: int
    n_obs: int
    surface_clamped: bool = False


def ffd_weights(d: float, tau: float = 1e-4, max_width: int = 10_000) -> FfdWeights:
    """Weights w_0=1, w_k = -w_{k-1}*(d-k+1)/k, truncated at |w_k| < tau."""
    if not math.isfinite(d) or d < 0:
        raise ConfigError(f"d must be finite and >= 0, got {d}")
    if not 0 < tau < 1:
        raise ConfigError(f"tau must lie in (0, 1), got {tau}")
    w = [1.0]
    k = 1
    while True:
        nxt = -w[-1] * (d - k + 1) / k
        if abs(nxt) < tau:
            break
        if len(w) >= max_width:
            raise WidthOverflowError(
                f"|w_k| never fell below tau={tau:g} within max_width={max_width} "
                f"for d={d:g}; raise tau or max_width"
            )
        w.append(nxt)
        k += 1
    return FfdWeights(d=d, tau=tau, weights=np.asarray(w, dtype=float))


def apply_ffd(series: np.ndarray, w: FfdWeights) -> np.ndarray:
    """Dot each backward window with the weights; drop the warm-up rows.

    out[t] = sum_k w_k * series[t-k], for t >= width-1.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ConfigError("apply_ffd expects a 1-D series")
    if len(x) < w.width:
        raise InsufficientDataError(
            f"series length {len(x)} shorter than weight window {w.width}"
        )
    # np.convolve flips the kernel, which realizes the backward-window dot.
    return np.convolve(x, w.weights, mode="valid")


def _norm_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def mackinnon_pvalue(statistic: float) -> tuple[float, bool]:
    """Approximate p-value of the constant-only test statistic.

    Returns (p, clamped). Outside the fitted surface the value is clamped
    to [0.001, 0.999] and flagged.
    """
    if statistic < TAU_MIN:
        return P_CLAMP_LO, True
    if statistic > TAU_MAX:
        return P_CLAMP_HI, True
    coef = SMALL_P_COEF if statistic <= TAU_STAR else LARGE_P_COEF
    poly = 0.0
    for c in reversed(coef):
        poly = poly * statistic + c
    return _norm_cdf(poly), False


def schwert_lags(n: int) -> int:
    """Default lag order: floor(12 * (n/100)^(1/4))."""
    return int(math.floor(12.0 * (n / 100.0) ** 0.25))


def adf_test(series: np.ndarray, max_lags: Optional[int] = None) -> AdfResult:
    """Unit-root regression test with constant, no trend.

    Regresses dx_t on [x_{t-1}, dx_{t-1}..dx_{t-p}, 1] and returns the
    t-ratio on the lagged level plus its response-surface p-value. The lag
    order is fixed (no information-criterion search): ``max_lags`` when
    given, otherwise the Schwert rule.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ConfigError("adf_test expects a 1-D series")
    if not np.all(np.isfinite(x)):
        raise DegenerateInputError("series contains non-finite values")
    n = len(x)
    if n >= 1 and np.all(x == x[0]):
        raise DegenerateInputError("constant series has no unit-root regression")
    p = schwert_lags(n) if max_lags is None else int(max_lags)
    if p < 0:
        raise ConfigError(f"lag order must be >= 0, got {p}")
    nobs = n - 1 - p
    if nobs < 20:
        raise InsufficientDataError(
            f"only {nobs} observations after lag construction; need >= 20"
        )
    dx = np.diff(x)
    y = dx[p:]
    cols = [x[p:-1]]
    cols += [dx[p - i : n - 1 - i] for i in range(1, p + 1)]
    cols.append(np.ones(nobs))
    X = np.column_stack(cols)
    k = X.shape[1]

    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < k:
        raise DegenerateInputError("singular regression matrix")
    resid = y - X @ beta
    sigma2 = float(resid @ resid) / (nobs - k)
    xtx_inv = np.linalg.inv(X.T @ X)
    se0 = math.sqrt(sigma2 * xtx_inv[0, 0])
    stat = float(beta[0] / se0)
    p_value, clamped = mackinnon_pvalue(stat)
    return AdfResult(statistic=stat, p_value=p_value, lags_used=p, n_obs=nobs,
                     surface_clamped=clamped)


def find_optimal_d(
    series: np.ndarray,
    grid: Sequence[float],
    significance: float = 0.01,
    tau: float = 1e-4,
    max_width: int = 10_000,
    max_lags: Optional[int] = None,
) -> tuple[float, AdfResult, FfdWeights]:
    """Smallest grid order whose differentiated series passes the test.

    The grid must be ascending. When nothing passes, raises
    NoStationaryDError carrying the best (d, p) pair seen.
    """
    grid = list(grid)
    if not grid:
        raise ConfigError("empty differentiation grid")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("grid must be strictly ascending")
    if grid[0] < 0:
        raise ConfigError("grid values must be >= 0")
    best_d, best_p = grid[0], 1.0
    for d in grid:
        w = ffd_weights(d, tau=tau, max_width=max_width)
        transformed = apply_ffd(series, w)
        result = adf_test(transformed, max_lags=max_lags)
        if result.p_value < best_p:
            best_d, best_p = d, result.p_value
        if result.p_value < significance:
            return d, result, w
    raise NoStationaryDError(best_d, best_p)


@dataclass(frozen=True)
class FracdiffConfig:
    grid_step: float = 0.05
    grid_max: float = 1.0
    significance: float = 0.01
    tau: float = 1e-4
    max_width: int = 10_000
    max_lags: Optional[int] = None

    def grid(self) -> list[float]:
        steps = int(round(self.grid_max / self.grid_step))
        return [round(i * self.grid_step, 10) for i in range(steps + 1)]


@dataclass
class FfdSpec:
    """Per-feature optimal order and weights, fitted on one training segment."""

    entries: dict[str, tuple[float, FfdWeights]] = field(default_factory=dict)

    @property
    def max_warmup(self) -> int:
        if not self.entries:
            return 0
        return max(w.warmup for _, w in self.entries.values())

    def to_json_dict(self) -> dict:
        return {
            name: {"d": d, "tau": w.tau, "weights_len": w.width}
            for name, (d, w) in self.entries.items()
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


def fit_ffd_spec(train: AlignedFrame, config: FracdiffConfig) -> FfdSpec:
    """Search the optimal d independently for every column of the frame."""
    train.record_read("fit_ffd_spec")
    spec = FfdSpec()
    for name in train.column_names:
        if name == "label":
            continue
        d, _, w = find_optimal_d(
            train.column(name),
            grid=config.grid(),
            significance=config.significance,
            tau=config.tau,
            max_width=config.max_width,
            max_lags=config.max_lags,
        )
        spec.entries[name] = (d, w)
    return spec


def apply_ffd_spec(frame: AlignedFrame, spec: FfdSpec) -> AlignedFrame:
    """Transform every column with its own weights; one rectangular output.

    All columns are re-aligned to the longest warm-up, so the row count
    shrinks by ``spec.max_warmup``.
    """
    warm = spec.max_warmup
    if len(frame) <= warm:
        raise InsufficientDataError(
            f"frame has {len(frame)} rows, needs more than warm-up {warm}"
        )
    out: dict[str, np.ndarray] = {}
    for name in frame.column_names:
        if name == "label":
            out[name] = frame.column(name)[warm:]
            continue
        if name not in spec.entries:
            raise SpecMismatchError(f"column {name} missing from fitted spec")
        _, w = spec.entries[name]
        transformed = apply_ffd(frame.column(name), w)
        out[name] = transformed[warm - w.warmup :] if warm > w.warmup else transformed
    return frame.drop_head(warm).with_columns(out)
