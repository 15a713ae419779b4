"""Walk-forward split planning and per-split pipeline orchestration.

The training window expands until it reaches the period cap, then shifts.
Each split fits its own differentiation spec, labels its own training rows
(dropping the final horizon so no label window crosses the boundary),
augments, trains, and predicts the test period. Every training-stage read
of time-bounded data is recorded against the split's test-range start so a
leakage audit can replay the run from the manifest.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .augment import AugmentConfig, augment
from .errors import ConfigError, DegenerateInputError, PlanViolationError, SaetradeError
from .fracdiff import FfdSpec, FfdWeights, FracdiffConfig, apply_ffd_spec, ffd_weights, fit_ffd_spec
from .labeling import TblConfig, triple_barrier_labels
from .market_data import AlignedFrame, AuditRecord
from .sae_mlp import SaeArchitecture, TrainConfig, TrainedSae, default_architecture, predict, train
from .seeding import derive_seed
from .timeutils import format_utc


@dataclass(frozen=True)
class SplitSpec:
    """Half-open [start, end) ranges; validation is optional."""

    index: int
    train_start: int
    train_end: int
    val_start: Optional[int]
    val_end: Optional[int]
    test_start: int
    test_end: int


@dataclass(frozen=True)
class SplitPlan:
    period_ns: int
    max_train_periods: int
    use_validation: bool
    splits: tuple[SplitSpec, ...]


def plan_splits(
    span_start: int,
    span_end: int,
    period_ns: int,
    max_train_periods: int,
    use_validation: bool = False,
) -> SplitPlan:
    """Tile the span into whole periods and lay out train/val/test windows.

    Split k trains on periods [max(1, k-cap+1) .. k] and tests on period
    k+1; with validation enabled the trailing period of that train window
    becomes the validation slice (so the first split needs two periods of
    history). A trailing partial period is dropped.
    """
    if period_ns <= 0:
        raise ConfigError("period must be positive")
    if max_train_periods < 1:
        raise ConfigError("max_train_periods must be >= 1")
    n_periods = (span_end - span_start) // period_ns
    needed = 3 if use_validation else 2
    if n_periods < needed:
        raise ConfigError(
            f"span holds {n_periods} whole periods; need >= {needed}"
            f"{' with validation' if use_validation else ''}"
        )

    def edge(period_number: int) -> int:
        # period j covers [edge(j), edge(j+1))
        return span_start + (period_number - 1) * period_ns

    splits = []
    first_k = 2 if use_validation else 1
    for k in range(first_k, n_periods):
        lo = max(1, k - max_train_periods + 1)
        if use_validation:
            spec = SplitSpec(
                index=len(splits) + 1,
                train_start=edge(lo),
                train_end=edge(k),
                val_start=edge(k),
                val_end=edge(k + 1),
                test_start=edge(k + 1),
                test_end=edge(k + 2),
            )
        else:
            spec = SplitSpec(
                index=len(splits) + 1,
                train_start=edge(lo),
                train_end=edge(k + 1),
                val_start=None,
                val_end=None,
                test_start=edge(k + 1),
                test_end=edge(k + 2),
            )
        splits.append(spec)
    return SplitPlan(
        period_ns=period_ns,
        max_train_periods=max_train_periods,
        use_validation=use_validation,
        splits=tuple(splits),
    )


@dataclass(frozen=True)
class SplitSettings:
    """Everything one split needs besides its data slice."""

    fracdiff: FracdiffConfig
    tbl: TblConfig
    noise_ratio: float
    copies: int
    vol_window: int
    bottleneck: int
    encoder_hidden: tuple[int, ...]
    classifier_hidden: tuple[int, ...]
    activation: str
    train: TrainConfig
    master_seed: int


@dataclass
class SplitResult:
    split_index: int
    ffd_spec: FfdSpec
    model: TrainedSae
    test_start: int
    test_end: int
    prediction_timestamps: np.ndarray
    predictions: np.ndarray
    validation_phi: Optional[float]
    audit: list[AuditRecord]
    timings: dict[str, float] = field(default_factory=dict)


def _fit_spec_tolerant(train_frame: AlignedFrame, cfg: FracdiffConfig) -> FfdSpec:
    """Per-column spec fit; a constant column is stationary by definition
    and falls back to d = 0 instead of failing the regression test."""
    try:
        return fit_ffd_spec(train_frame, cfg)
    except DegenerateInputError:
        pass
    spec = FfdSpec()
    for name in train_frame.column_names:
        if name == "label":
            continue
        col = train_frame.column(name)
        if np.all(col == col[0]):
            spec.entries[name] = (0.0, ffd_weights(0.0, tau=cfg.tau))
            continue
        sub = fit_ffd_spec(train_frame.with_columns({name: col}), cfg)
        spec.entries[name] = sub.entries[name]
    return spec


def _labeled_slice(
    transformed: AlignedFrame,
    raw: AlignedFrame,
    start: int,
    end: int,
    tbl: TblConfig,
    cutoff: int,
    audit: list[AuditRecord],
    split_index: int,
    stage: str,
) -> AlignedFrame:
    """Join labels onto the transformed rows of [start, end).

    Labels come from the raw closes of the same range; the final n rows
    are dropped so no label window reads past the range end.
    """
    raw_slice = raw.slice_time(start, end).tainted(cutoff, audit, split_index)
    raw_slice.record_read(stage)
    labels = triple_barrier_labels(raw_slice.column("close"), tbl)
    keep = len(labels) - tbl.n
    if keep <= 0:
        raise ConfigError(
            f"range [{format_utc(start)}, {format_utc(end)}) has {len(labels)} bars; "
            f"too short for horizon n={tbl.n}"
        )
    cut_ts = int(raw_slice.index[keep - 1])  # last labeled bar
    frame = transformed.slice_time(start, cut_ts + 1).tainted(cutoff, audit, split_index)
    pos = np.searchsorted(raw_slice.index, frame.index)
    columns = dict(frame.columns)
    columns["label"] = labels[pos].astype(float)
    return frame.with_columns(columns)


def run_split(split: SplitSpec, frame: AlignedFrame, settings: SplitSettings) -> SplitResult:
    """Full pipeline for one split: fit FFD -> label -> augment -> train ->
    predict the test period."""
    audit: list[AuditRecord] = []
    cutoff = split.test_start
    timings: dict[str, float] = {}
    try:
        t0 = time.perf_counter()
        train_raw = frame.slice_time(split.train_start, split.train_end).tainted(
            cutoff, audit, split.index
        )
        spec = _fit_spec_tolerant(train_raw, settings.fracdiff)
        timings["fit_ffd"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        visible = frame.slice_time(None, split.test_end)
        transformed = apply_ffd_spec(visible, spec)
        timings["apply_ffd"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        train_frame = _labeled_slice(
            transformed, frame, split.train_start, split.train_end,
            settings.tbl, cutoff, audit, split.index, "label-train",
        )
        val_frame = None
        if split.val_start is not None:
            val_frame = _labeled_slice(
                transformed, frame, split.val_start, split.val_end,
                settings.tbl, cutoff, audit, split.index, "label-validation",
            )
        timings["label"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        aug_cfg = AugmentConfig(
            noise_ratio=settings.noise_ratio,
            copies=settings.copies,
            vol_window=settings.vol_window,
            seed=derive_seed(settings.master_seed, "augment", split.index),
        )
        train_matrix = augment(train_frame, aug_cfg)
        timings["augment"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        input_dim = len([c for c in train_matrix.column_names if c != "label"])
        arch = default_architecture(
            input_dim,
            bottleneck=settings.bottleneck,
            encoder_hidden=settings.encoder_hidden,
            classifier_hidden=settings.classifier_hidden,
            activation=settings.activation,
        )
        train_cfg = replace(
            settings.train, seed=derive_seed(settings.master_seed, "train", split.index)
        )
        model = train(train_matrix, val_frame, arch, train_cfg, settings.tbl)
        timings["train"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        test_frame = transformed.slice_time(split.test_start, split.test_end)
        # prediction reads test features by design; log it as exempt
        audit.append(
            AuditRecord("predict", split.index,
                        int(test_frame.index[-1]) if len(test_frame) else split.test_start,
                        split.test_end)
        )
        predictions = predict(model, test_frame)
        timings["predict"] = time.perf_counter() - t0
    except SaetradeError as exc:
        exc.args = (f"split {split.index}: {exc}",)
        raise

    return SplitResult(
        split_index=split.index,
        ffd_spec=spec,
        model=model,
        test_start=split.test_start,
        test_end=split.test_end,
        prediction_timestamps=test_frame.index.copy(),
        predictions=predictions,
        validation_phi=model.validation_phi,
        audit=audit,
        timings=timings,
    )


def concat_signals(results: Sequence[SplitResult]) -> tuple[np.ndarray, np.ndarray]:
    """Stitch per-split test predictions into one gap-free signal series."""
    if not results:
        raise PlanViolationError("no split results")
    ordered = list(results)
    for a, b in zip(ordered, ordered[1:]):
        if b.split_index <= a.split_index:
            raise PlanViolationError("results out of order")
        if b.test_start != a.test_end:
            raise PlanViolationError(
                f"gap or overlap between split {a.split_index} (ends "
                f"{format_utc(a.test_end)}) and split {b.split_index} "
                f"(starts {format_utc(b.test_start)})"
            )
    stamps = np.concatenate([r.prediction_timestamps for r in ordered])
    signals = np.concatenate([r.predictions for r in ordered])
    if len(stamps) > 1 and not np.all(np.diff(stamps) > 0):
        raise PlanViolationError("concatenated signal index not strictly increasing")
    return stamps, signals


def run_walkforward(
    frame: AlignedFrame,
    plan: SplitPlan,
    settings: SplitSettings,
    jobs: int = 1,
    skip_indices: Optional[set[int]] = None,
) -> list[SplitResult]:
    """Run all splits, optionally in a process pool; results in plan order."""
    todo = [s for s in plan.splits if not skip_indices or s.index not in skip_indices]
    if jobs <= 1 or len(todo) <= 1:
        return [run_split(s, frame, settings) for s in todo]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(run_split, s, frame, settings) for s in todo]
        results = [f.result() for f in futures]
    return sorted(results, key=lambda r: r.split_index)
