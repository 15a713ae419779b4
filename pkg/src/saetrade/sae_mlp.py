"""Supervised autoencoder MLP with hand-derived backpropagation.

The network has three affine stacks: an encoder down to a bottleneck code,
a decoder reconstructing the input from the code alone, and a classifier
head that consumes the input concatenated with the code and emits softmax
probabilities over the three position classes (-1, 0, +1). Training
minimizes w_rec * MSE + w_cls * weighted cross-entropy with Adam, and
snapshots the epoch with the best validation selection metric.

Everything is numpy; no autodiff framework is involved.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    NumericError,
    ShapeError,
    SpecMismatchError,
    TrainingError,
)
from .labeling import TblConfig, phi_metric, tally
from .market_data import AlignedFrame
from .seeding import derive_seed

CLASS_ORDER = (-1, 0, 1)  # softmax column order
LABEL_COLUMN = "label"

_ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(float)),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
}


@dataclass(frozen=True)
class SaeArchitecture:
    """Layer widths for the three stacks.

    ``encoder_layers`` ends at the bottleneck width B; ``decoder_layers``
    ends at ``input_dim``; ``classifier_layers`` ends at 3 and its first
    layer consumes input_dim + B. Hidden layers use ``activation``; the
    code, the reconstruction and the classifier logits are linear.
    """

    input_dim: int
    encoder_layers: tuple[int, ...]
    decoder_layers: tuple[int, ...]
    classifier_layers: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1")
        if not self.encoder_layers or self.encoder_layers[-1] < 1:
            raise ConfigError("encoder needs at least the bottleneck layer (width >= 1)")
        if not self.decoder_layers or self.decoder_layers[-1] != self.input_dim:
            raise ConfigError("decoder must end at input_dim")
        if not self.classifier_layers or self.classifier_layers[-1] != 3:
            raise ConfigError("classifier must end at 3 classes")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def bottleneck(self) -> int:
        return self.encoder_layers[-1]


def default_architecture(
    input_dim: int,
    bottleneck: int = 8,
    encoder_hidden: tuple[int, ...] = (64,),
    classifier_hidden: tuple[int, ...] = (64, 32),
    activation: str = "relu",
) -> SaeArchitecture:
    """Encoder hidden widths, mirrored decoder, classifier hidden widths."""
    return SaeArchitecture(
        input_dim=input_dim,
        encoder_layers=(*encoder_hidden, bottleneck),
        decoder_layers=(*reversed(encoder_hidden), input_dim),
        classifier_layers=(*classifier_hidden, 3),
        activation=activation,
    )


@dataclass
class SaeParams:
    """Weight matrices and bias vectors per stack, input-to-output order."""

    encoder: list[tuple[np.ndarray, np.ndarray]]
    decoder: list[tuple[np.ndarray, np.ndarray]]
    classifier: list[tuple[np.ndarray, np.ndarray]]

    def stacks(self) -> list[tuple[str, list[tuple[np.ndarray, np.ndarray]]]]:
        return [("encoder", self.encoder), ("decoder", self.decoder),
                ("classifier", self.classifier)]

    def flat_arrays(self) -> list[np.ndarray]:
        out = []
        for _, layers in self.stacks():
            for W, b in layers:
                out.extend((W, b))
        return out

    def deep_copy(self) -> "SaeParams":
        return SaeParams(
            encoder=[(W.copy(), b.copy()) for W, b in self.encoder],
            decoder=[(W.copy(), b.copy()) for W, b in self.decoder],
            classifier=[(W.copy(), b.copy()) for W, b in self.classifier],
        )


@dataclass(frozen=True)
class TrainConfig:
    w_rec: float = 1.0
    w_cls: float = 1.0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 10
    class_weight_cap: float = 10.0
    class_weights: Optional[tuple[float, float, float]] = None
    seed: int = 0

    def __post_init__(self):
        if self.w_rec < 0 or self.w_cls < 0 or self.w_rec + self.w_cls <= 0:
            raise ConfigError("loss weights must be >= 0 with a positive sum")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")


@dataclass
class TrainedSae:
    """Everything needed to reproduce predictions: architecture, parameters,
    the training-split standardization constants, and the epoch history."""

    architecture: SaeArchitecture
    params: SaeParams
    feature_names: list[str]
    feature_means: np.ndarray
    feature_stds: np.ndarray
    history: list[dict]
    selected_epoch: int
    validation_phi: Optional[float]


def _layer_dims(arch: SaeArchitecture) -> list[tuple[str, int, int]]:
    dims = []
    prev = arch.input_dim
    for w in arch.encoder_layers:
        dims.append(("encoder", prev, w))
        prev = w
    code = prev
    for w in arch.decoder_layers:
        dims.append(("decoder", prev, w))
        prev = w
    prev = arch.input_dim + code
    for w in arch.classifier_layers:
        dims.append(("classifier", prev, w))
        prev = w
    return dims


def init_params(arch: SaeArchitecture, seed: int) -> SaeParams:
    """He-style normal initialization, zero biases, seeded."""
    rng = np.random.default_rng(derive_seed(seed, "sae-init"))
    stacks: dict[str, list] = {"encoder": [], "decoder": [], "classifier": []}
    for stack, fan_in, fan_out in _layer_dims(arch):
        scale = np.sqrt(2.0 / fan_in)
        W = rng.normal(0.0, scale, size=(fan_in, fan_out))
        stacks[stack].append((W, np.zeros(fan_out)))
    return SaeParams(**stacks)


def _stack_forward(layers, x, act_fn, stack_name):
    """Affine stack with activation on all but the last layer.

    Returns (activations per layer incl. input, pre-activations).
    """
    acts = [x]
    pres = []
    n = len(layers)
    for i, (W, b) in enumerate(layers):
        if acts[-1].shape[1] != W.shape[0]:
            raise ShapeError(
                f"{stack_name}[{i}] expects {W.shape[0]} inputs, got {acts[-1].shape[1]}"
            )
        z = acts[-1] @ W + b
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite activation in {stack_name}[{i}]")
        pres.append(z)
        acts.append(act_fn(z) if i < n - 1 else z)
    return acts, pres


def _stack_backward(layers, acts, pres, d_out, act_grad):
    """Gradients for one affine stack given dL/d(final pre-activation)."""
    grads = [None] * len(layers)
    dz = d_out
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads[i] = (acts[i].T @ dz, dz.sum(axis=0))
        da = dz @ W.T
        if i > 0:
            dz = da * act_grad(pres[i - 1])
    return grads, da


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _as_batch(x: np.ndarray, arch: SaeArchitecture) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise ShapeError(f"expected (*, {arch.input_dim}) input, got {x.shape}")
    return x


def forward(
    arch: SaeArchitecture, params: SaeParams, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run the network; returns (reconstruction, class_probs, code)."""
    x = _as_batch(x, arch)
    act_fn, _ = _ACTIVATIONS[arch.activation]
    enc_acts, _ = _stack_forward(params.encoder, x, act_fn, "encoder")
    code = enc_acts[-1]
    dec_acts, _ = _stack_forward(params.decoder, code, act_fn, "decoder")
    recon = dec_acts[-1]
    cls_in = np.concatenate([x, code], axis=1)
    cls_acts, _ = _stack_forward(params.classifier, cls_in, act_fn, "classifier")
    probs = _softmax(cls_acts[-1])
    return recon, probs, code


def labels_to_indices(labels: np.ndarray) -> np.ndarray:
    """Map {-1, 0, +1} labels to softmax columns {0, 1, 2}."""
    y = np.asarray(labels)
    if y.size and not np.isin(y, CLASS_ORDER).all():
        bad = sorted(set(np.unique(y)) - set(CLASS_ORDER))
        raise DataError(f"labels outside {{-1, 0, 1}}: {bad}")
    return (y + 1).astype(np.int64)


def _batch_loss_terms(arch, params, x, y_idx, class_weights):
    """Forward pass returning losses plus the caches backward needs."""
    act_fn, _ = _ACTIVATIONS[arch.activation]
    enc_acts, enc_pres = _stack_forward(params.encoder, x, act_fn, "encoder")
    code = enc_acts[-1]
    dec_acts, dec_pres = _stack_forward(params.decoder, code, act_fn, "decoder")
    recon = dec_acts[-1]
    cls_in = np.concatenate([x, code], axis=1)
    cls_acts, cls_pres = _stack_forward(params.classifier, cls_in, act_fn, "classifier")
    probs = _softmax(cls_acts[-1])

    m = x.shape[0]
    rec_loss = float(np.mean((recon - x) ** 2))
    # numerically safe log through the shifted-logit identity
    logits = cls_acts[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    sample_w = class_weights[y_idx]
    cls_loss = float(np.mean(-sample_w * log_probs[np.arange(m), y_idx]))
    caches = (enc_acts, enc_pres, dec_acts, dec_pres, cls_acts, cls_pres, probs, recon)
    return rec_loss, cls_loss, caches


def loss(
    arch: SaeArchitecture,
    params: SaeParams,
    x: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    class_weights: Optional[np.ndarray] = None,
) -> float:
    """w_rec * MSE(reconstruction, x) + w_cls * weighted CE, batch mean."""
    x = _as_batch(x, arch)
    if x.shape[0] == 0:
        raise DataError("empty batch")
    y_idx = labels_to_indices(labels)
    cw = np.ones(3) if class_weights is None else np.asarray(class_weights, dtype=float)
    rec, cls, _ = _batch_loss_terms(arch, params, x, y_idx, cw)
    return cfg.w_rec * rec + cfg.w_cls * cls


def _grads_from_caches(arch, params, x, y_idx, cw, cfg, caches) -> SaeParams:
    enc_acts, enc_pres, dec_acts, dec_pres, cls_acts, cls_pres, probs, recon = caches
    _, act_grad = _ACTIVATIONS[arch.activation]
    m, dim = x.shape

    # reconstruction head: d/d(recon) of w_rec * mean((recon - x)^2)
    d_recon = cfg.w_rec * 2.0 * (recon - x) / (m * dim)
    dec_grads, d_code_dec = _stack_backward(params.decoder, dec_acts, dec_pres,
                                            d_recon, act_grad)

    # classifier head: softmax + weighted CE collapses to w*(p - onehot)/m
    onehot = np.zeros_like(probs)
    onehot[np.arange(m), y_idx] = 1.0
    d_logits = cfg.w_cls * cw[y_idx][:, None] * (probs - onehot) / m
    cls_grads, d_cls_in = _stack_backward(params.classifier, cls_acts, cls_pres,
                                          d_logits, act_grad)

    d_code = d_code_dec + d_cls_in[:, dim:]
    enc_grads, _ = _stack_backward(params.encoder, enc_acts, enc_pres, d_code, act_grad)
    return SaeParams(encoder=enc_grads, decoder=dec_grads, classifier=cls_grads)


def backward(
    arch: SaeArchitecture,
    params: SaeParams,
    x: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    class_weights: Optional[np.ndarray] = None,
) -> SaeParams:
    """Analytic gradient of :func:`loss`, congruent to ``params``."""
    x = _as_batch(x, arch)
    if x.shape[0] == 0:
        raise DataError("empty batch")
    y_idx = labels_to_indices(labels)
    cw = np.ones(3) if class_weights is None else np.asarray(class_weights, dtype=float)
    _, _, caches = _batch_loss_terms(arch, params, x, y_idx, cw)
    return _grads_from_caches(arch, params, x, y_idx, cw, cfg, caches)


def _standardize_fit(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    means = matrix.mean(axis=0)
    stds = matrix.std(axis=0)
    stds = np.where(stds > 0, stds, 1.0)
    return means, stds


def _frame_matrix(frame: AlignedFrame, feature_names: list[str]) -> np.ndarray:
    missing = [n for n in feature_names if n not in frame.columns]
    if missing:
        raise SpecMismatchError(f"frame lacks model features: {missing}")
    return np.column_stack([frame.column(n) for n in feature_names])


def _class_weights_from_counts(y_idx: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    if cfg.class_weights is not None:
        return np.asarray(cfg.class_weights, dtype=float)
    counts = np.bincount(y_idx, minlength=3).astype(float)
    total = counts.sum()
    weights = np.where(counts > 0, total / (3.0 * np.maximum(counts, 1.0)),
                       cfg.class_weight_cap)
    return np.minimum(weights, cfg.class_weight_cap)


def _predict_indices(arch, params, matrix) -> np.ndarray:
    _, probs, _ = forward(arch, params, matrix)
    best = probs.max(axis=1, keepdims=True)
    ties = (probs == best).sum(axis=1)
    idx = probs.argmax(axis=1)
    idx[ties > 1] = 1  # exact tie -> stay out of the market
    return idx


class _Adam:
    def __init__(self, arrays: list[np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays: list[np.ndarray], grads: list[np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            a -= c.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + c.adam_eps)


def train(
    train_frame: AlignedFrame,
    val_frame: Optional[AlignedFrame],
    arch: SaeArchitecture,
    cfg: TrainConfig,
    tbl: TblConfig,
) -> TrainedSae:
    """Mini-batch Adam with per-epoch snapshot selection by validation phi.

    Standardization constants are fitted on the training rows and applied
    to validation internally. Without a validation frame the final epoch's
    parameters are kept. Deterministic given cfg.seed.
    """
    train_frame.record_read("sae-train")
    if val_frame is not None:
        val_frame.record_read("sae-validate")
    feature_names = [c for c in train_frame.column_names if c != LABEL_COLUMN]
    if LABEL_COLUMN not in train_frame.columns:
        raise DataError("training frame lacks a label column")
    if len(feature_names) != arch.input_dim:
        raise SpecMismatchError(
            f"architecture expects {arch.input_dim} features, frame has {len(feature_names)}"
        )
    x_raw = _frame_matrix(train_frame, feature_names)
    y_idx = labels_to_indices(train_frame.column(LABEL_COLUMN))
    means, stds = _standardize_fit(x_raw)
    x = (x_raw - means) / stds
    n = x.shape[0]

    class_weights = _class_weights_from_counts(y_idx, cfg)
    params = init_params(arch, cfg.seed)
    adam = _Adam(params.flat_arrays(), cfg)
    shuffle_rng = np.random.default_rng(derive_seed(cfg.seed, "sae-shuffle"))

    val_x = val_y = None
    if val_frame is not None:
        val_x = (_frame_matrix(val_frame, feature_names) - means) / stds
        val_y = np.asarray(val_frame.column(LABEL_COLUMN), dtype=np.int64)

    def val_phi(p: SaeParams) -> Optional[float]:
        if val_x is None or len(val_x) == 0:
            return None
        pred = np.asarray(CLASS_ORDER)[_predict_indices(arch, p, val_x)]
        return phi_metric(tally(pred, val_y), tbl)

    history: list[dict] = []
    best_phi = val_phi(params)
    best_params = params.deep_copy()
    best_epoch = 0
    history.append({"epoch": 0, "train_loss": None, "val_phi": best_phi})

    last_finite_epoch = 0
    since_improvement = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            rows = order[lo : lo + cfg.batch_size]
            bx, by = x[rows], y_idx[rows]
            rec, cls, caches = _batch_loss_terms(arch, params, bx, by, class_weights)
            batch_loss = cfg.w_rec * rec + cfg.w_cls * cls
            if not np.isfinite(batch_loss):
                raise TrainingError("training loss diverged", last_finite_epoch)
            grads = _grads_from_caches(arch, params, bx, by, class_weights, cfg, caches)
            adam.step(params.flat_arrays(), grads.flat_arrays())
            total += batch_loss * len(rows)
        last_finite_epoch = epoch
        epoch_loss = total / n
        phi = val_phi(params)
        history.append({"epoch": epoch, "train_loss": epoch_loss, "val_phi": phi})
        if phi is not None:
            if best_phi is None or phi > best_phi:
                best_phi, best_epoch = phi, epoch
                best_params = params.deep_copy()
                since_improvement = 0
            else:
                since_improvement += 1
                if since_improvement >= cfg.patience:
                    break
        else:
            best_params, best_epoch = params.deep_copy(), epoch

    return TrainedSae(
        architecture=arch,
        params=best_params,
        feature_names=feature_names,
        feature_means=means,
        feature_stds=stds,
        history=history,
        selected_epoch=best_epoch,
        validation_phi=best_phi,
    )


def predict(model: TrainedSae, frame: AlignedFrame) -> np.ndarray:
    """Argmax class per row mapped to {-1, 0, +1}; exact ties resolve to 0."""
    matrix = _frame_matrix(frame, model.feature_names)
    standardized = (matrix - model.feature_means) / model.feature_stds
    idx = _predict_indices(model.architecture, model.params, standardized)
    return np.asarray(CLASS_ORDER, dtype=np.int8)[idx]


# -- checkpoint container ----------------------------------------------------

CHECKPOINT_FORMAT = "sae-checkpoint"
CHECKPOINT_VERSION = 1


def _params_to_lists(params: SaeParams) -> dict:
    return {
        stack: [{"W": W.tolist(), "b": b.tolist()} for W, b in layers]
        for stack, layers in params.stacks()
    }


def _params_from_lists(payload: dict) -> SaeParams:
    def rebuild(layers):
        return [(np.asarray(l["W"], dtype=float), np.asarray(l["b"], dtype=float))
                for l in layers]

    return SaeParams(
        encoder=rebuild(payload["encoder"]),
        decoder=rebuild(payload["decoder"]),
        classifier=rebuild(payload["classifier"]),
    )


def save_checkpoint(model: TrainedSae, path) -> None:
    """Versioned JSON checkpoint; floats survive bit-exactly via repr."""
    arch = model.architecture
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": {
            "input_dim": arch.input_dim,
            "encoder_layers": list(arch.encoder_layers),
            "decoder_layers": list(arch.decoder_layers),
            "classifier_layers": list(arch.classifier_layers),
            "activation": arch.activation,
        },
        "params": _params_to_lists(model.params),
        "feature_names": model.feature_names,
        "feature_means": model.feature_means.tolist(),
        "feature_stds": model.feature_stds.tolist(),
        "history": model.history,
        "selected_epoch": model.selected_epoch,
        "validation_phi": model.validation_phi,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path) -> TrainedSae:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"not a checkpoint file: {path}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {doc.get('version')}")
    a = doc["architecture"]
    arch = SaeArchitecture(
        input_dim=a["input_dim"],
        encoder_layers=tuple(a["encoder_layers"]),
        decoder_layers=tuple(a["decoder_layers"]),
        classifier_layers=tuple(a["classifier_layers"]),
        activation=a["activation"],
    )
    return TrainedSae(
        architecture=arch,
        params=_params_from_lists(doc["params"]),
        feature_names=list(doc["feature_names"]),
        feature_means=np.asarray(doc["feature_means"], dtype=float),
        feature_stds=np.asarray(doc["feature_stds"], dtype=float),
        history=doc["history"],
        selected_epoch=doc["selected_epoch"],
        validation_phi=doc["validation_phi"],
    )
