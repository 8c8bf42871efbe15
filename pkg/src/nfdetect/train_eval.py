"""Training loop, threshold tuning and detection metrics."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    EmptyBatch,
    EmptyInput,
    EmptySplit,
    InvalidConfig,
    LengthMismatch,
    ShapeMismatch,
    TrainingError,
)
from .model import Checkpoint, CnnBiLstmModel, ModelConfig, build_model, init_model, predict_proba
from .preprocess import DatasetSplits, FeatureEncoder, SequenceWindow, stack_windows, window_labels

log = logging.getLogger(__name__)

BCE_EPS = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 256
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    class_weighting: bool = True
    threshold_grid_step: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidConfig(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidConfig(f"batch_size must be >= 1, got {self.batch_size}")
        # lr = 0 is allowed: it freezes the model, which is handy for checks
        if not self.learning_rate >= 0:
            raise InvalidConfig(f"learning_rate must be non-negative, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidConfig("Adam betas must lie in [0, 1)")
        if not self.epsilon > 0:
            raise InvalidConfig("Adam epsilon must be positive")
        if not 0 < self.threshold_grid_step <= 1:
            raise InvalidConfig("threshold_grid_step must lie in (0, 1]")


# --------------------------------------------------------------------------
# loss

def _check_pair(scores, labels):
    p = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise LengthMismatch(f"{p.size} scores vs {y.size} labels")
    return p, y


def weighted_bce(scores, labels, weights=(1.0, 1.0)):
    """Class-weighted binary cross-entropy on probabilities.

    ``weights`` is ``(w_pos, w_neg)``.  Scores are clamped to
    ``[1e-7, 1 - 1e-7]`` before the logs.  Returns ``(loss, dloss_dscores)``;
    the gradient is zero where the clamp is active.
    """
    p, y = _check_pair(scores, labels)
    if p.size == 0:
        raise EmptyBatch("weighted_bce on an empty batch")
    w_pos, w_neg = weights
    n = p.size
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    loss = -np.sum(w_pos * y * np.log(pc) + w_neg * (1.0 - y) * np.log(1.0 - pc)) / n
    grad = -(w_pos * y / pc - w_neg * (1.0 - y) / (1.0 - pc)) / n
    grad = np.where((p >= BCE_EPS) & (p <= 1.0 - BCE_EPS), grad, 0.0)
    return float(loss), grad


def weighted_bce_logit_grad(scores, labels, weights=(1.0, 1.0)) -> np.ndarray:
    """d(weighted_bce)/d(logit) for logistic scores, without the clamp."""
    p, y = _check_pair(scores, labels)
    if p.size == 0:
        raise EmptyBatch("weighted_bce on an empty batch")
    w_pos, w_neg = weights
    return (w_neg * (1.0 - y) * p - w_pos * y * (1.0 - p)) / p.size


def class_weights(labels) -> tuple[float, float]:
    """Inverse-frequency weights ``(N / 2N_pos, N / 2N_neg)``; unit weights if a class is absent."""
    y = np.asarray(labels)
    n = y.size
    n_pos = int(np.sum(y == 1))
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return 1.0, 1.0
    return n / (2.0 * n_pos), n / (2.0 * n_neg)


# --------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, config: TrainConfig):
    """Bias-corrected Adam update, applied to ``params`` in place."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeMismatch(f"{name}: gradient {g.shape} vs parameter {w.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        w -= config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.epsilon)
    return params, state


# --------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class ConfusionCounts:
    TP: int
    TN: int
    FP: int
    FN: int

    @property
    def total(self) -> int:
        return self.TP + self.TN + self.FP + self.FN


@dataclass(frozen=True)
class MetricsReport:
    counts: ConfusionCounts
    accuracy: float
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, c: ConfusionCounts) -> "MetricsReport":
        accuracy = (c.TP + c.TN) / c.total if c.total else 0.0
        precision = c.TP / (c.TP + c.FP) if c.TP + c.FP else 0.0
        recall = c.TP / (c.TP + c.FN) if c.TP + c.FN else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(c, accuracy, precision, recall, f1)

    def to_dict(self) -> dict:
        c = self.counts
        return {
            "counts": {"TP": c.TP, "TN": c.TN, "FP": c.FP, "FN": c.FN},
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


def compute_metrics(scores, labels, threshold: float) -> MetricsReport:
    """Confusion counts and accuracy/precision/recall/F1; positive iff score >= threshold."""
    p, y = _check_pair(scores, labels)
    if p.size == 0:
        raise EmptyInput("compute_metrics on zero samples")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    pred = p >= threshold
    pos = y == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(p.size - tp - fp - fn)
    return MetricsReport.from_counts(ConfusionCounts(tp, tn, fp, fn))


def threshold_grid(step: float) -> np.ndarray:
    """``{0, step, 2*step, ...}`` up to 1, with 1 itself included when step divides it."""
    if not 0 < step <= 1:
        raise ValueError(f"grid step must lie in (0, 1], got {step}")
    count = int(math.floor(1.0 / step + 1e-9))
    return np.round(np.arange(count + 1) * step, 12)


def tune_threshold(val_scores, val_labels, grid_step: float = 0.01) -> tuple[float, float]:
    """Smallest grid threshold maximizing F1 on the validation set."""
    p, y = _check_pair(val_scores, val_labels)
    if p.size == 0:
        raise EmptyInput("tune_threshold on an empty validation set")
    grid = threshold_grid(grid_step)
    pos = y == 1
    pred = p[None, :] >= grid[:, None]
    tp = np.sum(pred & pos, axis=1)
    fp = np.sum(pred & ~pos, axis=1)
    fn = np.sum(~pred & pos, axis=1)
    # same arithmetic as MetricsReport.from_counts so ties resolve identically
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(precision + recall > 0, 2 * precision * recall / (precision + recall), 0.0)
    best = int(np.argmax(f1))  # first index wins ties
    return float(grid[best]), compute_metrics(p, y, float(grid[best])).f1


# --------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_f1: float
    threshold: float


def train_epoch(
    model: CnnBiLstmModel,
    X: np.ndarray | Sequence[SequenceWindow],
    y: Optional[np.ndarray],
    config: TrainConfig,
    rng: np.random.Generator,
    state: Optional[AdamState] = None,
    weights: tuple[float, float] = (1.0, 1.0),
) -> float:
    """One pass over the training set in shuffled mini-batches.

    ``X`` may be a window list (then ``y`` may be None) or a stacked
    ``[N, T, n]`` array.  Returns the batch-size-weighted mean loss.
    """
    if not isinstance(X, np.ndarray):
        windows = list(X)
        if not windows:
            raise EmptyInput("train_epoch on an empty training set")
        X, y = stack_windows(windows), window_labels(windows)
    n = len(X)
    if n == 0:
        raise EmptyInput("train_epoch on an empty training set")
    if state is None:
        state = AdamState()
    order = rng.permutation(n)
    params = model.parameters()
    total = 0.0
    for start in range(0, n, config.batch_size):
        idx = order[start : start + config.batch_size]
        xb, yb = X[idx], y[idx]
        p, cache = model.forward(xb, train=True, rng=rng)
        loss, _ = weighted_bce(p, yb, weights)
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite training loss {loss}")
        grads = model.backward(weighted_bce_logit_grad(p, yb, weights), cache)
        adam_step(params, grads, state, config)
        total += loss * len(idx)
    return total / n


def identity_encoder(n: int) -> FeatureEncoder:
    """Encoder for data already scaled to [0, 1]."""
    return FeatureEncoder(tuple(f"f{i}" for i in range(n)), np.zeros(n, bool), np.zeros(n), np.ones(n))


def fit(
    splits: DatasetSplits,
    model_config: ModelConfig,
    train_config: TrainConfig,
    encoder: Optional[FeatureEncoder] = None,
    schema: Optional[dict] = None,
) -> tuple[Checkpoint, list[EpochLog]]:
    """Train for ``epochs`` epochs, tuning the threshold on validation each epoch.

    Keeps the epoch with the highest validation F1 (earliest on ties).
    """
    for name in ("train", "val", "test"):
        if not getattr(splits, name):
            raise EmptySplit(f"{name} split is empty")
    X_tr, y_tr = stack_windows(splits.train), window_labels(splits.train)
    X_va, y_va = stack_windows(splits.val), window_labels(splits.val)
    weights = class_weights(y_tr) if train_config.class_weighting else (1.0, 1.0)
    log.info("training on %d windows, class weights pos=%.4f neg=%.4f", len(X_tr), *weights)

    model = init_model(model_config)
    rng = np.random.default_rng(train_config.seed)
    state = AdamState()
    logs: list[EpochLog] = []
    best: Optional[tuple[float, float, dict]] = None
    for epoch in range(1, train_config.epochs + 1):
        loss = train_epoch(model, X_tr, y_tr, train_config, rng, state, weights)
        scores = predict_proba(model, X_va)
        if not np.all(np.isfinite(scores)):
            raise TrainingError(f"non-finite validation scores at epoch {epoch}")
        tau, f1 = tune_threshold(scores, y_va, train_config.threshold_grid_step)
        logs.append(EpochLog(epoch, loss, f1, tau))
        log.info("epoch %2d  loss %.6f  val_f1 %.4f  tau %.2f", epoch, loss, f1, tau)
        if best is None or f1 > best[0]:
            best = (f1, tau, {k: v.copy() for k, v in model.parameters().items()})

    best_model = build_model(model_config, best[2])
    enc = encoder if encoder is not None else identity_encoder(model_config.n)
    return Checkpoint(best_model, enc, best[1], schema), logs


def evaluate(checkpoint: Checkpoint, windows) -> MetricsReport:
    if isinstance(windows, np.ndarray):
        raise TypeError("evaluate needs labeled SequenceWindow objects")
    windows = list(windows)
    if not windows:
        raise EmptyInput("evaluate on zero windows")
    scores = predict_proba(checkpoint.model, windows)
    return compute_metrics(scores, window_labels(windows), checkpoint.threshold)


# --------------------------------------------------------------------------
# exports

def epoch_log_csv(logs: Sequence[EpochLog]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "train_loss", "val_f1", "threshold"])
    for e in logs:
        writer.writerow([e.epoch, repr(e.train_loss), repr(e.val_f1), repr(e.threshold)])
    return buf.getvalue()


def metrics_json(report: MetricsReport, **extra) -> str:
    doc = report.to_dict()
    doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
