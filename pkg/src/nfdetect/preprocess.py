"""Feature scaling, window reconstruction and train/val/test splitting."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ArityMismatch, BadRatios, ConfigError, EmptyInput, NotFitted, TooFewRecords
from .flow_ingest import DEFAULT_LOG1P_COLUMNS, FlowRecord, FlowSchema, largest_remainder

DEFAULT_WINDOW = 10
DEFAULT_STRIDE = 1
DEFAULT_RATIOS = (0.70, 0.15, 0.15)


@dataclass
class FeatureEncoder:
    """Per-feature min-max scaler with optional log1p pre-transform."""

    feature_names: tuple[str, ...]
    log1p_mask: np.ndarray
    min: Optional[np.ndarray] = None
    max: Optional[np.ndarray] = None

    @property
    def fitted(self) -> bool:
        return self.min is not None and self.max is not None

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def to_dict(self) -> dict:
        if not self.fitted:
            raise NotFitted("encoder has not been fitted")
        return {
            "feature_names": list(self.feature_names),
            "log1p_mask": [bool(b) for b in self.log1p_mask],
            "min": [float(v) for v in self.min],
            "max": [float(v) for v in self.max],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureEncoder":
        names = tuple(d["feature_names"])
        mask = np.array(d["log1p_mask"], dtype=bool)
        lo = np.array(d["min"], dtype=np.float64)
        hi = np.array(d["max"], dtype=np.float64)
        if not (len(names) == len(mask) == len(lo) == len(hi)):
            raise ValueError("encoder fields have inconsistent lengths")
        return cls(names, mask, lo, hi)


def _as_matrix(rows) -> np.ndarray:
    if isinstance(rows, np.ndarray):
        return np.asarray(rows, dtype=np.float64)
    rows = list(rows)
    if rows and isinstance(rows[0], FlowRecord):
        return np.array([r.features for r in rows], dtype=np.float64)
    return np.asarray(rows, dtype=np.float64)


def _pre(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = np.array(x, dtype=np.float64, copy=True)
    if mask.any():
        out[..., mask] = np.log1p(np.maximum(out[..., mask], 0.0))
    return out


def fit_encoder(
    train_records: Sequence[FlowRecord] | np.ndarray,
    schema: FlowSchema,
    log1p_columns: Sequence[str] = DEFAULT_LOG1P_COLUMNS,
) -> FeatureEncoder:
    """Fit per-feature min/max over training rows only.

    Accepts either flow records or an already-extracted feature matrix whose
    columns follow ``schema.feature_columns``.  Negative values in log1p
    columns are floored at zero first.
    """
    x = _as_matrix(train_records)
    if x.size == 0 or x.shape[0] == 0:
        raise EmptyInput("cannot fit encoder on zero records")
    if x.ndim != 2 or x.shape[1] != schema.n_features:
        raise ArityMismatch(schema.n_features, x.shape[-1])
    log1p = set(log1p_columns)
    mask = np.array([c in log1p for c in schema.feature_columns], dtype=bool)
    z = _pre(x, mask)
    return FeatureEncoder(tuple(schema.feature_columns), mask, z.min(axis=0), z.max(axis=0))


def transform_features(records, enc: FeatureEncoder) -> np.ndarray:
    """Scale features into [0, 1] using a fitted encoder.

    Works on any array whose last axis is the feature axis, so whole windows
    can be transformed in one call.  Constant features map to 0; values
    outside the training range are clipped.
    """
    if not enc.fitted:
        raise NotFitted("encoder has not been fitted")
    x = _as_matrix(records)
    if x.shape[-1] != enc.n_features:
        raise ArityMismatch(enc.n_features, x.shape[-1])
    z = _pre(x, enc.log1p_mask)
    span = enc.max - enc.min
    safe = np.where(span > 0, span, 1.0)
    out = (z - enc.min) / safe
    out = np.where(span > 0, out, 0.0)
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class SequenceWindow:
    X: np.ndarray
    label: Optional[int]
    origin_index: int

    @property
    def T(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]


def window_count(n_rows: int, T: int, stride: int) -> int:
    return (n_rows - T) // stride + 1


def build_windows(
    feature_matrix: np.ndarray,
    labels: Optional[Sequence[int]],
    T: int = DEFAULT_WINDOW,
    stride: int = DEFAULT_STRIDE,
    row_index: Optional[Sequence[int]] = None,
) -> list[SequenceWindow]:
    """Slice the ordered flow stream into fixed-length windows.

    Each window is labeled by its final row.  ``row_index`` maps matrix rows
    back to source row ordinals; it defaults to ``0..N-1``.
    """
    x = np.asarray(feature_matrix, dtype=np.float64)
    if T < 1 or stride < 1:
        raise ConfigError(f"window length and stride must be positive (T={T}, stride={stride})")
    n = x.shape[0]
    if n < T:
        raise TooFewRecords(f"need at least T={T} records to build a window, got {n}")
    if labels is not None and len(labels) != n:
        raise ValueError("labels and feature matrix lengths differ")
    if row_index is None:
        row_index = range(n)
    out = []
    for start in range(0, n - T + 1, stride):
        end = start + T - 1
        label = int(labels[end]) if labels is not None else None
        out.append(SequenceWindow(x[start : end + 1].copy(), label, int(row_index[end])))
    return out


def stack_windows(windows: Sequence[SequenceWindow]) -> np.ndarray:
    return np.stack([w.X for w in windows]) if windows else np.zeros((0, 0, 0))


def window_labels(windows: Sequence[SequenceWindow]) -> np.ndarray:
    return np.array([w.label for w in windows], dtype=np.int64)


@dataclass
class DatasetSplits:
    train: list[SequenceWindow]
    val: list[SequenceWindow]
    test: list[SequenceWindow]
    seed: int
    ratios: tuple[float, float, float] = field(default=DEFAULT_RATIOS)


def _check_ratios(ratios) -> tuple[float, float, float]:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    return ratios


def stratified_split_indices(labels: Sequence[int], ratios=DEFAULT_RATIOS, seed: int = 0):
    """Index-level stratified split; see :func:`stratified_split`."""
    ratios = _check_ratios(ratios)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EmptyInput("cannot split zero windows")
    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[], [], []]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        sizes = largest_remainder(idx.size, ratios)
        start = 0
        for part, size in zip(parts, sizes):
            part.extend(idx[start : start + size].tolist())
            start += size
    return tuple(sorted(p) for p in parts)


def stratified_split(
    windows: Sequence[SequenceWindow], ratios=DEFAULT_RATIOS, seed: int = 0
) -> DatasetSplits:
    """Per-class largest-remainder split with a seeded shuffle inside each class.

    Members keep their original relative order within each split.
    """
    tr, va, te = stratified_split_indices(window_labels(windows), ratios, seed)
    return DatasetSplits(
        [windows[i] for i in tr], [windows[i] for i in va], [windows[i] for i in te], seed, _check_ratios(ratios)
    )


def block_split_indices(n: int, ratios=DEFAULT_RATIOS):
    """Contiguous train/val/test blocks in stream order."""
    ratios = _check_ratios(ratios)
    if n == 0:
        raise EmptyInput("cannot split zero windows")
    sizes = largest_remainder(n, ratios)
    a, b = sizes[0], sizes[0] + sizes[1]
    return list(range(a)), list(range(a, b)), list(range(b, n))


def block_split(windows: Sequence[SequenceWindow], ratios=DEFAULT_RATIOS, gap: int = 0) -> DatasetSplits:
    """Contiguous split that drops ``gap`` windows after each boundary.

    With ``gap = ceil((T - 1) / stride)`` no raw row appears in two splits.
    """
    tr, va, te = block_split_indices(len(windows), ratios)
    va, te = va[gap:], te[gap:]
    return DatasetSplits(
        [windows[i] for i in tr], [windows[i] for i in va], [windows[i] for i in te], 0, _check_ratios(ratios)
    )
