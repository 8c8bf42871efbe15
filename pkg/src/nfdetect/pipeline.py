"""End-to-end wiring: parsed flows -> scaled windows -> splits -> model."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, derive_seeds
from .flow_ingest import RawDataset
from .model import Checkpoint
from .preprocess import (
    DatasetSplits,
    FeatureEncoder,
    SequenceWindow,
    block_split_indices,
    build_windows,
    fit_encoder,
    stratified_split_indices,
    transform_features,
    window_labels,
)
from .train_eval import EpochLog, MetricsReport, evaluate, fit


@dataclass
class PreparedData:
    splits: DatasetSplits
    encoder: FeatureEncoder


def _scaled(windows, idx, enc: FeatureEncoder) -> list[SequenceWindow]:
    if not idx:
        return []
    X = transform_features(np.stack([windows[i].X for i in idx]), enc)
    return [SequenceWindow(X[j], windows[i].label, windows[i].origin_index) for j, i in enumerate(idx)]


def prepare(ds: RawDataset, cfg: RunConfig) -> PreparedData:
    """Window the raw stream, split, then fit the encoder on training rows only.

    Splitting only needs window labels, so it happens before scaling and the
    encoder never sees a value that occurs solely in validation or test rows.
    """
    T, stride = cfg.window_length, cfg.stride
    raw = ds.feature_matrix()
    labels = ds.labels()
    windows = build_windows(raw, labels, T, stride)  # origin_index = stream position here
    split_seed, _, _ = derive_seeds(cfg.seed)
    if cfg.split_mode == "block":
        tr, va, te = block_split_indices(len(windows), cfg.split_ratios)
        gap = math.ceil((T - 1) / stride)
        va, te = va[gap:], te[gap:]
    else:
        tr, va, te = stratified_split_indices(window_labels(windows), cfg.split_ratios, split_seed)

    rows = np.zeros(len(raw), dtype=bool)
    for i in tr:
        end = windows[i].origin_index
        rows[end - T + 1 : end + 1] = True
    enc = fit_encoder(raw[rows], ds.schema, cfg.log1p_columns)

    # re-key windows by source row ordinal for reporting
    row_index = [r.row_index for r in ds.records]
    windows = [SequenceWindow(w.X, w.label, row_index[w.origin_index]) for w in windows]
    splits = DatasetSplits(
        _scaled(windows, tr, enc), _scaled(windows, va, enc), _scaled(windows, te, enc), split_seed, cfg.split_ratios
    )
    return PreparedData(splits, enc)


def windows_for_scoring(ds: RawDataset, enc: FeatureEncoder, T: int, stride: int = 1) -> list[SequenceWindow]:
    """Scale a whole dataset with a fitted encoder and window it in file order."""
    X = transform_features(ds.feature_matrix(), enc)
    labels = ds.labels() if ds.has_labels else None
    return build_windows(X, labels, T, stride, row_index=[r.row_index for r in ds.records])


def train_from_dataset(ds: RawDataset, cfg: RunConfig) -> tuple[Checkpoint, list[EpochLog], MetricsReport]:
    prepared = prepare(ds, cfg)
    ckpt, logs = fit(prepared.splits, cfg.model, cfg.train, prepared.encoder, cfg.schema_dict())
    report = evaluate(ckpt, prepared.splits.test)
    return ckpt, logs, report
