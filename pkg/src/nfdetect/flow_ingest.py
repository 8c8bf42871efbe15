"""NetFlow CSV ingestion.

Rows are parsed into :class:`FlowRecord` objects against a configurable
:class:`FlowSchema`.  The default schema follows the public NF-BoT-IoT v1
NetFlow layout.
"""
from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    EmptyDataset,
    EmptyFile,
    InvalidLabel,
    MalformedRow,
    MissingColumn,
)

NF_BOT_IOT_COLUMNS = (
    "IPV4_SRC_ADDR",
    "L4_SRC_PORT",
    "IPV4_DST_ADDR",
    "L4_DST_PORT",
    "PROTOCOL",
    "L7_PROTO",
    "IN_BYTES",
    "OUT_BYTES",
    "IN_PKTS",
    "OUT_PKTS",
    "TCP_FLAGS",
    "FLOW_DURATION_MILLISECONDS",
)
DEFAULT_DROP_COLUMNS = ("IPV4_SRC_ADDR", "IPV4_DST_ADDR")
DEFAULT_FEATURE_COLUMNS = tuple(c for c in NF_BOT_IOT_COLUMNS if c not in DEFAULT_DROP_COLUMNS)
DEFAULT_LOG1P_COLUMNS = ("IN_BYTES", "OUT_BYTES", "IN_PKTS", "OUT_PKTS")


@dataclass(frozen=True)
class FlowSchema:
    feature_columns: tuple[str, ...] = DEFAULT_FEATURE_COLUMNS
    label_column: str = "Label"
    attack_column: Optional[str] = "Attack"
    drop_columns: tuple[str, ...] = DEFAULT_DROP_COLUMNS

    def __post_init__(self):
        object.__setattr__(self, "feature_columns", tuple(self.feature_columns))
        object.__setattr__(self, "drop_columns", tuple(self.drop_columns))
        if not self.feature_columns:
            raise ConfigError("schema needs at least one feature column")
        if len(set(self.feature_columns)) != len(self.feature_columns):
            raise ConfigError("duplicate feature column names in schema")
        reserved = {self.label_column, self.attack_column} - {None}
        clash = reserved.intersection(self.feature_columns)
        if clash:
            raise ConfigError(f"feature columns overlap label/attack columns: {sorted(clash)}")
        if self.attack_column is not None and self.attack_column == self.label_column:
            raise ConfigError("label and attack columns must differ")
        dropped = set(self.drop_columns).intersection(self.feature_columns)
        if dropped:
            raise ConfigError(f"columns both dropped and used as features: {sorted(dropped)}")

    @property
    def n_features(self) -> int:
        return len(self.feature_columns)


@dataclass(frozen=True)
class FlowRecord:
    features: tuple[float, ...]
    label: Optional[int]
    attack: Optional[str]
    row_index: int


@dataclass(frozen=True)
class RawDataset:
    records: tuple[FlowRecord, ...]
    schema: FlowSchema
    source_path: str
    rejected: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def feature_matrix(self) -> np.ndarray:
        if not self.records:
            return np.zeros((0, self.schema.n_features))
        return np.array([r.features for r in self.records], dtype=np.float64)

    def labels(self) -> np.ndarray:
        """Labels as an int array; raises if any record is unlabeled."""
        if any(r.label is None for r in self.records):
            raise EmptyDataset(f"{self.source_path}: dataset has unlabeled records")
        return np.array([r.label for r in self.records], dtype=np.int64)

    @property
    def has_labels(self) -> bool:
        return bool(self.records) and all(r.label is not None for r in self.records)


@dataclass(frozen=True)
class LabelSummary:
    total: int
    benign: int
    malicious: int
    benign_frac: float
    malicious_frac: float

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "benign": self.benign,
            "malicious": self.malicious,
            "benign_frac": self.benign_frac,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _parse_label(raw: str, line: int) -> int:
    try:
        value = float(raw)
    except ValueError:
        raise InvalidLabel(line, raw) from None
    if value == 0.0:
        return 0
    if value == 1.0:
        return 1
    raise InvalidLabel(line, raw)


def parse_netflow_csv(
    path: str | Path,
    schema: FlowSchema = FlowSchema(),
    *,
    strict: bool = True,
    require_label: bool = True,
) -> RawDataset:
    """Parse a comma-delimited NetFlow CSV into a :class:`RawDataset`.

    In strict mode the first bad row raises.  In lenient mode bad rows are
    skipped and counted in ``RawDataset.rejected``.  With
    ``require_label=False`` a missing label column is tolerated and every
    record gets ``label=None`` (used for scoring unlabeled traffic).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        index = {name: i for i, name in enumerate(header)}

        for col in schema.feature_columns:
            if col not in index:
                raise MissingColumn(col)
        has_label = schema.label_column in index
        if require_label and not has_label:
            raise MissingColumn(schema.label_column)
        attack_idx = index.get(schema.attack_column) if schema.attack_column else None

        feat_idx = [index[c] for c in schema.feature_columns]
        label_idx = index[schema.label_column] if has_label else None
        width = len(header)

        records: list[FlowRecord] = []
        rejected = 0
        row_index = 0
        # header is line 1
        for line, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                if len(row) != width:
                    raise MalformedRow(line, "<row>", f"{len(row)} fields, expected {width}")
                feats = []
                for col, i in zip(schema.feature_columns, feat_idx):
                    raw = row[i]
                    try:
                        v = float(raw)
                    except ValueError:
                        raise MalformedRow(line, col, raw) from None
                    if not math.isfinite(v):
                        raise MalformedRow(line, col, raw)
                    feats.append(v)
                label = _parse_label(row[label_idx].strip(), line) if label_idx is not None else None
            except (MalformedRow, InvalidLabel):
                if strict:
                    raise
                rejected += 1
                row_index += 1
                continue
            attack = row[attack_idx] if attack_idx is not None else None
            records.append(FlowRecord(tuple(feats), label, attack, row_index))
            row_index += 1

    if not records and rejected == 0:
        raise EmptyFile(f"{path}: no data rows")
    return RawDataset(tuple(records), schema, str(path), rejected)


def summarize_labels(ds: RawDataset | Sequence[FlowRecord]) -> LabelSummary:
    records = ds.records if isinstance(ds, RawDataset) else ds
    if not records:
        raise EmptyDataset("cannot summarize an empty dataset")
    counts = Counter(r.label for r in records)
    if None in counts:
        raise EmptyDataset("cannot summarize unlabeled records")
    total = len(records)
    benign = counts.get(0, 0)
    malicious = counts.get(1, 0)
    return LabelSummary(total, benign, malicious, benign / total, malicious / total)


def largest_remainder(total: int, ratios: Sequence[float]) -> list[int]:
    """Apportion ``total`` units over ``ratios`` by the largest-remainder rule.

    Remainder ties go to the earlier position.
    """
    quotas = [total * r for r in ratios]
    floors = [math.floor(q + 1e-9) for q in quotas]
    left = total - sum(floors)
    rems = [round(q - f, 9) for q, f in zip(quotas, floors)]
    order = sorted(range(len(ratios)), key=lambda i: (-rems[i], i))
    for i in order[:left]:
        floors[i] += 1
    return floors


def stratified_subsample(ds: RawDataset, n: int, seed: int) -> RawDataset:
    """Draw ``n`` records preserving the class mix and the original row order."""
    if n >= len(ds):
        return ds
    labels = ds.labels()
    rng = np.random.default_rng(seed)
    classes = [0, 1]
    fracs = [float(np.mean(labels == c)) for c in classes]
    per_class = largest_remainder(n, fracs)
    keep: list[int] = []
    for c, k in zip(classes, per_class):
        idx = np.flatnonzero(labels == c)
        keep.extend(rng.choice(idx, size=k, replace=False).tolist())
    keep.sort()
    return RawDataset(tuple(ds.records[i] for i in keep), ds.schema, ds.source_path, ds.rejected)


def write_netflow_csv(path: str | Path, header: Iterable[str], rows: Iterable[Sequence]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(header))
        writer.writerows(rows)
