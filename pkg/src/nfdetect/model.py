"""CNN-BiLSTM detector: conv/pool stack, dropout, BiLSTM, logistic head."""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import nn
from .errors import (
    CheckpointIOError,
    CorruptCheckpoint,
    InvalidConfig,
    ShapeMismatch,
    VersionMismatch,
)
from .preprocess import FeatureEncoder, SequenceWindow

FORMAT_VERSION = 1

# Serialization order of parameter blocks in a checkpoint.
PARAM_ORDER = (
    "conv1.W",
    "conv1.b",
    "conv2.W",
    "conv2.b",
    "bilstm.fwd.Wx",
    "bilstm.fwd.Wh",
    "bilstm.fwd.b",
    "bilstm.bwd.Wx",
    "bilstm.bwd.Wh",
    "bilstm.bwd.b",
    "head.W",
    "head.b",
)


@dataclass(frozen=True)
class ModelConfig:
    T: int = 10
    n: int = 10
    conv1_filters: int = 64
    conv2_filters: int = 128
    kernel_size: int = 3
    pool_width: int = 2
    dropout_rate: float = 0.3
    lstm_hidden: int = 64
    seed: int = 0

    def __post_init__(self):
        for name in ("T", "n", "conv1_filters", "conv2_filters", "kernel_size", "pool_width", "lstm_hidden"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise InvalidConfig(f"{name} must be a positive integer, got {v!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidConfig(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.seq_len_after_pooling < 1:
            raise InvalidConfig(
                f"window length T={self.T} is too short for two pooling stages of width {self.pool_width}"
            )

    @property
    def seq_len_after_pooling(self) -> int:
        return (self.T // self.pool_width) // self.pool_width

    def layer_lengths(self) -> tuple[int, int, int, int, int]:
        """Sequence length at input, conv1, pool1, conv2, pool2 (same padding)."""
        p1 = self.T // self.pool_width
        return self.T, self.T, p1, p1, p1 // self.pool_width

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class CnnBiLstmModel:
    def __init__(self, config: ModelConfig, conv1, conv2, bilstm, head):
        self.config = config
        self.conv1: nn.Conv1DParams = conv1
        self.conv2: nn.Conv1DParams = conv2
        self.bilstm: nn.BiLSTMParams = bilstm
        self.head: nn.DenseParams = head

    def parameters(self) -> dict[str, np.ndarray]:
        """Live parameter arrays keyed by name, in checkpoint order."""
        return {
            "conv1.W": self.conv1.W,
            "conv1.b": self.conv1.b,
            "conv2.W": self.conv2.W,
            "conv2.b": self.conv2.b,
            "bilstm.fwd.Wx": self.bilstm.fwd.Wx,
            "bilstm.fwd.Wh": self.bilstm.fwd.Wh,
            "bilstm.fwd.b": self.bilstm.fwd.b,
            "bilstm.bwd.Wx": self.bilstm.bwd.Wx,
            "bilstm.bwd.Wh": self.bilstm.bwd.Wh,
            "bilstm.bwd.b": self.bilstm.bwd.b,
            "head.W": self.head.W,
            "head.b": self.head.b,
        }

    def copy(self) -> "CnnBiLstmModel":
        return build_model(self.config, {k: v.copy() for k, v in self.parameters().items()})

    # -- forward / backward ---------------------------------------------

    def forward(self, X: np.ndarray, train: bool = False, rng: Optional[np.random.Generator] = None):
        """Scores for a batch ``[B, T, n]``.  Returns ``(p, cache)``."""
        X = np.asarray(X, dtype=np.float64)
        cfg = self.config
        if X.ndim != 3 or X.shape[1:] != (cfg.T, cfg.n):
            raise ShapeMismatch(f"expected windows of shape (B, {cfg.T}, {cfg.n}), got {X.shape}")
        a1, c1 = nn.conv1d_forward(X, self.conv1)
        r1 = nn.relu(a1)
        p1, cp1 = nn.maxpool1d_forward(r1, cfg.pool_width)
        a2, c2 = nn.conv1d_forward(p1, self.conv2)
        r2 = nn.relu(a2)
        p2, cp2 = nn.maxpool1d_forward(r2, cfg.pool_width)
        d, mask = nn.dropout_forward(p2, cfg.dropout_rate, train, rng)
        hc, cb = nn.bilstm_forward(d, self.bilstm)
        z, ch = nn.dense_forward(hc, self.head)
        z = z[:, 0]
        p = nn.logistic(z)
        cache = (a1, c1, cp1, a2, c2, cp2, mask, cb, ch, p)
        return p, cache

    def backward(self, dlogit: np.ndarray, cache) -> dict[str, np.ndarray]:
        """Gradients of a loss w.r.t. every parameter, given dLoss/dlogit.

        Taking the logit gradient (rather than dLoss/dp) keeps the signal
        alive for saturated scores, where p * (1 - p) underflows.
        """
        a1, c1, cp1, a2, c2, cp2, mask, cb, ch, p = cache
        dz = np.asarray(dlogit, dtype=np.float64)[:, None]
        dhc, dWh, dbh = nn.dense_backward(dz, ch)
        dd, g_f, g_b = nn.bilstm_backward(dhc, cb)
        dp2 = nn.dropout_backward(dd, mask)
        dr2 = nn.maxpool1d_backward(dp2, cp2)
        dp1, dW2, db2 = nn.conv1d_backward(dr2 * nn.relu_grad(a2), c2)
        dr1 = nn.maxpool1d_backward(dp1, cp1)
        _, dW1, db1 = nn.conv1d_backward(dr1 * nn.relu_grad(a1), c1)
        return {
            "conv1.W": dW1,
            "conv1.b": db1,
            "conv2.W": dW2,
            "conv2.b": db2,
            "bilstm.fwd.Wx": g_f["Wx"],
            "bilstm.fwd.Wh": g_f["Wh"],
            "bilstm.fwd.b": g_f["b"],
            "bilstm.bwd.Wx": g_b["Wx"],
            "bilstm.bwd.Wh": g_b["Wh"],
            "bilstm.bwd.b": g_b["b"],
            "head.W": dWh,
            "head.b": dbh,
        }


def build_model(config: ModelConfig, params: dict[str, np.ndarray]) -> CnnBiLstmModel:
    conv1 = nn.Conv1DParams(params["conv1.W"], params["conv1.b"])
    conv2 = nn.Conv1DParams(params["conv2.W"], params["conv2.b"])
    fwd = nn.LSTMCellParams(params["bilstm.fwd.Wx"], params["bilstm.fwd.Wh"], params["bilstm.fwd.b"])
    bwd = nn.LSTMCellParams(params["bilstm.bwd.Wx"], params["bilstm.bwd.Wh"], params["bilstm.bwd.b"])
    head = nn.DenseParams(params["head.W"], params["head.b"])
    model = CnnBiLstmModel(config, conv1, conv2, nn.BiLSTMParams(fwd, bwd), head)
    expected = expected_shapes(config)
    for name, arr in model.parameters().items():
        if arr.shape != expected[name]:
            raise ShapeMismatch(f"{name}: shape {arr.shape}, config implies {expected[name]}")
    return model


def expected_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    k, H = cfg.kernel_size, cfg.lstm_hidden
    c1, c2 = cfg.conv1_filters, cfg.conv2_filters
    return {
        "conv1.W": (k, cfg.n, c1),
        "conv1.b": (c1,),
        "conv2.W": (k, c1, c2),
        "conv2.b": (c2,),
        "bilstm.fwd.Wx": (c2, 4 * H),
        "bilstm.fwd.Wh": (H, 4 * H),
        "bilstm.fwd.b": (4 * H,),
        "bilstm.bwd.Wx": (c2, 4 * H),
        "bilstm.bwd.Wh": (H, 4 * H),
        "bilstm.bwd.b": (4 * H,),
        "head.W": (2 * H, 1),
        "head.b": (1,),
    }


def init_model(config: ModelConfig) -> CnnBiLstmModel:
    """Glorot-uniform weights, zero biases, forget-gate bias 1.0."""
    rng = np.random.default_rng(config.seed)
    k = config.kernel_size
    conv1 = nn.init_conv1d(rng, k, config.n, config.conv1_filters)
    conv2 = nn.init_conv1d(rng, k, config.conv1_filters, config.conv2_filters)
    fwd = nn.init_lstm_cell(rng, config.conv2_filters, config.lstm_hidden)
    bwd = nn.init_lstm_cell(rng, config.conv2_filters, config.lstm_hidden)
    head = nn.init_dense(rng, 2 * config.lstm_hidden, 1)
    return CnnBiLstmModel(config, conv1, conv2, nn.BiLSTMParams(fwd, bwd), head)


def _as_batch(windows) -> np.ndarray:
    if isinstance(windows, np.ndarray):
        return windows
    windows = list(windows)
    if windows and isinstance(windows[0], SequenceWindow):
        return np.stack([w.X for w in windows])
    return np.asarray(windows, dtype=np.float64)


def predict_proba(
    model: CnnBiLstmModel, windows: Sequence[SequenceWindow] | np.ndarray, batch_size: int = 1024
) -> np.ndarray:
    """Eval-mode scores in (0, 1), one per window, in input order."""
    X = _as_batch(windows)
    if len(X) == 0:
        return np.zeros(0)
    out = [model.forward(X[i : i + batch_size], train=False)[0] for i in range(0, len(X), batch_size)]
    return np.concatenate(out)


# --------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    model: CnnBiLstmModel
    encoder: FeatureEncoder
    threshold: float
    schema: Optional[dict] = None

    def to_dict(self) -> dict:
        params = self.model.parameters()
        doc = {
            "format_version": FORMAT_VERSION,
            "config": self.model.config.to_dict(),
            "encoder": self.encoder.to_dict(),
            "threshold": float(self.threshold),
            "params": [
                {"name": name, "shape": list(params[name].shape), "data": params[name].ravel().tolist()}
                for name in PARAM_ORDER
            ],
        }
        if self.schema is not None:
            doc["schema"] = self.schema
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Checkpoint":
        if not isinstance(doc, dict) or "format_version" not in doc:
            raise CorruptCheckpoint("checkpoint has no format_version")
        if doc["format_version"] != FORMAT_VERSION:
            raise VersionMismatch(
                f"unsupported checkpoint format_version {doc['format_version']!r} (expected {FORMAT_VERSION})"
            )
        try:
            config = ModelConfig.from_dict(doc["config"])
            encoder = FeatureEncoder.from_dict(doc["encoder"])
            threshold = float(doc["threshold"])
            blocks = {b["name"]: b for b in doc["params"]}
            shapes = expected_shapes(config)
            params = {}
            for name in PARAM_ORDER:
                block = blocks[name]
                shape = tuple(block["shape"])
                data = np.array(block["data"], dtype=np.float64)
                if shape != shapes[name] or data.size != int(np.prod(shape)):
                    raise CorruptCheckpoint(
                        f"block {name}: shape {shape} with {data.size} values, config implies {shapes[name]}"
                    )
                params[name] = data.reshape(shape)
            model = build_model(config, params)
        except CorruptCheckpoint:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptCheckpoint(f"malformed checkpoint: {exc}") from exc
        if encoder.n_features != config.n:
            raise CorruptCheckpoint(f"encoder has {encoder.n_features} features, model expects {config.n}")
        if not 0.0 <= threshold <= 1.0:
            raise CorruptCheckpoint(f"threshold {threshold} outside [0, 1]")
        return cls(model, encoder, threshold, doc.get("schema"))


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    try:
        atomic_write_text(path, json.dumps(ckpt.to_dict()))
    except OSError as exc:
        raise CheckpointIOError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointIOError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"checkpoint {path} is not valid JSON: {exc}") from exc
    return Checkpoint.from_dict(doc)
