"""Run configuration: an INI-style file plus ``--key value`` overrides.

Every key lives in exactly one section, and key names are unique across
sections, so a flag only needs the bare key.  Example::

    [data]
    path = flows.csv          ; relative to this file

    [preprocess]
    window_length = 10
    split_ratios = 0.70, 0.15, 0.15

    [train]
    epochs = 20
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from .errors import ConfigError, NFDetectError
from .flow_ingest import (
    DEFAULT_DROP_COLUMNS,
    DEFAULT_FEATURE_COLUMNS,
    DEFAULT_LOG1P_COLUMNS,
    FlowSchema,
)
from .model import ModelConfig
from .train_eval import TrainConfig


def _bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _names(raw: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in raw.split(",") if s.strip())


def _ratios(raw: str) -> tuple[float, ...]:
    return tuple(float(s) for s in raw.split(","))


def _opt_str(raw: str) -> Optional[str]:
    raw = raw.strip()
    return None if raw.lower() in ("", "none") else raw


def _join(v) -> str:
    return ", ".join(str(x) for x in v)


# key -> (section, parser, default, help)
KEYS: dict[str, tuple[str, Callable[[str], Any], Any, str]] = {
    "path": ("data", str, None, "input flow CSV"),
    "strict": ("data", _bool, True, "abort on the first malformed row"),
    "feature_columns": ("schema", _names, DEFAULT_FEATURE_COLUMNS, "comma-separated feature columns"),
    "label_column": ("schema", str, "Label", "binary label column"),
    "attack_column": ("schema", _opt_str, "Attack", "attack category column (or 'none')"),
    "drop_columns": ("schema", _names, DEFAULT_DROP_COLUMNS, "columns excluded from features"),
    "window_length": ("preprocess", int, 10, "time steps per window (T)"),
    "stride": ("preprocess", int, 1, "window stride"),
    "split_ratios": ("preprocess", _ratios, (0.70, 0.15, 0.15), "train,val,test ratios"),
    "log1p_columns": ("preprocess", _names, DEFAULT_LOG1P_COLUMNS, "columns log1p-transformed before scaling"),
    "split_mode": ("preprocess", str, "stratified", "stratified | block"),
    "conv1_filters": ("model", int, 64, "first conv layer channels"),
    "conv2_filters": ("model", int, 128, "second conv layer channels"),
    "kernel_size": ("model", int, 3, "conv kernel size"),
    "dropout_rate": ("model", float, 0.3, "dropout before the BiLSTM"),
    "lstm_hidden": ("model", int, 64, "hidden units per LSTM direction"),
    "epochs": ("train", int, 20, "training epochs"),
    "batch_size": ("train", int, 256, "mini-batch size"),
    "learning_rate": ("train", float, 1e-3, "Adam learning rate"),
    "beta1": ("train", float, 0.9, "Adam beta1"),
    "beta2": ("train", float, 0.999, "Adam beta2"),
    "epsilon": ("train", float, 1e-8, "Adam epsilon"),
    "class_weighting": ("train", _bool, True, "inverse-frequency class weights"),
    "threshold_grid_step": ("train", float, 0.01, "threshold search grid step"),
    "seed": ("run", int, 0, "master random seed"),
    "out": ("run", str, None, "output directory"),
}


@dataclass(frozen=True)
class RunConfig:
    data_path: Optional[Path]
    strict: bool
    schema: FlowSchema
    window_length: int
    stride: int
    split_ratios: tuple[float, float, float]
    log1p_columns: tuple[str, ...]
    split_mode: str
    model: ModelConfig
    train: TrainConfig
    seed: int
    out: Optional[Path]

    def schema_dict(self) -> dict:
        s = self.schema
        return {
            "feature_columns": list(s.feature_columns),
            "label_column": s.label_column,
            "attack_column": s.attack_column,
            "drop_columns": list(s.drop_columns),
            "window_length": self.window_length,
            "stride": self.stride,
        }


def derive_seeds(seed: int) -> tuple[int, int, int]:
    """Independent (split, init, train) seeds from the single master seed."""
    a, b, c = np.random.SeedSequence(seed).generate_state(3)
    return int(a), int(b), int(c)


def read_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        with path.open(encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"bad config {path}: {exc}") from exc
    raw: dict[str, str] = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            if key not in KEYS:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            if KEYS[key][0] != section:
                raise ConfigError(f"{path}: key {key!r} belongs in [{KEYS[key][0]}], found in [{section}]")
            raw[key] = value
    if "path" in raw and raw["path"]:
        p = Path(raw["path"])
        if not p.is_absolute():
            raw["path"] = str(path.parent / p)
    return raw


def resolve(raw: dict[str, str], overrides: dict[str, Any] | None = None) -> RunConfig:
    """Typed, validated run config.  ``overrides`` values win over ``raw``."""
    values: dict[str, Any] = {}
    for key, (_, parse, default, _) in KEYS.items():
        values[key] = default
        if key in raw:
            try:
                values[key] = parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        if value is None:
            continue
        if isinstance(value, str):
            try:
                value = KEYS[key][1](value)
            except ValueError as exc:
                raise ConfigError(f"bad value for --{key}: {exc}") from exc
        values[key] = value

    if values["split_mode"] not in ("stratified", "block"):
        raise ConfigError(f"split_mode must be 'stratified' or 'block', got {values['split_mode']!r}")
    ratios = tuple(values["split_ratios"])
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split_ratios must be three positive numbers summing to 1, got {ratios}")
    if values["stride"] < 1:
        raise ConfigError("stride must be >= 1")
    try:
        schema = FlowSchema(
            values["feature_columns"], values["label_column"], values["attack_column"], values["drop_columns"]
        )
        _, init_seed, train_seed = derive_seeds(values["seed"])
        model = ModelConfig(
            T=values["window_length"],
            n=schema.n_features,
            conv1_filters=values["conv1_filters"],
            conv2_filters=values["conv2_filters"],
            kernel_size=values["kernel_size"],
            dropout_rate=values["dropout_rate"],
            lstm_hidden=values["lstm_hidden"],
            seed=init_seed,
        )
        train = TrainConfig(
            epochs=values["epochs"],
            batch_size=values["batch_size"],
            learning_rate=values["learning_rate"],
            beta1=values["beta1"],
            beta2=values["beta2"],
            epsilon=values["epsilon"],
            class_weighting=values["class_weighting"],
            threshold_grid_step=values["threshold_grid_step"],
            seed=train_seed,
        )
    except NFDetectError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(
        data_path=Path(values["path"]) if values["path"] else None,
        strict=values["strict"],
        schema=schema,
        window_length=values["window_length"],
        stride=values["stride"],
        split_ratios=ratios,
        log1p_columns=tuple(values["log1p_columns"]),
        split_mode=values["split_mode"],
        model=model,
        train=train,
        seed=values["seed"],
        out=Path(values["out"]) if values["out"] else None,
    )


def render_default_config() -> str:
    """The default configuration as a commented config file."""
    lines = ["; nfdetect run configuration", ""]
    section = None
    for key, (sec, _, default, help_) in KEYS.items():
        if sec != section:
            if section is not None:
                lines.append("")
            lines.append(f"[{sec}]")
            section = sec
        if default is None:
            value = ""
        elif isinstance(default, tuple):
            value = _join(default)
        elif isinstance(default, bool):
            value = "true" if default else "false"
        else:
            value = str(default)
        lines.append(f"; {help_}")
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
