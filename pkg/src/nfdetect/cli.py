"""Command-line entry point: ``nfdetect train | evaluate | predict``.

Exit codes: 0 success, 1 configuration or checkpoint error, 2 data error,
3 training failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path
from typing import Optional, Sequence

from .config import KEYS, RunConfig, read_config_file, render_default_config, resolve
from .errors import (
    ArityMismatch,
    CheckpointError,
    ConfigError,
    DataError,
    NFDetectError,
    TrainingError,
)
from .flow_ingest import FlowSchema, parse_netflow_csv, summarize_labels
from .model import Checkpoint, load_checkpoint, predict_proba
from .pipeline import train_from_dataset, windows_for_scoring
from .preprocess import window_labels
from .train_eval import compute_metrics, epoch_log_csv, metrics_json

log = logging.getLogger("nfdetect")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAIN = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    """Argument errors are configuration errors (exit 1), not argparse's default 2."""

    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_CONFIG, f"{self.prog}: {message}")


def write_artifacts(directory: Path, files: dict[str, str]) -> None:
    """Write every file to a temp name first, then rename them all into place.

    Nothing lands under its final name unless every temp write succeeded.
    """
    directory.mkdir(parents=True, exist_ok=True)
    temps: list[tuple[str, Path]] = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=directory, prefix=f".{name}.", suffix=".tmp")
            temps.append((name, Path(tmp)))
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        for name, tmp in temps:
            os.replace(tmp, directory / name)
    finally:
        for _, tmp in temps:
            if tmp.exists():
                tmp.unlink()


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="run configuration file")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _add_key_flags(p: argparse.ArgumentParser, keys: Sequence[str]) -> None:
    for key in keys:
        section, _, default, help_ = KEYS[key]
        flags = [f"--{key}"]
        if "_" in key:
            flags.append(f"--{key.replace('_', '-')}")
        p.add_argument(*flags, dest=f"key_{key}", metavar="VALUE", default=None,
                       help=f"{help_} [{section}] (default: {default})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nfdetect", description="CNN-BiLSTM anomaly detection for NetFlow traffic.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="preprocess, train, tune the threshold and evaluate on the test split")
    _add_common(p)
    _add_key_flags(p, list(KEYS))

    for name, help_ in (("evaluate", "score labeled flows and report metrics"),
                        ("predict", "score flows and write per-window predictions")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("checkpoint", help="checkpoint JSON written by 'train'")
        p.add_argument("data", help="flow CSV to score")
        _add_common(p)
        _add_key_flags(p, ["seed", "out", "stride", "strict", "feature_columns", "label_column",
                           "attack_column", "drop_columns"])

    p = sub.add_parser("default-config", help="print the default configuration file")
    return parser


def _overrides(args) -> dict[str, str]:
    return {k[4:]: v for k, v in vars(args).items() if k.startswith("key_") and v is not None}


def _load_config(args) -> RunConfig:
    raw = read_config_file(args.config) if args.config else {}
    return resolve(raw, _overrides(args))


def _parse_data(path: Optional[Path], schema: FlowSchema, strict: bool, require_label: bool = True):
    if path is None:
        raise CliError(EXIT_CONFIG, "no input data: set [data] path or pass --path")
    if not path.is_file():
        raise CliError(EXIT_DATA, f"data file not found: {path}")
    try:
        return parse_netflow_csv(path, schema, strict=strict, require_label=require_label)
    except DataError as exc:
        raise CliError(EXIT_DATA, f"{path}: {exc}") from exc
    except (OSError, UnicodeDecodeError) as exc:
        raise CliError(EXIT_DATA, f"cannot read {path}: {exc}") from exc


def _run_dir(cfg: RunConfig) -> Path:
    if cfg.out is not None:
        return cfg.out
    return Path("runs") / f"{time.strftime('%Y%m%d-%H%M%S')}-seed{cfg.seed}"


def cmd_train(args) -> int:
    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    ds = _parse_data(cfg.data_path, cfg.schema, cfg.strict)
    summary = summarize_labels(ds)
    log.info("loaded %d flows from %s (%d rejected): %s", len(ds), ds.source_path, ds.rejected, summary.to_json())
    try:
        ckpt, logs, report = train_from_dataset(ds, cfg)
    except TrainingError as exc:
        raise CliError(EXIT_TRAIN, f"training failed: {exc}") from exc
    except DataError as exc:
        raise CliError(EXIT_DATA, str(exc)) from exc

    out = _run_dir(cfg)
    write_artifacts(out, {
        "checkpoint.json": json.dumps(ckpt.to_dict()),
        "loss_curve.csv": epoch_log_csv(logs),
        "metrics.json": metrics_json(report, threshold=ckpt.threshold),
    })
    print(json.dumps({"out": str(out), "data": summary.to_dict(), **report.to_dict(),
                      "threshold": ckpt.threshold}))
    return EXIT_OK


def _scoring_setup(args, require_label: bool):
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        raise CliError(EXIT_CONFIG, f"{type(exc).__name__}: {exc}") from exc
    embedded = ckpt.schema or {}
    raw = read_config_file(args.config) if args.config else {}
    for key in ("feature_columns", "drop_columns"):
        if key not in raw and key in embedded:
            raw[key] = ", ".join(embedded[key])
    for key in ("label_column", "stride"):
        if key not in raw and key in embedded:
            raw[key] = str(embedded[key])
    if "attack_column" not in raw and "attack_column" in embedded:
        raw["attack_column"] = embedded["attack_column"] or "none"
    if "feature_columns" not in raw:
        raw["feature_columns"] = ", ".join(ckpt.encoder.feature_names)
    raw["window_length"] = str(ckpt.model.config.T)
    try:
        cfg = resolve(raw, _overrides(args))
    except ConfigError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    if cfg.schema.n_features != ckpt.encoder.n_features:
        raise CliError(EXIT_DATA, str(ArityMismatch(ckpt.encoder.n_features, cfg.schema.n_features)))
    ds = _parse_data(Path(args.data), cfg.schema, cfg.strict, require_label)
    try:
        windows = windows_for_scoring(ds, ckpt.encoder, ckpt.model.config.T, cfg.stride)
    except DataError as exc:
        raise CliError(EXIT_DATA, f"{type(exc).__name__}: {exc}") from exc
    return ckpt, cfg, windows


def cmd_evaluate(args) -> int:
    ckpt, cfg, windows = _scoring_setup(args, require_label=True)
    scores = predict_proba(ckpt.model, windows)
    report = compute_metrics(scores, window_labels(windows), ckpt.threshold)
    text = metrics_json(report, threshold=ckpt.threshold)
    if cfg.out is not None:
        write_artifacts(cfg.out, {"metrics.json": text})
    sys.stdout.write(text)
    return EXIT_OK


def predictions_csv(ckpt: Checkpoint, windows) -> str:
    scores = predict_proba(ckpt.model, windows)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["origin_index", "score", "predicted_label"])
    for w, s in zip(windows, scores):
        writer.writerow([w.origin_index, repr(float(s)), int(s >= ckpt.threshold)])
    return buf.getvalue()


def cmd_predict(args) -> int:
    ckpt, cfg, windows = _scoring_setup(args, require_label=False)
    text = predictions_csv(ckpt, windows)
    if cfg.out is not None:
        write_artifacts(cfg.out, {"predictions.csv": text})
        print(json.dumps({"out": str(cfg.out / "predictions.csv"), "windows": len(windows)}))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        if args.command == "default-config":
            sys.stdout.write(render_default_config())
            return EXIT_OK
        handler = {"train": cmd_train, "evaluate": cmd_evaluate, "predict": cmd_predict}[args.command]
        return handler(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NFDetectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAIN


if __name__ == "__main__":
    sys.exit(main())
