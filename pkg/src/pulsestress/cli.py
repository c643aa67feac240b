"""Command-line pipeline: validate-data, preprocess, loso, report.

Config precedence: built-in defaults < config file (key=value lines) <
PULSESTRESS_CACHE environment variable (cache_dir only) < command-line flags.
All outputs are written atomically (temp file + rename) and every command is
deterministic given its inputs and seed.
"""

from __future__ import annotations

import argparse
import csv
import glob
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import __version__
from .dsp import DEFAULT_BAND, DEFAULT_ORDER, design_bandpass, filter_zero_phase, segment_stream
from .errors import PipelineError, QualityTooLow, InsufficientBeats, SchemaError, ConfigError
from .features import FEATURE_NAMES, extract_features
from .ingest import load_subject
from .nn import save_model
from .report import (
    SCHEMA_VERSION,
    load_metrics_file,
    write_comparison_csv,
    write_comparison_svg,
)
from .train import ArrayDataset, TrainConfig, run_loso, zscore_segment

log = logging.getLogger(__name__)

ENV_CACHE_DIR = "PULSESTRESS_CACHE"

#: Published pooled LOSO numbers to print next to a fresh run, in percent.
REFERENCE_RESULTS = {
    ("3class", "hcnn"): (75.21, 64.15),
    ("3class", "cnn"): (68.52, 57.67),
}


@dataclass
class RunConfig:
    """Resolved options for one CLI invocation."""

    data_dir: str = "data"
    cache_dir: str = "cache"
    task: str = "3class"
    variant: str = "hcnn"
    seed: int = 0
    epochs: int = 200
    batch_size: int = 500
    patience: int = 70
    lr: float = 0.001
    workers: int = 1
    out: str = ""

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            max_epochs=self.epochs,
            patience=self.patience,
            lr=self.lr,
            seed=self.seed,
            task=self.task,
            variant=self.variant,
        )


def _parse_config_file(path: str) -> dict:
    values: dict[str, str] = {}
    valid = {f.name for f in fields(RunConfig)}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in valid:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = value.strip()
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, config file, environment, and flags, in that order."""
    merged = asdict(RunConfig())
    config_path = getattr(args, "config", None)
    if config_path:
        merged.update(_parse_config_file(config_path))
    env_cache = os.environ.get(ENV_CACHE_DIR)
    if env_cache:
        merged["cache_dir"] = env_cache
    for f in fields(RunConfig):
        flag_value = getattr(args, f.name, None)
        if flag_value is not None:
            merged[f.name] = flag_value
    defaults = RunConfig()
    typed = {
        f.name: _coerce(merged[f.name], getattr(defaults, f.name))
        for f in fields(RunConfig)
    }
    return RunConfig(**typed)


def _coerce(raw, default):
    if isinstance(raw, str) and not isinstance(default, str):
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    return raw


def _atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _atomic_write_json(path: str, doc: dict) -> None:
    _atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ----------------------------------------------------------------- validate


def cmd_validate_data(config: RunConfig) -> int:
    """Print one row per subject file; nonzero exit on any malformed file."""
    paths = sorted(glob.glob(os.path.join(config.data_dir, "*.csv")))
    if not paths:
        print(f"no subjects found in {config.data_dir}")
        return 1
    failures = 0
    for path in paths:
        try:
            record = load_subject(path)
        except PipelineError as exc:
            print(f"{os.path.basename(path)}: ERROR {exc}")
            failures += 1
            continue
        counts = np.bincount(record.labels, minlength=8)
        histogram = " ".join(f"{i}:{c}" for i, c in enumerate(counts) if c)
        duration = len(record) / record.sample_rate
        print(
            f"{record.subject_id}: {len(record)} samples, {duration:.1f}s, "
            f"labels {histogram}"
        )
    if failures:
        print(f"{failures} malformed file(s)")
    return 1 if failures else 0


# --------------------------------------------------------------- preprocess


def preprocess_settings(config: RunConfig) -> dict:
    """Every config field that changes what the preprocess stage computes."""
    return {
        "task": config.task,
        "f1_hz": DEFAULT_BAND[0],
        "f2_hz": DEFAULT_BAND[1],
        "filter_order": DEFAULT_ORDER,
        "window_s": 60,
        "stride_s": 5,
        "code_version": __version__,
    }


def cache_key(settings: dict, file_fingerprints: dict[str, str]) -> str:
    payload = json.dumps(
        {"settings": settings, "files": file_fingerprints}, sort_keys=True
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def _fingerprint(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _cache_paths(config: RunConfig) -> dict[str, str]:
    base = config.cache_dir
    return {
        "segments": os.path.join(base, f"segments_{config.task}.npz"),
        "features": os.path.join(base, f"features_{config.task}.csv"),
        "manifest": os.path.join(base, f"manifest_{config.task}.json"),
    }


def _preprocess_subject(args):
    path, task = args
    record = load_subject(path)
    coeffs = design_bandpass(record.sample_rate, *DEFAULT_BAND, DEFAULT_ORDER)
    filtered = filter_zero_phase(coeffs, record.bvp)
    segments = segment_stream(
        filtered, record.labels, fs=record.sample_rate, task=task,
        subject_id=record.subject_id,
    )
    kept_segments, kept_rows, dropped = [], [], 0
    for seg in segments:
        try:
            feats = extract_features(seg)
        except (QualityTooLow, InsufficientBeats):
            dropped += 1
            continue
        kept_segments.append(zscore_segment(seg.samples).astype(np.float32))
        kept_rows.append((seg.start_index, seg.label.value, feats))
    return record.subject_id, len(record), kept_segments, kept_rows, dropped


def cmd_preprocess(config: RunConfig, dump_coeffs: str | None = None) -> int:
    """Filter, segment, featurize, and standardize every subject into the cache.

    Skips all work when the cache manifest carries the same content key
    (settings, code version, and input file hashes all unchanged).
    """
    paths = sorted(glob.glob(os.path.join(config.data_dir, "*.csv")))
    if not paths:
        print(f"no subjects found in {config.data_dir}")
        return 1

    if dump_coeffs:
        coeffs = design_bandpass(64, *DEFAULT_BAND, DEFAULT_ORDER)
        lines = ["b0,b1,b2,a1,a2"]
        lines += [",".join(f"{v:.17g}" for v in sec) for sec in coeffs.sections]
        _atomic_write_text(dump_coeffs, "\n".join(lines) + "\n")
        print(f"wrote filter sections to {dump_coeffs}")

    settings = preprocess_settings(config)
    fingerprints = {os.path.basename(p): _fingerprint(p) for p in paths}
    key = cache_key(settings, fingerprints)
    cache = _cache_paths(config)

    if os.path.exists(cache["manifest"]):
        try:
            with open(cache["manifest"], "r", encoding="utf-8") as fh:
                manifest = json.load(fh)
        except (OSError, json.JSONDecodeError):
            manifest = {}
        if manifest.get("cache_key") == key and all(
            os.path.exists(p) for p in cache.values()
        ):
            print(f"cache hit ({key[:12]}...), nothing to do")
            return 0

    if config.workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_preprocess_subject, [(p, config.task) for p in paths]))
    else:
        results = [_preprocess_subject((p, config.task)) for p in paths]

    os.makedirs(config.cache_dir, exist_ok=True)
    all_segments, all_labels, all_starts, all_subjects = [], [], [], []
    feature_rows = []
    subject_stats = {}
    for subject_id, n_samples, kept_segments, kept_rows, dropped in results:
        for seg, (start, label, feats) in zip(kept_segments, kept_rows):
            all_segments.append(seg)
            all_labels.append(label)
            all_starts.append(start)
            all_subjects.append(subject_id)
            feature_rows.append((subject_id, start, label, feats))
        subject_stats[subject_id] = {
            "n_samples": n_samples,
            "n_segments": len(kept_segments),
            "n_dropped_quality": dropped,
        }
        print(
            f"{subject_id}: {len(kept_segments)} segments cached, "
            f"{dropped} dropped by the beat-quality gate"
        )

    seg_array = (
        np.stack(all_segments) if all_segments else np.zeros((0, 3840), np.float32)
    )
    tmp = cache["segments"] + ".tmp.npz"
    np.savez_compressed(
        tmp,
        segments=seg_array,
        labels=np.asarray(all_labels, dtype=np.int64),
        start_indices=np.asarray(all_starts, dtype=np.int64),
        subjects=np.asarray(all_subjects, dtype="U32"),
    )
    os.replace(tmp, cache["segments"])

    lines = ["subject_id,start_index,label," + ",".join(FEATURE_NAMES)]
    for subject_id, start, label, feats in feature_rows:
        lines.append(
            f"{subject_id},{start},{label}," + ",".join(f"{v:.10g}" for v in feats)
        )
    _atomic_write_text(cache["features"], "\n".join(lines) + "\n")

    _atomic_write_json(
        cache["manifest"],
        {
            "schema_version": SCHEMA_VERSION,
            "cache_key": key,
            "settings": settings,
            "subjects": subject_stats,
            "roster": sorted(subject_stats),
        },
    )
    total = len(all_segments)
    print(f"cached {total} segments from {len(results)} subjects ({key[:12]}...)")
    return 0


def load_cached_dataset(config: RunConfig) -> ArrayDataset:
    """Read the preprocess cache back into aligned arrays.

    Raises:
        ConfigError: cache files are missing (run `pulsestress preprocess`).
    """
    cache = _cache_paths(config)
    missing = [p for p in cache.values() if not os.path.exists(p)]
    if missing:
        raise ConfigError(
            f"cache incomplete under {config.cache_dir} (missing "
            f"{', '.join(os.path.basename(m) for m in missing)}); "
            f"run `pulsestress preprocess --data-dir ... --cache-dir ...` first"
        )
    with np.load(cache["segments"]) as bundle:
        segments = bundle["segments"]
        labels = bundle["labels"]
        subjects = bundle["subjects"]
    features = []
    with open(cache["features"], "r", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            features.append([float(row[name]) for name in FEATURE_NAMES])
    features = np.asarray(features, dtype=np.float64)
    if len(features) != len(segments):
        raise SchemaError(
            f"cache inconsistent: {len(segments)} segments vs {len(features)} "
            f"feature rows"
        )
    with open(cache["manifest"], "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    return ArrayDataset(
        segments=segments,
        features=features,
        labels=labels,
        subjects=subjects,
        roster=tuple(manifest.get("roster", ())),
    )


# --------------------------------------------------------------------- loso


def cmd_loso(config: RunConfig) -> int:
    """Run the LOSO evaluation and write metrics plus per-fold checkpoints."""
    dataset = load_cached_dataset(config)
    train_config = config.train_config()
    result = run_loso(dataset, train_config, workers=config.workers)

    out_path = config.out or f"metrics_{config.task}_{config.variant}.json"
    checkpoint_dir = os.path.splitext(out_path)[0] + "_checkpoints"
    os.makedirs(checkpoint_dir, exist_ok=True)
    for fold in result.folds:
        save_model(
            fold.model,
            os.path.join(checkpoint_dir, f"fold_{fold.plan.test_subject}.ckpt"),
        )

    doc = {
        "schema_version": SCHEMA_VERSION,
        "config": {
            "task": config.task,
            "variant": config.variant,
            "seed": config.seed,
            "batch_size": config.batch_size,
            "max_epochs": config.epochs,
            "patience": config.patience,
            "lr": config.lr,
            "validation_subject_count": train_config.validation_subject_count,
        },
        "folds": [
            {
                **fold.metrics.to_dict(),
                "validation_subjects": list(fold.plan.validation_subjects),
                "best_epoch": fold.history["best_epoch"],
                "n_epochs": len(fold.history["train_loss"]),
                "history": {
                    "train_loss": fold.history["train_loss"],
                    "val_recall": fold.history["val_recall"],
                },
            }
            for fold in result.folds
        ],
        "skipped": [{"subject": s, "reason": r} for s, r in result.skipped],
        "pooled": result.pooled.to_dict(),
        "fold_accuracy_mean": result.fold_accuracy_mean,
        "fold_accuracy_std": result.fold_accuracy_std,
        "fold_macro_f1_mean": result.fold_macro_f1_mean,
        "fold_macro_f1_std": result.fold_macro_f1_std,
    }
    _atomic_write_json(out_path, doc)

    for fold in result.folds:
        m = fold.metrics
        print(
            f"fold {m.subject}: n={m.n_examples} acc={m.accuracy:.4f} "
            f"macroF1={m.macro_f1:.4f} (best epoch {fold.history['best_epoch']})"
        )
    for subject, reason in result.skipped:
        print(f"fold {subject}: skipped ({reason})")
    pooled = result.pooled
    print(
        f"pooled [{config.variant}/{config.task}]: acc={pooled.accuracy * 100:.2f}% "
        f"macroF1={pooled.macro_f1 * 100:.2f}% over {pooled.n_examples} segments"
    )
    print(
        f"per-fold: acc {result.fold_accuracy_mean * 100:.2f}"
        f" +- {result.fold_accuracy_std * 100:.2f}, "
        f"macroF1 {result.fold_macro_f1_mean * 100:.2f}"
        f" +- {result.fold_macro_f1_std * 100:.2f}"
    )
    reference = REFERENCE_RESULTS.get((config.task, config.variant))
    if reference:
        ref_acc, ref_f1 = reference
        print(
            f"reference [{config.variant}/{config.task}]: acc {ref_acc:.2f}% "
            f"(delta {pooled.accuracy * 100 - ref_acc:+.2f}), "
            f"macroF1 {ref_f1:.2f}% (delta {pooled.macro_f1 * 100 - ref_f1:+.2f})"
        )
    print(f"wrote {out_path} and {len(result.folds)} checkpoints to {checkpoint_dir}")
    return 0


# ------------------------------------------------------------------- report


def cmd_report(metrics_paths: list[str], out_prefix: str) -> int:
    """Render a comparison CSV and grouped bar chart from metrics files."""
    docs = [load_metrics_file(p) for p in metrics_paths]
    csv_path = out_prefix + ".csv"
    svg_path = out_prefix + ".svg"
    write_comparison_csv(docs, csv_path)
    write_comparison_svg(docs, svg_path)
    print(f"wrote {csv_path} and {svg_path} ({len(docs)} run(s))")
    return 0


# --------------------------------------------------------------------- main


def _add_common(parser: argparse.ArgumentParser, *names: str) -> None:
    if "data_dir" in names:
        parser.add_argument("--data-dir", dest="data_dir", help="subject CSV directory")
    if "cache_dir" in names:
        parser.add_argument("--cache-dir", dest="cache_dir", help="preprocess cache directory")
    if "task" in names:
        parser.add_argument("--task", choices=["2class", "3class"])
    if "variant" in names:
        parser.add_argument("--variant", choices=["cnn", "hcnn"])
    parser.add_argument("--config", help="key=value config file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pulsestress",
        description="Wrist-PPG stress detection pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-data", help="check every subject file parses")
    _add_common(p, "data_dir")

    p = sub.add_parser("preprocess", help="filter, segment, and featurize into the cache")
    _add_common(p, "data_dir", "cache_dir", "task")
    p.add_argument("--workers", type=int, help="parallel subject workers")
    p.add_argument("--dump-coeffs", dest="dump_coeffs", help="also write filter sections CSV here")

    p = sub.add_parser("loso", help="leave-one-subject-out train and evaluate")
    _add_common(p, "cache_dir", "task", "variant")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--workers", type=int, help="parallel fold workers")
    p.add_argument("--out", help="metrics JSON path")

    p = sub.add_parser("report", help="compare metrics files as CSV + SVG chart")
    p.add_argument("metrics", nargs="+", help="metrics.json files")
    p.add_argument("--out", help="output prefix (.csv and .svg appended)")
    p.add_argument("--config", help="key=value config file")

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate-data":
            return cmd_validate_data(resolve_config(args))
        if args.command == "preprocess":
            return cmd_preprocess(resolve_config(args), dump_coeffs=args.dump_coeffs)
        if args.command == "loso":
            return cmd_loso(resolve_config(args))
        if args.command == "report":
            return cmd_report(args.metrics, args.out or "comparison")
        raise ConfigError(f"unknown command {args.command!r}")
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
