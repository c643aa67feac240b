"""Comparison tables and charts from one or more metrics files."""

from __future__ import annotations

import csv
import json
import os

from .errors import SchemaError

SCHEMA_VERSION = 1

BAR_COLORS = {"accuracy": "#4878a8", "macro_f1": "#e49444"}


def load_metrics_file(path: str | os.PathLike) -> dict:
    """Parse one metrics JSON file, checking its schema version.

    Raises:
        SchemaError: unreadable JSON or wrong schema_version.
    """
    path = os.fspath(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: cannot parse metrics file: {exc}") from exc
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(
            f"{path}: schema_version {version!r}, this build reads {SCHEMA_VERSION}"
        )
    return doc


def metrics_label(doc: dict) -> str:
    cfg = doc.get("config", {})
    return f"{cfg.get('variant', '?')}/{cfg.get('task', '?')}"


def write_comparison_csv(docs: list[dict], path: str) -> str:
    """One row per metrics file: pooled and per-fold aggregate numbers."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "label", "task", "variant",
                "pooled_accuracy", "pooled_macro_f1",
                "fold_accuracy_mean", "fold_accuracy_std",
                "fold_macro_f1_mean", "fold_macro_f1_std",
                "n_folds", "n_examples",
            ]
        )
        for doc in docs:
            cfg = doc.get("config", {})
            pooled = doc["pooled"]
            writer.writerow(
                [
                    metrics_label(doc), cfg.get("task", ""), cfg.get("variant", ""),
                    f"{pooled['accuracy']:.6f}", f"{pooled['macro_f1']:.6f}",
                    f"{doc['fold_accuracy_mean']:.6f}", f"{doc['fold_accuracy_std']:.6f}",
                    f"{doc['fold_macro_f1_mean']:.6f}", f"{doc['fold_macro_f1_std']:.6f}",
                    len(doc["folds"]), pooled["n_examples"],
                ]
            )
    return path


def render_comparison_svg(docs: list[dict]) -> str:
    """Grouped bar chart (accuracy and macro F1 per metrics file) as SVG text."""
    width, height = 640, 360
    margin_left, margin_bottom, margin_top = 60, 60, 30
    plot_w = width - margin_left - 20
    plot_h = height - margin_top - margin_bottom

    groups = [
        (
            metrics_label(doc),
            float(doc["pooled"]["accuracy"]),
            float(doc["pooled"]["macro_f1"]),
        )
        for doc in docs
    ]
    group_w = plot_w / max(len(groups), 1)
    bar_w = min(48.0, group_w / 3.0)

    def x_of(group_idx: int, bar_idx: int) -> float:
        center = margin_left + group_w * (group_idx + 0.5)
        return center + (bar_idx - 1) * bar_w + bar_w * 0.08

    def y_of(value: float) -> float:
        return margin_top + plot_h * (1.0 - value)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for tick in range(0, 11, 2):
        v = tick / 10.0
        y = y_of(v)
        parts.append(
            f'<line x1="{margin_left}" y1="{y:.1f}" x2="{width - 20}" y2="{y:.1f}" '
            f'stroke="#dddddd" stroke-width="1"/>'
        )
        parts.append(
            f'<text x="{margin_left - 8}" y="{y + 4:.1f}" font-size="11" '
            f'text-anchor="end" font-family="sans-serif">{v * 100:.0f}%</text>'
        )
    for gi, (label, acc, f1) in enumerate(groups):
        for bi, (name, value) in enumerate([("accuracy", acc), ("macro_f1", f1)]):
            x = x_of(gi, bi)
            y = y_of(value)
            parts.append(
                f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w * 0.84:.1f}" '
                f'height="{plot_h - (y - margin_top):.1f}" fill="{BAR_COLORS[name]}"/>'
            )
            parts.append(
                f'<text x="{x + bar_w * 0.42:.1f}" y="{y - 4:.1f}" font-size="10" '
                f'text-anchor="middle" font-family="sans-serif">{value * 100:.1f}</text>'
            )
        parts.append(
            f'<text x="{margin_left + group_w * (gi + 0.5):.1f}" '
            f'y="{height - margin_bottom + 18}" font-size="12" text-anchor="middle" '
            f'font-family="sans-serif">{label}</text>'
        )
    legend_x = margin_left
    for i, name in enumerate(["accuracy", "macro_f1"]):
        x = legend_x + i * 120
        parts.append(
            f'<rect x="{x}" y="{height - 24}" width="12" height="12" '
            f'fill="{BAR_COLORS[name]}"/>'
        )
        parts.append(
            f'<text x="{x + 18}" y="{height - 14}" font-size="12" '
            f'font-family="sans-serif">{name.replace("_", " ")}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_comparison_svg(docs: list[dict], path: str) -> str:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(render_comparison_svg(docs))
    os.replace(tmp, path)
    return path
