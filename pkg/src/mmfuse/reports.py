"""Line-delimited JSON reports with full-precision floats.

One JSON object per line, keys in a fixed order, reals rendered with 17
significant digits so a report re-parses to bitwise-equal values and
reruns produce byte-identical files.
"""

from __future__ import annotations

import json

import numpy as np

from .data import atomic_write_bytes
from .evaluation import GateStatsReport, MetricsReport


def _encode_value(value) -> str:
    if value is None:
        return "null"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return json.dumps(str(value))


def report_line(row: dict) -> str:
    parts = (f"{json.dumps(key)}: {_encode_value(value)}" for key, value in row.items())
    return "{" + ", ".join(parts) + "}"


def render_report(rows) -> str:
    return "".join(report_line(row) + "\n" for row in rows)


def write_report(path, rows) -> None:
    atomic_write_bytes(path, render_report(rows).encode("utf-8"))


def parse_report(text: str) -> list[dict]:
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def metrics_row(label_key: str, label_value: str, metrics: MetricsReport) -> dict:
    return {
        label_key: label_value,
        "accuracy": metrics.accuracy,
        "precision": metrics.precision,
        "recall": metrics.recall,
        "f1": metrics.f1,
        "tp": metrics.tp,
        "fp": metrics.fp,
        "tn": metrics.tn,
        "fn": metrics.fn,
    }


def gate_stats_row(stats: GateStatsReport) -> dict:
    return {
        "mean_alpha_t": stats.mean_alpha_t,
        "mean_alpha_i": stats.mean_alpha_i,
        "std_alpha_t": stats.std_alpha_t,
        "std_alpha_i": stats.std_alpha_i,
        "pct_text_dominant": stats.pct_text_dominant,
        "pct_image_dominant": stats.pct_image_dominant,
        "pct_balanced": stats.pct_balanced,
        "threshold": stats.threshold,
        "n_records": stats.n_records,
    }


def history_row(entry: dict) -> dict:
    return {
        "epoch": entry["epoch"],
        "train_loss": entry["train_loss"],
        "val_accuracy": entry["val_accuracy"],
        "val_precision": entry["val_precision"],
        "val_recall": entry["val_recall"],
        "val_f1": entry["val_f1"],
    }
