"""Metrics table, run summary and manifest writers."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import time
from pathlib import Path

from . import __version__, dp
from .config import FederationConfig
from .federation import RoundMetrics

# fixed column order; timing columns last so reproducibility checks can drop them
COLUMNS = [
    "round",
    "test_loss",
    "test_accuracy",
    "selected_clients",
    "privatized_accuracies",
    "weights",
    "sample_weights",
    "frozen_layers",
    "params_per_client",
    "transmitted_params",
    "transmitted_bytes",
    "global_params",
    "epsilon_total",
    "mean_train_loss",
    "duration_s",
]
TIMING_COLUMNS = ("duration_s",)

TABLE_NAME = "metrics.csv"
SUMMARY_NAME = "summary.json"
MANIFEST_NAME = "manifest.json"


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ";".join(_cell(x) for x in v)
    return str(v)


def metrics_table(series: list[RoundMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for m in series:
        w.writerow([_cell(getattr(m, c)) for c in COLUMNS])
    return buf.getvalue()


def summary(series: list[RoundMetrics], config: FederationConfig) -> dict:
    last = series[-1]
    return {
        "rounds": len(series),
        "final_test_accuracy": last.test_accuracy,
        "final_test_loss": last.test_loss,
        "total_transmitted_bytes": sum(m.transmitted_bytes for m in series),
        "total_transmitted_params": sum(m.transmitted_params for m in series),
        "epsilon_total": last.epsilon_total,
        "epsilon_per_round": config.epsilon,
        "delta": config.delta,
        "frozen_layers": last.frozen_layers,
        "he_ring_degree": config.ring_degree,
        "he_secure": False,
    }


def manifest(config: FederationConfig, dataset_checksum: str) -> dict:
    return {
        "artifact_version": __version__,
        "seed": config.seed,
        "dataset_checksum": dataset_checksum,
        "start_timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config": dataclasses.asdict(config),
        "config_text": config.to_text(),
        "epsilon_total_planned": dp.compose_privacy(config.privacy_spec()),
        "he_note": "HE parameters are for simulation only and are NOT a vetted secure configuration",
    }


def write_manifest(out_dir, config: FederationConfig, dataset_checksum: str) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(manifest(config, dataset_checksum), indent=2, sort_keys=True) + "\n")
    return path


def emit_metrics(series: list[RoundMetrics], out_dir, config: FederationConfig,
                 dataset_checksum: str = "") -> dict[str, Path]:
    """Write the per-round table, the summary and (if absent) the manifest."""
    if not series:
        raise ValueError("no rounds to emit")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"table": out / TABLE_NAME, "summary": out / SUMMARY_NAME, "manifest": out / MANIFEST_NAME}
    paths["table"].write_text(metrics_table(series))
    paths["summary"].write_text(json.dumps(summary(series, config), indent=2, sort_keys=True) + "\n")
    if not paths["manifest"].exists():
        write_manifest(out, config, dataset_checksum)
    return paths


def strip_timing(table_text: str) -> str:
    """Drop timing columns from a metrics table for reproducibility comparisons."""
    rows = list(csv.reader(io.StringIO(table_text)))
    keep = [i for i, c in enumerate(rows[0]) if c not in TIMING_COLUMNS]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow([r[i] for i in keep])
    return buf.getvalue()
