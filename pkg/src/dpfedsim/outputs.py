"""Result files written by the CLI and read back by the report command.

Text outputs are UTF-8 with LF line endings and fixed 17-significant-digit
floats; each embeds the tool schema version and the resolved run
configuration as leading '#' comment lines. Wall-clock measurements live
in separate timing files so the metric files are byte-identical across
reruns of the same configuration.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from .config import SCHEMA_VERSION
from .data import fmt_float
from .federation import ExperimentResult

METRICS_FILE = "metrics.csv"
TIMING_FILE = "timing.csv"
SUMMARY_FILE = "summary.json"
CHECKPOINT_FILE = "model.ckpt"
CONFUSION_FILE = "confusion.csv"
CODE_TABLE_FILE = "code_table.csv"
SWEEP_RESULTS_FILE = "sweep_results.csv"
SWEEP_RUNTIME_FILE = "sweep_runtime.csv"
SWEEP_FAILURES_FILE = "sweep_failures.csv"


def epsilon_str(epsilon: float) -> str:
    return "inf" if math.isinf(epsilon) else repr(float(epsilon))


def config_json(config_dict: dict) -> str:
    return json.dumps(config_dict, sort_keys=True, separators=(",", ":"))


def _comment_header(config_dict: dict | None) -> str:
    lines = [f"# schema_version = {SCHEMA_VERSION}"]
    if config_dict is not None:
        lines.append(f"# config = {config_json(config_dict)}")
    return "\n".join(lines) + "\n"


def _write_text(path: Path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def write_metrics_csv(result: ExperimentResult, path: Path) -> None:
    out = io.StringIO()
    out.write(_comment_header(result.config.as_dict()))
    out.write("iteration,accuracy,precision,recall,mean_loss\n")
    for r in result.records:
        out.write(
            f"{r.iteration},{fmt_float(r.accuracy)},{fmt_float(r.macro_precision)},"
            f"{fmt_float(r.macro_recall)},{fmt_float(r.mean_loss)}\n"
        )
    _write_text(path, out.getvalue())


def write_timing_csv(result: ExperimentResult, path: Path) -> None:
    out = io.StringIO()
    out.write(_comment_header(result.config.as_dict()))
    out.write("iteration,elapsed_ms\n")
    for r in result.records:
        out.write(f"{r.iteration},{fmt_float(r.elapsed_ms)}\n")
    _write_text(path, out.getvalue())


def write_summary_json(result: ExperimentResult, path: Path) -> None:
    summary = {
        "schema_version": SCHEMA_VERSION,
        "config": result.config.as_dict(),
        "tail": {
            "window_iterations": result.config.tail_window,
            "records": len(
                [r for r in result.records
                 if r.iteration > result.config.max_rounds - result.config.tail_window]
            ),
            "accuracy": result.tail_accuracy,
            "precision": result.tail_precision,
            "recall": result.tail_recall,
            "mean_loss": result.tail_loss,
        },
        "noise_scale": {
            "mechanism": result.noise_scale.mechanism.value,
            "value": result.noise_scale.value,
        },
        "budgets": result.budgets,
        "rounds_recorded": len(result.records),
        "total_wallclock_ms": result.total_wallclock_ms,
        "per_cluster_accuracy": result.per_cluster_accuracy,
    }
    _write_text(path, json.dumps(summary, indent=2, sort_keys=True) + "\n")


def write_confusion_csv(result: ExperimentResult, class_names, path: Path) -> None:
    out = io.StringIO()
    out.write(_comment_header(result.config.as_dict()))
    names = list(class_names)
    out.write("true\\pred," + ",".join(names) + "\n")
    for i, name in enumerate(names):
        out.write(name + "," + ",".join(str(int(c)) for c in result.final_confusion[i]) + "\n")
    _write_text(path, out.getvalue())


def read_commented_csv(path: Path) -> tuple[dict, list[dict]]:
    """Meta (schema_version, config) plus data rows keyed by header names."""
    meta: dict = {}
    rows: list[dict] = []
    header: list[str] | None = None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                meta[key.strip()] = value.strip()
            continue
        fields = next(csv.reader([line]))
        if header is None:
            header = fields
            continue
        rows.append(dict(zip(header, fields)))
    if "config" in meta:
        meta["config"] = json.loads(meta["config"])
    return meta, rows
