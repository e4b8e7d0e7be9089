"""Figure and table rendering for finished runs and sweeps.

The report command reads the delimited outputs back in and renders
matplotlib figures next to a compact report.csv. CSV remains the
machine-readable contract; the figures are for eyeballs.
"""

from __future__ import annotations

import io
import json
import math
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .data import fmt_float
from .errors import ValidationError
from .outputs import (
    METRICS_FILE,
    SUMMARY_FILE,
    SWEEP_RESULTS_FILE,
    SWEEP_RUNTIME_FILE,
    read_commented_csv,
)

FIG_DPI = 150


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
    return path


def render_run_report(run_dir: Path, out_dir: Path) -> list[Path]:
    """Metric/loss curves and a tail-summary table for one run."""
    run_dir, out_dir = Path(run_dir), Path(out_dir)
    metrics_path = run_dir / METRICS_FILE
    if not metrics_path.exists():
        raise ValidationError(f"no {METRICS_FILE} in {run_dir}")
    _, rows = read_commented_csv(metrics_path)
    if not rows:
        raise ValidationError(f"{metrics_path}: no records")
    out_dir.mkdir(parents=True, exist_ok=True)
    iters = [int(r["iteration"]) for r in rows]
    written = []

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for column, label in (("accuracy", "accuracy"), ("precision", "macro precision"),
                          ("recall", "macro recall")):
        ax.plot(iters, [float(r[column]) for r in rows], label=label, linewidth=1.0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("metric")
    ax.set_ylim(0.0, 1.0)
    ax.legend(loc="lower right")
    ax.grid(alpha=0.3)
    written.append(_save(fig, out_dir / "metrics.png"))

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(iters, [float(r["mean_loss"]) for r in rows], color="tab:red", linewidth=1.0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean local loss")
    ax.grid(alpha=0.3)
    written.append(_save(fig, out_dir / "loss.png"))

    summary_path = run_dir / SUMMARY_FILE
    summary = json.loads(summary_path.read_text(encoding="utf-8")) if summary_path.exists() else {}
    tail = summary.get("tail", {})
    out = io.StringIO()
    out.write("metric,value\n")
    for key in ("accuracy", "precision", "recall", "mean_loss"):
        if key in tail:
            out.write(f"tail_{key},{fmt_float(tail[key])}\n")
    if "total_wallclock_ms" in summary:
        out.write(f"total_wallclock_ms,{fmt_float(summary['total_wallclock_ms'])}\n")
    report_path = out_dir / "report.csv"
    report_path.write_text(out.getvalue(), encoding="utf-8", newline="\n")
    written.append(report_path)
    return written


def _mean(values) -> float:
    values = list(values)
    return sum(values) / len(values)


def render_sweep_report(sweep_dir: Path, out_dir: Path) -> list[Path]:
    """Accuracy-versus-epsilon curves and runtime bars for a sweep."""
    sweep_dir, out_dir = Path(sweep_dir), Path(out_dir)
    results_path = sweep_dir / SWEEP_RESULTS_FILE
    if not results_path.exists():
        raise ValidationError(f"no {SWEEP_RESULTS_FILE} in {sweep_dir}")
    _, rows = read_commented_csv(results_path)
    if not rows:
        raise ValidationError(f"{results_path}: no rows")
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    # Mean tail accuracy over seeds per (mechanism, clusters, epsilon).
    acc: dict[tuple[str, int], dict[float, list[float]]] = defaultdict(lambda: defaultdict(list))
    for r in rows:
        eps = float(r["epsilon"])
        acc[(r["mechanism"], int(r["clusters"]))][eps].append(float(r["tail_accuracy"]))

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for (mechanism, clusters), by_eps in sorted(acc.items()):
        finite = sorted(e for e in by_eps if math.isfinite(e))
        if finite:
            ax.plot(
                finite,
                [_mean(by_eps[e]) for e in finite],
                marker="o",
                label=f"{mechanism}, N={clusters}",
            )
        for e in by_eps:
            if math.isinf(e):
                ax.axhline(_mean(by_eps[e]), linestyle="--", alpha=0.4, color="gray")
    ax.set_xscale("log")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("tail accuracy")
    ax.grid(alpha=0.3)
    if acc:
        ax.legend(fontsize=8)
    written.append(_save(fig, out_dir / "accuracy_vs_epsilon.png"))

    runtime_path = sweep_dir / SWEEP_RUNTIME_FILE
    if runtime_path.exists():
        _, time_rows = read_commented_csv(runtime_path)
        by_cell: dict[str, list[float]] = defaultdict(list)
        for r in time_rows:
            key = f"{r['mechanism']}\nN={r['clusters']}"
            by_cell[key].append(float(r["wallclock_ms"]) / 1e3)
        labels = sorted(by_cell)
        fig, ax = plt.subplots(figsize=(max(6.4, 1.0 * len(labels)), 4.0))
        ax.bar(range(len(labels)), [_mean(by_cell[k]) for k in labels], color="tab:blue")
        ax.set_xticks(range(len(labels)), labels, fontsize=8)
        ax.set_ylabel("wall-clock (s)")
        ax.grid(alpha=0.3, axis="y")
        written.append(_save(fig, out_dir / "runtime.png"))

    out = io.StringIO()
    out.write("mechanism,clusters,epsilon,mean_tail_accuracy,n_seeds\n")
    for (mechanism, clusters), by_eps in sorted(acc.items()):
        for eps in sorted(by_eps):
            eps_text = "inf" if math.isinf(eps) else repr(eps)
            out.write(
                f"{mechanism},{clusters},{eps_text},"
                f"{fmt_float(_mean(by_eps[eps]))},{len(by_eps[eps])}\n"
            )
    report_path = out_dir / "report.csv"
    report_path.write_text(out.getvalue(), encoding="utf-8", newline="\n")
    written.append(report_path)
    return written
