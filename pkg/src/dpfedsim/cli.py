"""Command-line interface.

Subcommands: gen-data, run, sweep, accountant, report. Exit codes:
0 success, 1 validation error, 2 divergence, 3 I/O error.
"""

from __future__ import annotations

import argparse
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import outputs
from .accountant import compose_advanced, compose_naive, compose_parallel
from .config import SCHEMA_VERSION, DataConfig, load_run_config, load_sweep_config
from .data import (
    Dataset,
    FeatureSchema,
    default_schema,
    fmt_float,
    format_code_table,
    generate_synthetic_split,
    load_dataset_csv,
    normalize,
    write_dataset_csv,
)
from .errors import DivergenceError, ValidationError
from .federation import ExperimentResult, run_experiment
from .mlp import save_checkpoint
from .reporting import render_run_report, render_sweep_report


class _Parser(argparse.ArgumentParser):
    """Argparse with usage errors mapped to the validation exit code."""

    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dpfedsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write synthetic train/test CSVs")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--train-per-class", type=int, default=29400)
    p.add_argument("--test-per-class", type=int, default=12600)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("run", help="run one experiment from a config file")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=None, help="override federation.seed")
    p.add_argument("--threads", type=int, default=1, help="cluster thread pool; never changes results")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a grid of experiments from a sweep config")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("accountant", help="print composed privacy budgets as JSON")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--rounds", type=int, required=True)
    p.add_argument("--delta-slack", type=float, default=None,
                   help="slack for the advanced bound (default: delta)")
    p.set_defaults(func=cmd_accountant)

    p = sub.add_parser("report", help="render figures and a report table")
    p.add_argument("--run", type=Path, default=None, help="run output directory")
    p.add_argument("--sweep", type=Path, default=None, help="sweep output directory")
    p.add_argument("--out", type=Path, default=None, help="default: the source directory")
    p.set_defaults(func=cmd_report)
    return parser


def _sniff_schema(csv_path: Path):
    """Keep only the default categorical columns that really hold strings.

    Generated synthetic files reuse the standard column names but hold
    continuous values everywhere; coding those would destroy them.
    """
    schema = default_schema()
    with open(csv_path, encoding="utf-8") as fh:
        fh.readline()
        first = fh.readline()
    fields = first.rstrip("\n").split(",")
    categorical = []
    for name in schema.categorical:
        idx = schema.feature_names.index(name)
        if idx < len(fields):
            try:
                float(fields[idx])
            except ValueError:
                categorical.append(name)
    return FeatureSchema(schema.feature_names, schema.class_names, tuple(categorical))


def load_datasets(data_cfg: DataConfig) -> tuple[Dataset, Dataset, dict | None]:
    """Train/test pair plus the categorical code table for CSV sources."""
    if data_cfg.source == "synthetic":
        train, test = generate_synthetic_split(
            data_cfg.train_per_class,
            data_cfg.test_per_class,
            data_cfg.separation,
            data_cfg.seed,
        )
        return train, test, None
    schema = _sniff_schema(Path(data_cfg.train_csv))
    train_raw, codes = load_dataset_csv(data_cfg.train_csv, schema, split="train")
    test_raw, codes = load_dataset_csv(data_cfg.test_csv, schema, split="test", codes=codes)
    train, stats = normalize(train_raw)
    test, _ = normalize(test_raw, stats)
    return train, test, codes


def _write_run_outputs(result: ExperimentResult, out_dir: Path, codes: dict | None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs.write_metrics_csv(result, out_dir / outputs.METRICS_FILE)
    outputs.write_timing_csv(result, out_dir / outputs.TIMING_FILE)
    outputs.write_summary_json(result, out_dir / outputs.SUMMARY_FILE)
    outputs.write_confusion_csv(result, default_schema().class_names, out_dir / outputs.CONFUSION_FILE)
    save_checkpoint(result.final_params, out_dir / outputs.CHECKPOINT_FILE)
    if codes:
        table = format_code_table(codes)
        if table:
            (out_dir / outputs.CODE_TABLE_FILE).write_text(table, encoding="utf-8", newline="\n")


def cmd_gen_data(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, test = generate_synthetic_split(
        args.train_per_class, args.test_per_class, args.separation, args.seed
    )
    write_dataset_csv(train, out_dir / "train.csv")
    write_dataset_csv(test, out_dir / "test.csv")
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "generator": {
            "train_per_class": args.train_per_class,
            "test_per_class": args.test_per_class,
            "separation": args.separation,
            "seed": args.seed,
        },
        "train_samples": len(train),
        "test_samples": len(test),
        "feature_names": list(train.schema.feature_names),
        "class_names": list(train.schema.class_names),
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n"
    )
    print(f"wrote {len(train)} train / {len(test)} test samples to {out_dir}")
    return 0


def cmd_run(args) -> int:
    run_cfg = load_run_config(args.config)
    if args.seed is not None:
        run_cfg = replace(run_cfg, seed=args.seed)
    exp_cfg = run_cfg.experiment_config()
    train, test, codes = load_datasets(run_cfg.data)
    result = run_experiment(exp_cfg, train, test, threads=max(1, args.threads))
    _write_run_outputs(result, Path(args.out), codes)
    print(
        f"run complete: tail accuracy {result.tail_accuracy:.4f}, "
        f"wall-clock {result.total_wallclock_ms / 1e3:.1f} s, outputs in {args.out}"
    )
    return 0


def _cell_name(mechanism, epsilon, clusters, seed) -> str:
    return f"{mechanism.value}_eps{outputs.epsilon_str(epsilon)}_n{clusters}_s{seed}"


def cmd_sweep(args) -> int:
    base, spec = load_sweep_config(args.config)
    out_dir = Path(args.out)
    cells_dir = out_dir / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)

    datasets: dict[DataConfig, tuple] = {}
    cache: dict = {}
    rows: list[dict] = []
    failures: list[tuple[str, str]] = []
    for mechanism, epsilon, clusters, seed in spec.cells():
        name = _cell_name(mechanism, epsilon, clusters, seed)
        cell_cfg = replace(
            base, mechanism=mechanism, epsilon=epsilon, clusters=clusters, seed=seed
        ).resolved()
        try:
            exp_cfg = cell_cfg.experiment_config()
            if cell_cfg.data not in datasets:
                datasets[cell_cfg.data] = load_datasets(cell_cfg.data)
            train, test, codes = datasets[cell_cfg.data]
            key = (exp_cfg.dp.mechanism, exp_cfg.dp.epsilon, clusters, seed)
            if key not in cache:
                cache[key] = run_experiment(exp_cfg, train, test, threads=max(1, args.threads))
            result = cache[key]
            _write_run_outputs(result, cells_dir / name, codes)
        except (ValidationError, DivergenceError) as exc:
            failures.append((name, str(exc)))
            print(f"cell {name} failed: {exc}", file=sys.stderr)
            continue
        rows.append(
            {
                "mechanism": mechanism.value,
                "epsilon": outputs.epsilon_str(epsilon),
                "clusters": clusters,
                "seed": seed,
                "tail_accuracy": result.tail_accuracy,
                "tail_precision": result.tail_precision,
                "tail_recall": result.tail_recall,
                "wallclock_ms": result.total_wallclock_ms,
            }
        )
        print(f"cell {name}: tail accuracy {result.tail_accuracy:.4f}")

    base_config_json = outputs.config_json(base.experiment_config().as_dict())
    header = f"# schema_version = {SCHEMA_VERSION}\n# config = {base_config_json}\n"
    results_text = io.StringIO()
    results_text.write(header)
    results_text.write("mechanism,epsilon,clusters,seed,tail_accuracy,tail_precision,tail_recall\n")
    runtime_text = io.StringIO()
    runtime_text.write(header)
    runtime_text.write("mechanism,epsilon,clusters,seed,wallclock_ms\n")
    for row in rows:
        prefix = f"{row['mechanism']},{row['epsilon']},{row['clusters']},{row['seed']}"
        results_text.write(
            f"{prefix},{fmt_float(row['tail_accuracy'])},"
            f"{fmt_float(row['tail_precision'])},{fmt_float(row['tail_recall'])}\n"
        )
        runtime_text.write(f"{prefix},{fmt_float(row['wallclock_ms'])}\n")
    (out_dir / outputs.SWEEP_RESULTS_FILE).write_text(
        results_text.getvalue(), encoding="utf-8", newline="\n"
    )
    (out_dir / outputs.SWEEP_RUNTIME_FILE).write_text(
        runtime_text.getvalue(), encoding="utf-8", newline="\n"
    )
    if failures:
        fail_text = "cell,error\n" + "".join(
            f"{name},{message.replace(chr(10), ' ')}\n" for name, message in failures
        )
        (out_dir / outputs.SWEEP_FAILURES_FILE).write_text(
            fail_text, encoding="utf-8", newline="\n"
        )
    print(f"sweep complete: {len(rows)} cells ok, {len(failures)} failed, outputs in {out_dir}")
    return 0


def cmd_accountant(args) -> int:
    slack = args.delta_slack if args.delta_slack is not None else args.delta
    budgets = {
        "parallel": compose_parallel(args.epsilon, args.delta).as_dict(),
        "naive_sequential": compose_naive(
            args.epsilon, args.delta, args.clusters, args.rounds
        ).as_dict(),
        "advanced": compose_advanced(
            args.epsilon, args.delta, args.clusters, args.rounds, slack
        ).as_dict(),
    }
    print(json.dumps(budgets, indent=2, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    if (args.run is None) == (args.sweep is None):
        raise ValidationError("report needs exactly one of --run or --sweep")
    if args.run is not None:
        out = args.out or args.run
        written = render_run_report(args.run, out)
    else:
        out = args.out or args.sweep
        written = render_sweep_report(args.sweep, out)
    for path in written:
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
