"""Experiment and sweep configuration files.

Configs are flat "key = value" pairs grouped in [model], [dp],
[federation], and [data] sections; sweep files add a [sweep] section.
Every key has a documented default (see README), unknown keys are
rejected, and validation errors name the offending field. "inf" is the
spelling for an infinite epsilon and maps to the none mechanism.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, replace
from pathlib import Path

from .dp import DpConfig, Mechanism
from .errors import ValidationError
from .federation import ExperimentConfig
from .mlp import LayerShape

SCHEMA_VERSION = 1

_SECTIONS = {
    "model": {"hidden", "activation", "learning_rate"},
    "dp": {"mechanism", "epsilon", "delta", "clip_norm", "q", "delta_slack"},
    "federation": {
        "clusters",
        "rounds",
        "batch_size",
        "per_cluster",
        "seed",
        "eval_every",
        "tail_window",
        "per_cluster_norm",
        "eval_per_cluster",
    },
    "data": {
        "source",
        "train_per_class",
        "test_per_class",
        "separation",
        "seed",
        "train_csv",
        "test_csv",
    },
    "sweep": {"mechanisms", "epsilons", "clusters", "seeds"},
}


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    train_per_class: int = 294
    test_per_class: int = 1000
    separation: float = 3.0
    seed: int = 7
    train_csv: str | None = None
    test_csv: str | None = None

    def __post_init__(self):
        if self.source not in ("synthetic", "csv"):
            raise ValidationError(f"data.source: must be 'synthetic' or 'csv', got {self.source!r}")
        if self.source == "synthetic":
            if self.train_per_class < 1 or self.test_per_class < 1:
                raise ValidationError("data.train_per_class/test_per_class: must be >= 1")
            if self.separation < 0:
                raise ValidationError("data.separation: must be >= 0")
            if self.seed < 0:
                raise ValidationError("data.seed: must be >= 0")
        else:
            if not self.train_csv or not self.test_csv:
                raise ValidationError("data.train_csv/test_csv: required when source = csv")


@dataclass(frozen=True)
class RunConfig:
    """A resolved run configuration; sweep cells override single fields."""

    hidden: tuple[int, ...] = (128, 128)
    activation: str = "relu"
    learning_rate: float = 0.0046
    mechanism: Mechanism = Mechanism.NONE
    epsilon: float = math.inf
    delta: float = 1e-5
    clip_norm: float = 1.0
    batch_fraction: float | None = None
    delta_slack: float | None = None
    clusters: int = 3
    rounds: int = 1000
    batch_size: int = 1024
    per_cluster: int = 1470
    seed: int = 1
    eval_every: int = 1
    tail_window: int = 100
    per_cluster_norm: bool = False
    eval_per_cluster: bool = False
    data: DataConfig = DataConfig()

    def resolved(self) -> "RunConfig":
        """Normalize the epsilon/mechanism pairing both ways."""
        if math.isinf(self.epsilon) and self.mechanism is not Mechanism.NONE:
            return replace(self, mechanism=Mechanism.NONE)
        if self.mechanism is Mechanism.NONE and not math.isinf(self.epsilon):
            return replace(self, epsilon=math.inf)
        return self

    def experiment_config(self) -> ExperimentConfig:
        cfg = self.resolved()
        q = cfg.batch_fraction
        if q is None:
            q = min(1.0, cfg.batch_size / cfg.per_cluster)
        dp_cfg = DpConfig(
            mechanism=cfg.mechanism,
            epsilon=cfg.epsilon,
            delta=cfg.delta,
            clip_norm=cfg.clip_norm,
            learning_rate=cfg.learning_rate,
            dataset_size=cfg.per_cluster,
            batch_fraction=q,
            max_rounds=cfg.rounds,
        )
        shape = LayerShape((21, *cfg.hidden, 5))
        return ExperimentConfig(
            shape=shape,
            dp=dp_cfg,
            n_clusters=cfg.clusters,
            max_rounds=cfg.rounds,
            batch_size=cfg.batch_size,
            per_cluster=cfg.per_cluster,
            master_seed=cfg.seed,
            eval_every=cfg.eval_every,
            tail_window=min(cfg.tail_window, cfg.rounds),
            activation=cfg.activation,
            per_cluster_norm=cfg.per_cluster_norm,
            eval_per_cluster=cfg.eval_per_cluster,
            delta_slack=cfg.delta_slack,
        )


@dataclass(frozen=True)
class SweepSpec:
    mechanisms: tuple[Mechanism, ...]
    epsilons: tuple[float, ...]
    cluster_counts: tuple[int, ...]
    seeds: tuple[int, ...]

    def __post_init__(self):
        if not (self.mechanisms and self.epsilons and self.cluster_counts and self.seeds):
            raise ValidationError("sweep lists must be nonempty")
        for eps in self.epsilons:
            if not (eps > 0):
                raise ValidationError(f"sweep.epsilons: epsilon must be > 0 or inf, got {eps}")

    def cells(self) -> list[tuple[Mechanism, float, int, int]]:
        """All (mechanism, epsilon, clusters, seed) cells in output order."""
        grid = [
            (m, e, n, s)
            for m in self.mechanisms
            for e in self.epsilons
            for n in self.cluster_counts
            for s in self.seeds
        ]
        grid.sort(key=lambda c: (c[0].value, c[1], c[2], c[3]))
        return grid


def _parse_value(section: str, key: str, raw: str, kind: str):
    where = f"{section}.{key}"
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            if raw.lower() == "inf":
                return math.inf
            value = float(raw)
            if math.isnan(value):
                raise ValueError("nan")
            return value
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        raise AssertionError(kind)
    except ValueError:
        raise ValidationError(f"{where}: cannot parse {raw!r} as {kind}") from None


def _parse_list(section: str, key: str, raw: str, kind: str) -> list:
    items = [part.strip() for part in raw.split(",") if part.strip()]
    if not items:
        raise ValidationError(f"{section}.{key}: list must be nonempty")
    return [_parse_value(section, key, item, kind) for item in items]


def _read_ini(path: Path, allow_sweep: bool) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    text = Path(path).read_text(encoding="utf-8")
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ValidationError(f"{path}: {exc}") from None
    for section in parser.sections():
        if section not in _SECTIONS or (section == "sweep" and not allow_sweep):
            raise ValidationError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SECTIONS[section]:
                raise ValidationError(f"unknown config key {section}.{key}")
    return parser


def _build_run_config(parser: configparser.ConfigParser, base_dir: Path) -> RunConfig:
    cfg = RunConfig()

    def get(section, key, default):
        if parser.has_option(section, key):
            return parser.get(section, key)
        return default

    hidden_raw = get("model", "hidden", None)
    hidden = (
        tuple(_parse_list("model", "hidden", hidden_raw, "int")) if hidden_raw else cfg.hidden
    )
    if any(h < 1 for h in hidden):
        raise ValidationError("model.hidden: widths must be >= 1")
    activation = get("model", "activation", cfg.activation).strip().lower()

    mechanism_raw = get("dp", "mechanism", None)
    try:
        mechanism = Mechanism.parse(mechanism_raw) if mechanism_raw else cfg.mechanism
    except ValidationError as exc:
        raise ValidationError(f"dp.mechanism: {exc}") from None

    def num(section, key, default, kind="float"):
        raw = get(section, key, None)
        return default if raw is None else _parse_value(section, key, raw, kind)

    epsilon = num("dp", "epsilon", cfg.epsilon)
    if not (epsilon > 0):
        raise ValidationError(f"dp.epsilon: must be > 0 (or 'inf'), got {epsilon}")
    delta = num("dp", "delta", cfg.delta)
    clip_norm = num("dp", "clip_norm", cfg.clip_norm)
    q_raw = get("dp", "q", None)
    batch_fraction = None if q_raw is None else _parse_value("dp", "q", q_raw, "float")
    slack_raw = get("dp", "delta_slack", None)
    delta_slack = None if slack_raw is None else _parse_value("dp", "delta_slack", slack_raw, "float")

    data = DataConfig(
        source=get("data", "source", "synthetic").strip().lower(),
        train_per_class=num("data", "train_per_class", 294, "int"),
        test_per_class=num("data", "test_per_class", 1000, "int"),
        separation=num("data", "separation", 3.0),
        seed=num("data", "seed", 7, "int"),
        train_csv=_resolve_path(get("data", "train_csv", None), base_dir),
        test_csv=_resolve_path(get("data", "test_csv", None), base_dir),
    )

    run = RunConfig(
        hidden=hidden,
        activation=activation,
        learning_rate=num("model", "learning_rate", cfg.learning_rate),
        mechanism=mechanism,
        epsilon=epsilon,
        delta=delta,
        clip_norm=clip_norm,
        batch_fraction=batch_fraction,
        delta_slack=delta_slack,
        clusters=num("federation", "clusters", cfg.clusters, "int"),
        rounds=num("federation", "rounds", cfg.rounds, "int"),
        batch_size=num("federation", "batch_size", cfg.batch_size, "int"),
        per_cluster=num("federation", "per_cluster", cfg.per_cluster, "int"),
        seed=num("federation", "seed", cfg.seed, "int"),
        eval_every=num("federation", "eval_every", cfg.eval_every, "int"),
        tail_window=num("federation", "tail_window", cfg.tail_window, "int"),
        per_cluster_norm=num("federation", "per_cluster_norm", False, "bool"),
        eval_per_cluster=num("federation", "eval_per_cluster", False, "bool"),
        data=data,
    ).resolved()
    run.experiment_config()  # validate eagerly so errors carry field context
    return run


def _resolve_path(raw: str | None, base_dir: Path) -> str | None:
    if raw is None or not raw.strip():
        return None
    p = Path(raw.strip())
    return str(p if p.is_absolute() else base_dir / p)


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    parser = _read_ini(path, allow_sweep=False)
    return _build_run_config(parser, path.parent)


def load_sweep_config(path: str | Path) -> tuple[RunConfig, SweepSpec]:
    path = Path(path)
    parser = _read_ini(path, allow_sweep=True)
    if not parser.has_section("sweep"):
        raise ValidationError("sweep config needs a [sweep] section")
    section = parser["sweep"]
    mech_items = [p.strip() for p in section.get("mechanisms", "none").split(",") if p.strip()]
    if not mech_items:
        raise ValidationError("sweep.mechanisms: list must be nonempty")
    try:
        mechanisms = tuple(Mechanism.parse(m) for m in mech_items)
    except ValidationError as exc:
        raise ValidationError(f"sweep.mechanisms: {exc}") from None
    epsilons = tuple(_parse_list("sweep", "epsilons", section.get("epsilons", "inf"), "float"))
    clusters = tuple(_parse_list("sweep", "clusters", section.get("clusters", "3"), "int"))
    seeds = tuple(_parse_list("sweep", "seeds", section.get("seeds", "1"), "int"))
    spec = SweepSpec(mechanisms, epsilons, clusters, seeds)
    base = _build_run_config(parser, path.parent)
    return base, spec
