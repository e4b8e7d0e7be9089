"""Dataset ingestion, normalization, partitioning, and synthesis.

Datasets are 21-feature, 5-class network-traffic records. Feature matrices
are float64 arrays of shape (n, 21); labels are int64 class indices in
[0, 5). All operations are pure functions of their inputs and seeds.
"""

from __future__ import annotations

import csv
import io

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapacityError, LabelError, ParseError, ValidationError
from .seeds import DOMAIN_PARTITION, DOMAIN_SYNTH_MEANS, DOMAIN_SYNTH_SPREAD, derive_rng

N_FEATURES = 21
N_CLASSES = 5

DEFAULT_FEATURE_NAMES = (
    "duration",
    "protocol_type",
    "service",
    "src_bytes",
    "dst_bytes",
    "flag",
    "count",
    "srv_count",
    "serror_rate",
    "same_srv_rate",
    "diff_srv_rate",
    "srv_serror_rate",
    "srv_diff_host_rate",
    "dst_host_count",
    "dst_host_srv_count",
    "dst_host_same_srv_rate",
    "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate",
    "dst_host_serror_rate",
    "dst_host_srv_diff_host_rate",
    "dst_host_srv_serror_rate",
)
DEFAULT_CLASS_NAMES = ("normal", "dos", "fot", "bp", "mitm")
DEFAULT_CATEGORICAL = ("protocol_type", "service", "flag")

# Stable 17-significant-digit float formatting shared by all emitted files.
FLOAT_FMT = ".16e"


def fmt_float(x: float) -> str:
    return format(float(x), FLOAT_FMT)


@dataclass(frozen=True)
class FeatureSchema:
    """Column contract: 21 ordered feature names and 5 ordered class names."""

    feature_names: tuple[str, ...] = DEFAULT_FEATURE_NAMES
    class_names: tuple[str, ...] = DEFAULT_CLASS_NAMES
    categorical: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.feature_names) != N_FEATURES:
            raise ValidationError(
                f"schema needs exactly {N_FEATURES} feature names, got {len(self.feature_names)}"
            )
        if len(self.class_names) != N_CLASSES:
            raise ValidationError(
                f"schema needs exactly {N_CLASSES} class names, got {len(self.class_names)}"
            )
        if len(set(self.feature_names)) != N_FEATURES:
            raise ValidationError("feature names must be unique")
        if len(set(self.class_names)) != N_CLASSES:
            raise ValidationError("class names must be unique")
        unknown = set(self.categorical) - set(self.feature_names)
        if unknown:
            raise ValidationError(f"categorical columns not in schema: {sorted(unknown)}")


def default_schema() -> FeatureSchema:
    """The blockchain-traffic column contract with its categorical fields."""
    return FeatureSchema(categorical=DEFAULT_CATEGORICAL)


@dataclass(frozen=True)
class Dataset:
    """Labeled feature records plus the schema they conform to."""

    schema: FeatureSchema
    features: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValidationError(f"split must be 'train' or 'test', got {self.split!r}")
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        labels = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2 or feats.shape[1] != N_FEATURES:
            raise ValidationError(f"features must have shape (n, {N_FEATURES})")
        if feats.shape[0] == 0:
            raise ValidationError("dataset must be nonempty")
        if labels.shape != (feats.shape[0],):
            raise ValidationError("labels must be one per sample")
        if not np.isfinite(feats).all():
            raise ValidationError("features must be finite")
        if labels.min() < 0 or labels.max() >= N_CLASSES:
            raise ValidationError(f"labels must lie in [0, {N_CLASSES})")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class ClusterDataset:
    """One participant's private shard."""

    cluster_id: int
    dataset: Dataset

    @property
    def size(self) -> int:
        return len(self.dataset)


@dataclass(frozen=True)
class NormStats:
    """Per-feature (min, max) pairs taken from a training split."""

    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        mn = np.asarray(self.minimum, dtype=np.float64)
        mx = np.asarray(self.maximum, dtype=np.float64)
        if mn.shape != (N_FEATURES,) or mx.shape != (N_FEATURES,):
            raise ValidationError(f"stats must have {N_FEATURES} entries per side")
        if np.any(mn > mx):
            raise ValidationError("per-feature minimum must not exceed maximum")
        object.__setattr__(self, "minimum", mn)
        object.__setattr__(self, "maximum", mx)


# Categorical code tables map column name -> {raw string -> integer code}.
CodeTable = dict[str, dict[str, int]]


def parse_dataset(
    csv_text: str,
    schema: FeatureSchema,
    split: str = "train",
    codes: CodeTable | None = None,
) -> tuple[Dataset, CodeTable]:
    """Parse CSV text into a Dataset plus the categorical code table used.

    The header row must equal the schema's feature names followed by
    "label". Categorical columns are mapped to integer codes assigned in
    first-appearance order; pass the training split's table back in when
    parsing the test split so codes stay stable across files.
    """
    codes = {col: dict(codes.get(col, {})) if codes else {} for col in schema.categorical}
    reader = csv.reader(io.StringIO(csv_text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(1, "empty file") from None
    expected = list(schema.feature_names) + ["label"]
    if [h.strip() for h in header] != expected:
        raise ParseError(1, f"header does not match schema (expected {','.join(expected)})")

    categorical_idx = {schema.feature_names.index(c): c for c in schema.categorical}
    label_to_idx = {name: i for i, name in enumerate(schema.class_names)}

    rows: list[list[float]] = []
    labels: list[int] = []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != N_FEATURES + 1:
            raise ParseError(line_no, f"expected {N_FEATURES + 1} fields, got {len(row)}")
        values = []
        for j in range(N_FEATURES):
            raw = row[j].strip()
            if j in categorical_idx:
                table = codes[categorical_idx[j]]
                if raw not in table:
                    table[raw] = len(table)
                values.append(float(table[raw]))
            else:
                try:
                    v = float(raw)
                except ValueError:
                    raise ParseError(line_no, f"non-numeric value {raw!r} in column "
                                              f"{schema.feature_names[j]!r}") from None
                if not np.isfinite(v):
                    raise ParseError(line_no, f"non-finite value {raw!r} in column "
                                              f"{schema.feature_names[j]!r}")
                values.append(v)
        label_raw = row[N_FEATURES].strip()
        if label_raw not in label_to_idx:
            raise LabelError(line_no, label_raw)
        rows.append(values)
        labels.append(label_to_idx[label_raw])

    if not rows:
        raise ParseError(2, "no data rows")
    return Dataset(schema, np.array(rows), np.array(labels), split=split), codes


def format_code_table(codes: CodeTable) -> str:
    """Sidecar text of "column,raw_value,code" triples, one per line."""
    lines = []
    for col in sorted(codes):
        for raw, code in sorted(codes[col].items(), key=lambda kv: kv[1]):
            lines.append(f"{col},{raw},{code}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_code_table(text: str) -> CodeTable:
    codes: CodeTable = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        col, raw, code = line.split(",", 2)
        codes.setdefault(col, {})[raw] = int(code)
    return codes


def normalize(dataset: Dataset, stats: NormStats | None = None) -> tuple[Dataset, NormStats]:
    """Min-max scale each feature to [0, 1].

    When stats are supplied (test split) they are reused instead of being
    recomputed, so test values may fall outside [0, 1]. Constant features
    map to 0.
    """
    if stats is None:
        stats = NormStats(dataset.features.min(axis=0), dataset.features.max(axis=0))
    span = stats.maximum - stats.minimum
    scaled = np.where(span > 0, (dataset.features - stats.minimum) / np.where(span > 0, span, 1.0), 0.0)
    return Dataset(dataset.schema, scaled, dataset.labels, split=dataset.split), stats


def partition(dataset: Dataset, n_clusters: int, per_cluster: int, seed: int) -> list[ClusterDataset]:
    """Disjoint uniform-random shards of `per_cluster` samples each."""
    if n_clusters < 1 or per_cluster < 1:
        raise ValidationError("n_clusters and per_cluster must be positive")
    need = n_clusters * per_cluster
    if need > len(dataset):
        raise CapacityError(
            f"partition needs {need} samples ({n_clusters} x {per_cluster}) "
            f"but dataset has {len(dataset)}"
        )
    rng = derive_rng(seed, DOMAIN_PARTITION)
    order = rng.permutation(len(dataset))[:need]
    shards = []
    for i in range(n_clusters):
        idx = order[i * per_cluster:(i + 1) * per_cluster]
        shard = Dataset(
            dataset.schema,
            dataset.features[idx].copy(),
            dataset.labels[idx].copy(),
            split=dataset.split,
        )
        shards.append(ClusterDataset(i, shard))
    return shards


def generate_synthetic(
    n_per_class: int,
    class_separation: float,
    seed: int,
    split: str = "train",
    schema: FeatureSchema | None = None,
) -> Dataset:
    """Balanced 5-class spherical Gaussian mixture in 21 dimensions.

    Each class mean is a fixed standard-normal draw scaled by
    `class_separation`; spread is unit-variance spherical. The result is
    min-max normalized over the generated samples. Class means depend only
    on the seed, not on n_per_class.
    """
    if n_per_class < 1:
        raise ValidationError("n_per_class must be positive")
    if class_separation < 0:
        raise ValidationError("class_separation must be >= 0")
    # synthetic features are continuous, so no column is categorical
    schema = schema or FeatureSchema()
    means = derive_rng(seed, DOMAIN_SYNTH_MEANS).standard_normal((N_CLASSES, N_FEATURES))
    means *= class_separation
    spread = derive_rng(seed, DOMAIN_SYNTH_SPREAD).standard_normal(
        (N_CLASSES, n_per_class, N_FEATURES)
    )
    feats = (means[:, None, :] + spread).reshape(N_CLASSES * n_per_class, N_FEATURES)
    labels = np.repeat(np.arange(N_CLASSES, dtype=np.int64), n_per_class)
    raw = Dataset(schema, feats, labels, split=split)
    normalized, _ = normalize(raw)
    return normalized


def generate_synthetic_split(
    train_per_class: int,
    test_per_class: int,
    class_separation: float,
    seed: int,
    schema: FeatureSchema | None = None,
) -> tuple[Dataset, Dataset]:
    """Train/test pair drawn from one mixture, normalized together."""
    total = generate_synthetic(
        train_per_class + test_per_class, class_separation, seed, schema=schema
    )
    per = train_per_class + test_per_class
    train_idx, test_idx = [], []
    for c in range(N_CLASSES):
        start = c * per
        train_idx.extend(range(start, start + train_per_class))
        test_idx.extend(range(start + train_per_class, start + per))
    train = Dataset(total.schema, total.features[train_idx], total.labels[train_idx], split="train")
    test = Dataset(total.schema, total.features[test_idx], total.labels[test_idx], split="test")
    return train, test


def format_dataset_csv(dataset: Dataset) -> str:
    """CSV text with the schema header and 17-significant-digit floats."""
    out = io.StringIO()
    out.write(",".join(list(dataset.schema.feature_names) + ["label"]) + "\n")
    names = dataset.schema.class_names
    for row, label in zip(dataset.features, dataset.labels):
        out.write(",".join(fmt_float(v) for v in row))
        out.write(f",{names[label]}\n")
    return out.getvalue()


def write_dataset_csv(dataset: Dataset, path: Path) -> None:
    Path(path).write_text(format_dataset_csv(dataset), encoding="utf-8", newline="\n")


def load_dataset_csv(
    path: Path,
    schema: FeatureSchema | None = None,
    split: str = "train",
    codes: CodeTable | None = None,
) -> tuple[Dataset, CodeTable]:
    schema = schema or default_schema()
    text = Path(path).read_text(encoding="utf-8")
    return parse_dataset(text, schema, split=split, codes=codes)
