"""Round-based federated training with clipping, noise, and aggregation.

Each round every cluster pulls the global model, takes one SGD step on a
private batch, clips the resulting update, re-applies it, perturbs the
result with freshly sampled noise, and sends it to the coordinator. The
coordinator averages the perturbed models in ascending cluster order
(fixed summation order, so results are bit-identical regardless of thread
count) and broadcasts the new global model.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import dp
from .accountant import all_budgets
from .data import ClusterDataset, Dataset, normalize, partition
from .dp import DpConfig, Mechanism, NoiseScale
from .errors import DivergenceError, NonFiniteError, ValidationError
from .metrics import accuracy, confusion, macro_precision, macro_recall, tail_average
from .mlp import (
    ACTIVATIONS,
    LayerShape,
    ModelParams,
    init_model,
    loss_and_gradient,
    param_delta,
    predict,
    sgd_step,
)
from .seeds import DOMAIN_BATCH, DOMAIN_NOISE, derive_rng


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one training run depends on."""

    shape: LayerShape
    dp: DpConfig
    n_clusters: int
    max_rounds: int
    batch_size: int
    per_cluster: int
    master_seed: int
    eval_every: int = 1
    tail_window: int = 100
    activation: str = "relu"
    per_cluster_norm: bool = False
    eval_per_cluster: bool = False
    delta_slack: float | None = None

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ValidationError("n_clusters must be >= 1")
        if self.max_rounds < 1:
            raise ValidationError("max_rounds must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.per_cluster < 1:
            raise ValidationError("per_cluster must be >= 1")
        if self.master_seed < 0:
            raise ValidationError("master_seed must be >= 0")
        if self.eval_every < 1:
            raise ValidationError("eval_every must be >= 1")
        if not (1 <= self.tail_window <= self.max_rounds):
            raise ValidationError("tail_window must lie in [1, max_rounds]")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"activation must be one of {ACTIVATIONS}")
        if self.delta_slack is not None and self.delta_slack < 0:
            raise ValidationError("delta_slack must be >= 0")

    def as_dict(self) -> dict:
        return {
            "shape": list(self.shape.sizes),
            "dp": {
                "mechanism": self.dp.mechanism.value,
                "epsilon": "inf" if math.isinf(self.dp.epsilon) else self.dp.epsilon,
                "delta": self.dp.delta,
                "clip_norm": "inf" if math.isinf(self.dp.clip_norm) else self.dp.clip_norm,
                "learning_rate": self.dp.learning_rate,
                "dataset_size": self.dp.dataset_size,
                "batch_fraction": self.dp.batch_fraction,
                "max_rounds": self.dp.max_rounds,
            },
            "n_clusters": self.n_clusters,
            "max_rounds": self.max_rounds,
            "batch_size": self.batch_size,
            "per_cluster": self.per_cluster,
            "master_seed": self.master_seed,
            "eval_every": self.eval_every,
            "tail_window": self.tail_window,
            "activation": self.activation,
            "per_cluster_norm": self.per_cluster_norm,
            "eval_per_cluster": self.eval_per_cluster,
            "delta_slack": self.delta_slack,
        }


@dataclass
class ClusterState:
    """One participant: its shard and current local model."""

    cluster_id: int
    data: ClusterDataset
    params: ModelParams


@dataclass(frozen=True)
class RoundRecord:
    iteration: int
    accuracy: float
    macro_precision: float
    macro_recall: float
    mean_loss: float
    elapsed_ms: float


@dataclass(frozen=True)
class ExperimentResult:
    records: list[RoundRecord]
    final_params: ModelParams
    tail_accuracy: float
    tail_precision: float
    tail_recall: float
    tail_loss: float
    budgets: dict
    noise_scale: NoiseScale
    total_wallclock_ms: float
    final_confusion: np.ndarray
    per_cluster_accuracy: list[float] | None
    config: ExperimentConfig


def local_round(
    state: ClusterState,
    global_params: ModelParams,
    cfg: ExperimentConfig,
    round_index: int,
    scale: NoiseScale | None = None,
) -> tuple[np.ndarray, float]:
    """One cluster's contribution for a round.

    Returns the perturbed flat parameter vector and the batch loss. The
    cluster keeps its pre-noise parameters. The batch and noise streams
    are keyed by (master_seed, cluster_id, round_index) so the result does
    not depend on scheduling.
    """
    if scale is None:
        scale = dp.noise_scale_for(cfg.dp)
    shard = state.data.dataset
    batch_rng = derive_rng(cfg.master_seed, DOMAIN_BATCH, state.cluster_id, round_index)
    k = min(cfg.batch_size, len(shard))
    idx = batch_rng.choice(len(shard), size=k, replace=False)

    loss, grad = loss_and_gradient(
        global_params, shard.features[idx], shard.labels[idx], cfg.activation
    )
    stepped = sgd_step(global_params, grad, cfg.dp.learning_rate)
    delta = param_delta(stepped, global_params)
    clipped = dp.clip_update(delta, cfg.dp.clip_norm)
    theta = ModelParams(cfg.shape, global_params.values + clipped)

    noise_rng = derive_rng(cfg.master_seed, DOMAIN_NOISE, state.cluster_id, round_index)
    noise = dp.sample_noise(cfg.dp.mechanism, scale, theta.values.shape[0], noise_rng)
    gamma = theta.values + noise

    state.params = theta
    return gamma, loss


def aggregate(updates: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise mean, summed sequentially in the given (cluster) order.

    Bit-identical updates short-circuit to an exact copy: the mean of k
    equal vectors is that vector, but (k*v)/k can round for odd k.
    """
    if len(updates) == 0:
        raise ValidationError("aggregate needs at least one update")
    first = np.asarray(updates[0], dtype=np.float64)
    rest = [np.asarray(u, dtype=np.float64) for u in updates[1:]]
    for u in rest:
        if u.shape != first.shape:
            raise ValidationError("updates must share one layout")
    if all(np.array_equal(u, first) for u in rest):
        return first.copy()
    total = first.copy()
    for u in rest:
        total += u
    return total / len(updates)


def run_experiment(
    cfg: ExperimentConfig,
    train: Dataset,
    test: Dataset,
    threads: int = 1,
    on_record: Callable[[RoundRecord], None] | None = None,
) -> ExperimentResult:
    """Train for max_rounds and evaluate the global model on `test`.

    Evaluation happens every eval_every rounds and always at the final
    round. Tail metrics average the records whose iteration lies in the
    last tail_window iterations.
    """
    if threads < 1:
        raise ValidationError("threads must be >= 1")
    clusters = partition(train, cfg.n_clusters, cfg.per_cluster, cfg.master_seed)
    if cfg.per_cluster_norm:
        clusters = [
            ClusterDataset(c.cluster_id, normalize(c.dataset)[0]) for c in clusters
        ]
    global_params = init_model(cfg.shape, cfg.master_seed)
    states = [ClusterState(c.cluster_id, c, global_params) for c in clusters]
    scale = dp.noise_scale_for(cfg.dp)
    n_classes = cfg.shape.n_outputs

    records: list[RoundRecord] = []
    final_cm = None
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    start = time.perf_counter()
    try:
        for i in range(1, cfg.max_rounds + 1):
            try:
                if pool is not None:
                    results = list(
                        pool.map(
                            lambda s: local_round(s, global_params, cfg, i, scale), states
                        )
                    )
                else:
                    results = [local_round(s, global_params, cfg, i, scale) for s in states]
                merged = aggregate([gamma for gamma, _ in results])
            except NonFiniteError:
                raise DivergenceError(i) from None
            if not np.isfinite(merged).all():
                raise DivergenceError(i)
            global_params = ModelParams(cfg.shape, merged)

            if i % cfg.eval_every == 0 or i == cfg.max_rounds:
                preds = predict(global_params, test.features, cfg.activation)
                cm = confusion(preds, test.labels, n_classes)
                record = RoundRecord(
                    iteration=i,
                    accuracy=accuracy(cm),
                    macro_precision=macro_precision(cm),
                    macro_recall=macro_recall(cm),
                    mean_loss=float(np.mean([loss for _, loss in results])),
                    elapsed_ms=(time.perf_counter() - start) * 1e3,
                )
                records.append(record)
                if i == cfg.max_rounds:
                    final_cm = cm
                if on_record is not None:
                    on_record(record)
    finally:
        if pool is not None:
            pool.shutdown()
    total_ms = (time.perf_counter() - start) * 1e3

    tail = [r for r in records if r.iteration > cfg.max_rounds - cfg.tail_window]
    n_tail = len(tail)
    tail_acc = tail_average([r.accuracy for r in tail], n_tail)
    tail_prec = tail_average([r.macro_precision for r in tail], n_tail)
    tail_rec = tail_average([r.macro_recall for r in tail], n_tail)
    tail_loss = tail_average([r.mean_loss for r in tail], n_tail)

    if cfg.dp.mechanism is Mechanism.NONE:
        budgets: dict = {
            "parallel": None,
            "naive_sequential": None,
            "advanced": None,
            "note": "no noise mechanism: no privacy guarantee to compose",
        }
    else:
        slack = cfg.delta_slack if cfg.delta_slack is not None else cfg.dp.delta
        budgets = all_budgets(
            cfg.dp.epsilon, cfg.dp.delta, cfg.n_clusters, cfg.max_rounds, slack
        )

    per_cluster_acc = None
    if cfg.eval_per_cluster:
        per_cluster_acc = []
        for state in states:
            preds = predict(state.params, test.features, cfg.activation)
            per_cluster_acc.append(accuracy(confusion(preds, test.labels, n_classes)))
    return ExperimentResult(
        records=records,
        final_params=global_params,
        tail_accuracy=tail_acc,
        tail_precision=tail_prec,
        tail_recall=tail_rec,
        tail_loss=tail_loss,
        budgets=budgets,
        noise_scale=scale,
        total_wallclock_ms=total_ms,
        final_confusion=final_cm.counts if final_cm is not None else None,
        per_cluster_accuracy=per_cluster_acc,
        config=cfg,
    )
