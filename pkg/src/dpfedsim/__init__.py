"""Deterministic simulator of differentially private federated learning
for multiclass network-attack detection."""

from .accountant import PrivacyBudget, compose_advanced, compose_naive, compose_parallel
from .data import (
    ClusterDataset,
    Dataset,
    FeatureSchema,
    NormStats,
    default_schema,
    generate_synthetic,
    normalize,
    parse_dataset,
    partition,
)
from .dp import (
    DpConfig,
    Mechanism,
    NoiseScale,
    clip_update,
    gaussian_sigma,
    laplace_scale,
    ma_sigma,
    noise_scale_for,
    perturb,
    sample_noise,
    sensitivity,
)
from .errors import (
    CapacityError,
    DivergenceError,
    LabelError,
    NonFiniteError,
    ParseError,
    ValidationError,
)
from .federation import (
    ClusterState,
    ExperimentConfig,
    ExperimentResult,
    RoundRecord,
    aggregate,
    local_round,
    run_experiment,
)
from .metrics import (
    ConfusionMatrix,
    accuracy,
    confusion,
    macro_precision,
    macro_recall,
    tail_average,
)
from .mlp import (
    LayerShape,
    ModelParams,
    forward,
    init_model,
    load_checkpoint,
    loss_and_gradient,
    param_delta,
    predict,
    save_checkpoint,
    sgd_step,
)

__version__ = "0.1.0"
