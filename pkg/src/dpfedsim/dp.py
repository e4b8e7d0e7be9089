"""Update clipping, noise calibration, and noise sampling.

Three mechanisms are supported on top of a shared L2 clipping rule:

* Gaussian:            c = dt * sqrt(2 ln(1.25/delta)) / epsilon
* Laplace:             b = dt / epsilon
* Moments-accountant:  c = dt * sqrt(2 q T ln(1/delta)) / epsilon

where dt = 2 * mu * clip_norm / dataset_size is the per-round sensitivity
of the clipped update. "No noise" is modelled as an explicit NONE
mechanism rather than a numeric infinite epsilon, so nothing downstream
has to reason about inf arithmetic.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, ValidationError
from .mlp import ModelParams


class Mechanism(enum.Enum):
    NONE = "none"
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"
    MOMENTS_ACCOUNTANT = "ma"

    @classmethod
    def parse(cls, text: str) -> "Mechanism":
        key = text.strip().lower()
        aliases = {
            "none": cls.NONE,
            "gaussian": cls.GAUSSIAN,
            "laplace": cls.LAPLACE,
            "ma": cls.MOMENTS_ACCOUNTANT,
            "moments_accountant": cls.MOMENTS_ACCOUNTANT,
        }
        if key not in aliases:
            raise ValidationError(f"unknown mechanism {text!r} (expected one of {sorted(aliases)})")
        return aliases[key]


@dataclass(frozen=True)
class DpConfig:
    """Mechanism choice plus every calibration input."""

    mechanism: Mechanism
    epsilon: float
    delta: float
    clip_norm: float
    learning_rate: float
    dataset_size: int
    batch_fraction: float
    max_rounds: int

    def __post_init__(self):
        if self.mechanism is Mechanism.NONE:
            if not (self.epsilon > 0):
                raise ValidationError("epsilon must be positive")
        else:
            if not (0 < self.epsilon < math.inf):
                raise ValidationError(
                    "epsilon must be positive and finite (epsilon = inf means mechanism none)"
                )
            if not (0 < self.clip_norm < math.inf):
                raise ValidationError("clip_norm must be positive and finite")
        if not (0 < self.delta < 1):
            raise ValidationError("delta must lie in (0, 1)")
        if not (self.clip_norm > 0):
            raise ValidationError("clip_norm must be positive")
        if not (0 < self.learning_rate < math.inf):
            raise ValidationError("learning_rate must be positive and finite")
        if self.dataset_size < 1:
            raise ValidationError("dataset_size must be positive")
        if not (0 < self.batch_fraction <= 1):
            raise ValidationError("batch_fraction must lie in (0, 1]")
        if self.max_rounds < 1:
            raise ValidationError("max_rounds must be positive")


@dataclass(frozen=True)
class NoiseScale:
    """Standard deviation (Gaussian family) or scale b (Laplace)."""

    value: float
    mechanism: Mechanism

    def __post_init__(self):
        if not (self.value >= 0):
            raise ValidationError("noise scale must be >= 0")
        if self.mechanism is Mechanism.NONE and self.value != 0:
            raise ValidationError("mechanism none implies zero scale")


def clip_update(delta: np.ndarray, clip_norm: float) -> np.ndarray:
    """Rescale delta to L2 norm at most clip_norm, preserving direction."""
    if not (clip_norm > 0):
        raise ValidationError("clip_norm must be positive")
    delta = np.asarray(delta, dtype=np.float64)
    if not np.isfinite(delta).all():
        raise NonFiniteError("update vector must be finite")
    with np.errstate(over="ignore"):
        norm = float(np.linalg.norm(delta))
    if not math.isfinite(norm):
        # sum of squares overflowed; redo the arithmetic at unit scale
        amax = float(np.abs(delta).max())
        scaled = delta / amax
        snorm = float(np.linalg.norm(scaled))
        if snorm <= clip_norm / amax:
            return delta.copy()
        return scaled * (clip_norm / snorm)
    if norm == 0.0 or norm <= clip_norm:
        return delta.copy()
    return delta * (clip_norm / norm)


def sensitivity(mu: float, clip_norm: float, dataset_size: int) -> float:
    """Per-round sensitivity 2 * mu * clip_norm / dataset_size."""
    if not (mu > 0 and clip_norm > 0 and dataset_size > 0):
        raise ValidationError("mu, clip_norm, and dataset_size must be positive")
    if not (math.isfinite(mu) and math.isfinite(clip_norm)):
        raise ValidationError("mu and clip_norm must be finite")
    return 2.0 * mu * clip_norm / dataset_size


def gaussian_sigma(dt: float, epsilon: float, delta: float) -> NoiseScale:
    """Gaussian standard deviation dt * sqrt(2 ln(1.25/delta)) / epsilon."""
    _check_calibration(dt, epsilon)
    if not (0 < delta < 1):
        raise ValidationError("delta must lie in (0, 1)")
    value = dt * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon
    return NoiseScale(value, Mechanism.GAUSSIAN)


def laplace_scale(dt: float, epsilon: float) -> NoiseScale:
    """Laplace scale dt / epsilon."""
    _check_calibration(dt, epsilon)
    return NoiseScale(dt / epsilon, Mechanism.LAPLACE)


def ma_sigma(dt: float, epsilon: float, delta: float, q: float, rounds: int) -> NoiseScale:
    """Moments-accountant deviation dt * sqrt(2 q T ln(1/delta)) / epsilon."""
    _check_calibration(dt, epsilon)
    if not (0 < delta < 1):
        raise ValidationError("delta must lie in (0, 1)")
    if not (0 < q <= 1):
        raise ValidationError("batch fraction q must lie in (0, 1]")
    if rounds < 1:
        raise ValidationError("rounds must be >= 1")
    value = dt * math.sqrt(2.0 * q * rounds * math.log(1.0 / delta)) / epsilon
    return NoiseScale(value, Mechanism.MOMENTS_ACCOUNTANT)


def _check_calibration(dt: float, epsilon: float) -> None:
    if not (dt >= 0 and math.isfinite(dt)):
        raise ValidationError("sensitivity dt must be finite and >= 0")
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise ValidationError("epsilon must be positive and finite")


def noise_scale_for(cfg: DpConfig) -> NoiseScale:
    """Calibrated scale for a full configuration."""
    if cfg.mechanism is Mechanism.NONE:
        return NoiseScale(0.0, Mechanism.NONE)
    dt = sensitivity(cfg.learning_rate, cfg.clip_norm, cfg.dataset_size)
    if cfg.mechanism is Mechanism.GAUSSIAN:
        return gaussian_sigma(dt, cfg.epsilon, cfg.delta)
    if cfg.mechanism is Mechanism.LAPLACE:
        return laplace_scale(dt, cfg.epsilon)
    return ma_sigma(dt, cfg.epsilon, cfg.delta, cfg.batch_fraction, cfg.max_rounds)


def sample_noise(
    mechanism: Mechanism,
    scale: NoiseScale,
    dim: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """I.i.d. per-coordinate noise vector from the given stream."""
    if dim < 1:
        raise ValidationError("dim must be >= 1")
    if scale.mechanism is not mechanism:
        raise ValidationError(
            f"scale was calibrated for {scale.mechanism.value}, not {mechanism.value}"
        )
    if mechanism is Mechanism.NONE:
        return np.zeros(dim)
    if mechanism is Mechanism.LAPLACE:
        return rng.laplace(0.0, scale.value, size=dim) if scale.value > 0 else np.zeros(dim)
    return rng.normal(0.0, scale.value, size=dim) if scale.value > 0 else np.zeros(dim)


def perturb(params: ModelParams, noise: np.ndarray) -> ModelParams:
    """Add a noise vector to the flat parameter values."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != params.values.shape:
        raise ValidationError("noise length does not match parameter count")
    return ModelParams(params.shape, params.values + noise)
