"""From-scratch multilayer perceptron on flat parameter vectors.

The canonical flat layout is part of the public contract: for each layer
in order, the weight matrix (fan_in x fan_out, row-major) followed by the
bias vector. The privacy and federation layers operate directly on these
flat vectors.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NonFiniteError, ValidationError
from .seeds import DOMAIN_INIT, derive_rng

ACTIVATIONS = ("relu", "tanh")

CHECKPOINT_MAGIC = b"DPFM"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerShape:
    """Ordered layer widths, e.g. (21, 128, 128, 5)."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) < 2:
            raise ValidationError("shape needs at least input and output layers")
        if any(s < 1 for s in sizes):
            raise ValidationError("all layer widths must be >= 1")
        object.__setattr__(self, "sizes", sizes)

    @property
    def n_inputs(self) -> int:
        return self.sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.sizes[-1]

    def layer_dims(self) -> list[tuple[int, int]]:
        return list(zip(self.sizes[:-1], self.sizes[1:]))

    def num_params(self) -> int:
        return sum(m * n + n for m, n in self.layer_dims())


@dataclass(frozen=True)
class ModelParams:
    """Flat float64 parameter vector in the canonical layout."""

    shape: LayerShape
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (self.shape.num_params(),):
            raise ValidationError(
                f"expected {self.shape.num_params()} values for shape "
                f"{self.shape.sizes}, got {values.shape}"
            )
        if not np.isfinite(values).all():
            raise NonFiniteError("parameter values must be finite")
        object.__setattr__(self, "values", values)


def unflatten(shape: LayerShape, values: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """(weight, bias) views per layer; no copies."""
    layers = []
    offset = 0
    for m, n in shape.layer_dims():
        w = values[offset:offset + m * n].reshape(m, n)
        offset += m * n
        b = values[offset:offset + n]
        offset += n
        layers.append((w, b))
    return layers


def flatten(shape: LayerShape, layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    parts = []
    for (m, n), (w, b) in zip(shape.layer_dims(), layers):
        if w.shape != (m, n) or b.shape != (n,):
            raise ValidationError("layer arrays do not match shape")
        parts.append(np.asarray(w, dtype=np.float64).reshape(-1))
        parts.append(np.asarray(b, dtype=np.float64))
    return np.concatenate(parts)


def init_model(shape: LayerShape, seed: int) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = derive_rng(seed, DOMAIN_INIT)
    values = np.zeros(shape.num_params())
    for w, b in unflatten(shape, values):
        limit = 1.0 / np.sqrt(w.shape[0])
        w[:] = rng.uniform(-limit, limit, size=w.shape)
        b[:] = 0.0
    return ModelParams(shape, values)


def _check_activation(activation: str) -> None:
    if activation not in ACTIVATIONS:
        raise ValidationError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")


def _hidden(x: np.ndarray, activation: str) -> np.ndarray:
    return np.maximum(x, 0.0) if activation == "relu" else np.tanh(x)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_cached(params: ModelParams, x: np.ndarray, activation: str):
    """Probabilities plus the post-activation outputs of every layer.

    Overflow is not trapped here: diverging parameter values are allowed
    to propagate as inf/nan and are reported by the training loop.
    """
    layers = unflatten(params.shape, params.values)
    with np.errstate(over="ignore", invalid="ignore"):
        cache = [x]
        h = x
        for w, b in layers[:-1]:
            h = _hidden(h @ w + b, activation)
            cache.append(h)
        w_out, b_out = layers[-1]
        probs = _softmax(h @ w_out + b_out)
    return probs, cache


def _as_batch(params: ModelParams, features: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.shape.n_inputs:
        raise ValidationError(
            f"features must have {params.shape.n_inputs} columns, got shape {x.shape}"
        )
    return x, single


def forward(params: ModelParams, features: np.ndarray, activation: str = "relu") -> np.ndarray:
    """Class probability vector(s): hidden layers then softmax output."""
    _check_activation(activation)
    x, single = _as_batch(params, features)
    probs, _ = _forward_cached(params, x, activation)
    return probs[0] if single else probs


def loss_and_gradient(
    params: ModelParams,
    features: np.ndarray,
    labels: np.ndarray,
    activation: str = "relu",
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its exact gradient.

    The loss is computed in log-sum-exp form so large logits cannot
    overflow.
    """
    _check_activation(activation)
    x, _ = _as_batch(params, features)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.shape[0] != x.shape[0]:
        raise ValidationError("labels must be one per sample")
    if y.size == 0:
        raise ValidationError("batch must be nonempty")
    n_out = params.shape.n_outputs
    if y.min() < 0 or y.max() >= n_out:
        raise ValidationError(f"labels must lie in [0, {n_out})")

    layers = unflatten(params.shape, params.values)
    with np.errstate(over="ignore", invalid="ignore"):
        cache = [x]
        h = x
        for w, b in layers[:-1]:
            h = _hidden(h @ w + b, activation)
            cache.append(h)
        w_out, b_out = layers[-1]
        logits = h @ w_out + b_out

        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        z = e.sum(axis=1)
        batch = x.shape[0]
        loss = float(np.mean(np.log(z) - shifted[np.arange(batch), y]))

        delta = e / z[:, None]
        delta[np.arange(batch), y] -= 1.0
        delta /= batch

        grad = np.zeros_like(params.values)
        grad_layers = unflatten(params.shape, grad)
        for i in range(len(layers) - 1, -1, -1):
            gw, gb = grad_layers[i]
            gw[:] = cache[i].T @ delta
            gb[:] = delta.sum(axis=0)
            if i > 0:
                w, _ = layers[i]
                delta = delta @ w.T
                if activation == "relu":
                    delta = delta * (cache[i] > 0)
                else:
                    delta = delta * (1.0 - cache[i] ** 2)
    return loss, grad


def sgd_step(params: ModelParams, grad: np.ndarray, mu: float) -> ModelParams:
    """One gradient-descent update: values - mu * grad."""
    if not (mu > 0 and np.isfinite(mu)):
        raise ValidationError(f"learning rate must be positive and finite, got {mu}")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.values.shape:
        raise ValidationError("gradient layout does not match parameters")
    return ModelParams(params.shape, params.values - mu * grad)


def predict(params: ModelParams, features: np.ndarray, activation: str = "relu"):
    """Argmax class index; ties break toward the lowest index."""
    probs = forward(params, features, activation)
    return np.argmax(probs, axis=-1)


def param_delta(new: ModelParams, old: ModelParams) -> np.ndarray:
    """Elementwise difference new - old in the flat layout."""
    if new.shape.sizes != old.shape.sizes:
        raise ValidationError("parameter layouts do not match")
    return new.values - old.values


def save_checkpoint(params: ModelParams, path: Path) -> None:
    """Binary checkpoint: magic, version, layer sizes, little-endian f64 values."""
    sizes = params.shape.sizes
    header = CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(sizes))
    header += struct.pack(f"<{len(sizes)}I", *sizes)
    body = np.ascontiguousarray(params.values, dtype="<f8").tobytes()
    Path(path).write_bytes(header + body)


def load_checkpoint(path: Path) -> ModelParams:
    blob = Path(path).read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValidationError(f"{path}: not a model checkpoint")
    version, n_sizes = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    sizes = struct.unpack_from(f"<{n_sizes}I", blob, 12)
    shape = LayerShape(sizes)
    offset = 12 + 4 * n_sizes
    values = np.frombuffer(blob, dtype="<f8", offset=offset)
    if values.shape[0] != shape.num_params():
        raise ValidationError(f"{path}: truncated checkpoint")
    return ModelParams(shape, values.astype(np.float64))
