"""Small feed-forward classifier on flat parameter vectors.

The architecture is fixed in kind — ReLU hidden layers, softmax output,
categorical cross-entropy — with the layer widths configurable.  Parameters
live in a single float64 vector so that federated averaging is plain vector
arithmetic; training is epoch-wise minibatch SGD with analytic gradients.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from segfl.flowdata import LabeledDataset

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN = (64, 32)
N_CLASSES = 3


@dataclass(frozen=True)
class LayerSpec:
    """Layer widths: input width, hidden widths, one output unit per class."""

    input_dim: int
    hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN
    output_dim: int = N_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"all layer dims must be >= 1, got {self.dims}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def n_params(self) -> int:
        dims = self.dims
        return sum((dims[i] + 1) * dims[i + 1] for i in range(len(dims) - 1))


@dataclass
class ModelParams:
    """Flat float64 parameter vector laid out layer by layer (weights, then bias)."""

    flat: np.ndarray
    spec: LayerSpec

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.spec.n_params,):
            raise ValueError(
                f"flat vector has {self.flat.shape}, spec {self.spec.dims} "
                f"needs ({self.spec.n_params},)"
            )

    def copy(self) -> "ModelParams":
        return ModelParams(self.flat.copy(), self.spec)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    batch_size: int = 128
    learning_rate: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")


def _layer_views(flat: np.ndarray, spec: LayerSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """Reshape the flat vector into per-layer (weights, bias) views."""
    dims = spec.dims
    layers = []
    offset = 0
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        w = flat[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = flat[offset : offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def init_params(spec: LayerSpec, seed: int = 0) -> ModelParams:
    """Uniform Glorot weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    rng = np.random.default_rng(seed)
    flat = np.zeros(spec.n_params, dtype=np.float64)
    for w, _ in _layer_views(flat, spec):
        fan_in, fan_out = w.shape
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w[:] = rng.uniform(-bound, bound, size=w.shape)
    return ModelParams(flat, spec)


def _forward_cached(flat, spec, features):
    """Forward pass keeping the post-ReLU activations for backprop."""
    layers = _layer_views(flat, spec)
    activations = [np.asarray(features, dtype=np.float64)]
    for w, b in layers[:-1]:
        activations.append(np.maximum(activations[-1] @ w + b, 0.0))
    w_out, b_out = layers[-1]
    logits = activations[-1] @ w_out + b_out
    return activations, logits


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def forward(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Class probabilities, one row per sample; rows sum to 1."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.spec.input_dim:
        raise ValueError(
            f"features shape {features.shape} does not match input_dim {params.spec.input_dim}"
        )
    _, logits = _forward_cached(params.flat, params.spec, features)
    return _softmax(logits)


def predict(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Argmax class per row; probability ties go to the lower class code."""
    return np.argmax(forward(params, features), axis=1).astype(np.int64)


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    # log-sum-exp form: never exponentiates anything above zero.
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(len(labels)), labels]
    return float(np.mean(log_norm - picked))


def mean_loss(params: ModelParams, data: LabeledDataset) -> float:
    """Mean categorical cross-entropy over the dataset."""
    _, logits = _forward_cached(params.flat, params.spec, data.features)
    return _cross_entropy(logits, data.labels)


def loss_and_grad(
    params: ModelParams, features: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient as a flat vector.

    Args:
        params: current model parameters.
        features: (n, input_dim) float matrix.
        labels: (n,) int vector of class codes in [0, output_dim).

    Returns:
        (loss, grad) where grad has the same layout and length as params.flat.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(features) == 0:
        raise ValueError("cannot compute a gradient on zero samples")
    if labels.min() < 0 or labels.max() >= params.spec.output_dim:
        raise ValueError("labels out of range for output_dim")

    spec = params.spec
    activations, logits = _forward_cached(params.flat, spec, features)
    loss = _cross_entropy(logits, labels)

    n = len(labels)
    delta = _softmax(logits)
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    grad = np.zeros_like(params.flat)
    grad_layers = _layer_views(grad, spec)
    layers = _layer_views(params.flat, spec)
    for i in range(len(layers) - 1, -1, -1):
        gw, gb = grad_layers[i]
        gw[:] = activations[i].T @ delta
        gb[:] = delta.sum(axis=0)
        if i > 0:
            w, _ = layers[i]
            delta = (delta @ w.T) * (activations[i] > 0)
    return loss, grad


def train_local(params: ModelParams, data: LabeledDataset, config: TrainConfig) -> ModelParams:
    """Epoch-wise minibatch SGD; functional, the input params are untouched.

    Each epoch shuffles the sample order under the config seed and walks the
    permutation in batches of ``batch_size`` (last batch may be short).
    """
    if data.sample_count == 0:
        logger.warning("train_local called with empty data; params returned unchanged")
        return params.copy()
    rng = np.random.default_rng(config.seed)
    flat = params.flat.copy()
    n = data.sample_count
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            _, grad = loss_and_grad(
                ModelParams(flat, params.spec), data.features[batch], data.labels[batch]
            )
            flat -= config.learning_rate * grad
    return ModelParams(flat, params.spec)


# Binary layout: int32 dim count, int32 dims, uint64 vector length, float64
# payload — everything little-endian.
_HEADER_COUNT = struct.Struct("<i")
_HEADER_LEN = struct.Struct("<Q")


def write_params(params: ModelParams, path) -> None:
    dims = params.spec.dims
    with open(path, "wb") as fh:
        fh.write(_HEADER_COUNT.pack(len(dims)))
        fh.write(struct.pack(f"<{len(dims)}i", *dims))
        fh.write(_HEADER_LEN.pack(len(params.flat)))
        fh.write(params.flat.astype("<f8").tobytes())


def read_params(path) -> ModelParams:
    with open(path, "rb") as fh:
        raw = fh.read()
    (n_dims,) = _HEADER_COUNT.unpack_from(raw, 0)
    if n_dims < 2:
        raise ValueError(f"corrupt params file: {n_dims} dims")
    dims = struct.unpack_from(f"<{n_dims}i", raw, _HEADER_COUNT.size)
    offset = _HEADER_COUNT.size + 4 * n_dims
    (length,) = _HEADER_LEN.unpack_from(raw, offset)
    offset += _HEADER_LEN.size
    flat = np.frombuffer(raw, dtype="<f8", count=length, offset=offset).astype(np.float64)
    spec = LayerSpec(input_dim=dims[0], hidden_dims=tuple(dims[1:-1]), output_dim=dims[-1])
    if length != spec.n_params:
        raise ValueError(f"corrupt params file: {length} values for dims {dims}")
    return ModelParams(flat, spec)
