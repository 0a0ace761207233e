"""Softmax classifier (optionally one tanh hidden layer), its loss, gradient and SGD."""

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from utils.errors import ConfigError, DimensionError, EmptyDataError, SerializationError

INIT_SCALE = 0.05
LAYOUT_VERSION = 1
MODEL_MAGIC = b"CFLM"
CONTAINER_MAGIC = b"CFLB"
_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    num_classes: int
    hidden_dim: int = 0

    def __post_init__(self):
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.hidden_dim < 0:
            raise ConfigError(f"hidden_dim must be >= 0, got {self.hidden_dim}")

    def layer_shapes(self) -> List[Tuple[int, int]]:
        """(fan_in, fan_out) per layer, input to output."""
        if self.hidden_dim == 0:
            return [(self.input_dim, self.num_classes)]
        return [(self.input_dim, self.hidden_dim), (self.hidden_dim, self.num_classes)]

    @property
    def num_params(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layer_shapes())


@dataclass(frozen=True)
class Model:
    """Model snapshot; params is a flat float64 vector (weights then biases, per layer)."""

    spec: ModelSpec
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        params = np.asarray(self.params, dtype=np.float64)
        if params.shape != (self.spec.num_params,):
            raise DimensionError(
                f"params length {params.shape} does not match spec layout ({self.spec.num_params},)"
            )
        object.__setattr__(self, "params", params)

    def with_params(self, params: np.ndarray) -> "Model":
        return Model(self.spec, params)


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_decay: float = 0.99
    decay_every: int = 20

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.decay_every < 1:
            raise ConfigError(f"decay_every must be >= 1, got {self.decay_every}")

    def lr_at(self, round_index: int) -> float:
        """Learning rate after the step decay for the given (1-based) round."""
        return self.learning_rate * self.lr_decay ** (max(round_index, 0) // self.decay_every)


def unflatten_params(spec: ModelSpec, params: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Split flat params into per-layer (W, b) views; W has shape (fan_in, fan_out)."""
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (spec.num_params,):
        raise DimensionError(f"params length {params.shape} does not match ({spec.num_params},)")
    layers = []
    offset = 0
    for fan_in, fan_out in spec.layer_shapes():
        weights = params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        bias = params[offset : offset + fan_out]
        offset += fan_out
        layers.append((weights, bias))
    return layers


def flatten_layers(layers: List[Tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Inverse of unflatten_params."""
    parts = []
    for weights, bias in layers:
        parts.append(np.asarray(weights, dtype=np.float64).ravel())
        parts.append(np.asarray(bias, dtype=np.float64).ravel())
    return np.concatenate(parts)


def zeros_model(spec: ModelSpec) -> Model:
    return Model(spec, np.zeros(spec.num_params))


def init_model(spec: ModelSpec, rng: np.random.Generator) -> Model:
    """Uniform(-INIT_SCALE, INIT_SCALE) initialization."""
    return Model(spec, rng.uniform(-INIT_SCALE, INIT_SCALE, size=spec.num_params))


def _as_batch(model: Model, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.spec.input_dim:
        raise DimensionError(
            f"features shape {np.shape(features)} does not match input_dim {model.spec.input_dim}"
        )
    return x


def _logits(model: Model, x: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    layers = unflatten_params(model.spec, model.params)
    if len(layers) == 1:
        weights, bias = layers[0]
        return x @ weights + bias, None
    (w1, b1), (w2, b2) = layers
    hidden = np.tanh(x @ w1 + b1)
    return hidden @ w2 + b2, hidden


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    return logits - logsumexp(logits, axis=1, keepdims=True)


def predict_proba(model: Model, features: np.ndarray) -> np.ndarray:
    """Class probabilities for a batch of rows."""
    x = _as_batch(model, features)
    logits, _ = _logits(model, x)
    return np.exp(_log_softmax(logits))


def forward(model: Model, x: np.ndarray) -> np.ndarray:
    """Class-probability vector for a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"forward expects one feature vector, got shape {x.shape}")
    return predict_proba(model, x)[0]


def predict(model: Model, features: np.ndarray) -> np.ndarray:
    x = _as_batch(model, features)
    logits, _ = _logits(model, x)
    return np.argmax(logits, axis=1)


def accuracy(model: Model, features: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EmptyDataError("accuracy of an empty dataset")
    return float(np.mean(predict(model, features) == labels))


def _check_batch(model: Model, features: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise EmptyDataError("empty batch")
    x = _as_batch(model, features)
    if x.shape[0] != labels.shape[0]:
        raise DimensionError(f"{x.shape[0]} rows but {labels.shape[0]} labels")
    if labels.min() < 0 or labels.max() >= model.spec.num_classes:
        raise DimensionError("label out of range for model num_classes")
    return x, labels


def loss(model: Model, features: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy (natural log) over the batch."""
    x, y = _check_batch(model, features, labels)
    logits, _ = _logits(model, x)
    log_probs = _log_softmax(logits)
    return float(-np.mean(log_probs[np.arange(y.size), y]))


def grad(model: Model, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of loss() w.r.t. params, in the flat params layout."""
    x, y = _check_batch(model, features, labels)
    n = y.size
    logits, hidden = _logits(model, x)
    delta = np.exp(_log_softmax(logits))
    delta[np.arange(n), y] -= 1.0
    delta /= n

    if hidden is None:
        return flatten_layers([(x.T @ delta, delta.sum(axis=0))])

    (_, _), (w2, _) = unflatten_params(model.spec, model.params)
    grad_w2 = hidden.T @ delta
    grad_b2 = delta.sum(axis=0)
    delta_hidden = (delta @ w2.T) * (1.0 - hidden**2)
    grad_w1 = x.T @ delta_hidden
    grad_b1 = delta_hidden.sum(axis=0)
    return flatten_layers([(grad_w1, grad_b1), (grad_w2, grad_b2)])


def sgd_step(
    model: Model,
    g: np.ndarray,
    cfg: SgdConfig,
    velocity: np.ndarray,
    learning_rate: Optional[float] = None,
) -> Tuple[Model, np.ndarray]:
    """
    One momentum SGD step with L2 weight decay.

    velocity <- momentum * velocity - lr * (g + weight_decay * params)
    params   <- params + velocity

    Args:
        model: Current model
        g: Gradient in the params layout
        cfg: Optimizer settings
        velocity: Momentum buffer in the params layout
        learning_rate: Overrides cfg.learning_rate (used for the decayed schedule)

    Returns:
        (updated model, updated velocity)
    """
    g = np.asarray(g, dtype=np.float64)
    velocity = np.asarray(velocity, dtype=np.float64)
    if g.shape != model.params.shape or velocity.shape != model.params.shape:
        raise DimensionError("gradient/velocity layout does not match params")
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    with np.errstate(over="raise", invalid="raise"):
        new_velocity = cfg.momentum * velocity - lr * (g + cfg.weight_decay * model.params)
        params = model.params + new_velocity
    return model.with_params(params), new_velocity


def serialized_size(spec: ModelSpec) -> int:
    """Bytes of serialize_model output for this spec."""
    return _HEADER.size + 8 * spec.num_params


def serialize_model(model: Model) -> bytes:
    """Header (magic, layout version, dims) followed by little-endian float64 params."""
    spec = model.spec
    header = _HEADER.pack(MODEL_MAGIC, LAYOUT_VERSION, spec.input_dim, spec.num_classes, spec.hidden_dim)
    return header + model.params.astype("<f8").tobytes()


def deserialize_model(payload: bytes) -> Model:
    if len(payload) < _HEADER.size:
        raise SerializationError("payload shorter than model header")
    magic, version, input_dim, num_classes, hidden_dim = _HEADER.unpack_from(payload, 0)
    if magic != MODEL_MAGIC:
        raise SerializationError(f"bad model magic {magic!r}")
    if version != LAYOUT_VERSION:
        raise SerializationError(f"unsupported layout version {version}")
    spec = ModelSpec(input_dim, num_classes, hidden_dim)
    body = payload[_HEADER.size :]
    if len(body) != 8 * spec.num_params:
        raise SerializationError(f"expected {8 * spec.num_params} param bytes, got {len(body)}")
    return Model(spec, np.frombuffer(body, dtype="<f8").astype(np.float64))


def save_models(path: Path, models: Dict[str, Model]) -> Path:
    """
    Write several named models into one container file.

    Layout: magic, model count, then per model a length-prefixed UTF-8 name
    and a length-prefixed serialize_model payload (all lengths uint32 LE).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [CONTAINER_MAGIC, struct.pack("<I", len(models))]
    for name, model in models.items():
        name_bytes = name.encode("utf-8")
        payload = serialize_model(model)
        chunks += [struct.pack("<I", len(name_bytes)), name_bytes, struct.pack("<I", len(payload)), payload]
    path.write_bytes(b"".join(chunks))
    return path


def load_models(path: Path) -> Dict[str, Model]:
    data = Path(path).read_bytes()
    if data[:4] != CONTAINER_MAGIC:
        raise SerializationError(f"bad container magic {data[:4]!r}")
    (count,) = struct.unpack_from("<I", data, 4)
    offset = 8
    models = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (payload_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        models[name] = deserialize_model(data[offset : offset + payload_len])
        offset += payload_len
    return models
