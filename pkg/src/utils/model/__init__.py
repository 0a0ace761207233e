"""Classifier model, loss, gradient, SGD and serialization."""

from utils.model.model_utils import (
    ModelSpec,
    Model,
    SgdConfig,
    init_model,
    zeros_model,
    forward,
    predict,
    accuracy,
    loss,
    grad,
    sgd_step,
    serialize_model,
    deserialize_model,
    serialized_size,
    save_models,
    load_models,
)

__all__ = [
    "ModelSpec",
    "Model",
    "SgdConfig",
    "init_model",
    "zeros_model",
    "forward",
    "predict",
    "accuracy",
    "loss",
    "grad",
    "sgd_step",
    "serialize_model",
    "deserialize_model",
    "serialized_size",
    "save_models",
    "load_models",
]
