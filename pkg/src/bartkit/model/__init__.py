"""Numpy encoder-decoder transformer with manual backpropagation."""
from .config import ModelConfig, TrainConfig, param_count, param_shapes
from .transformer import ModelParameters, forward_loss, grad_check, init_model

__all__ = [
    "ModelConfig",
    "ModelParameters",
    "TrainConfig",
    "forward_loss",
    "grad_check",
    "init_model",
    "param_count",
    "param_shapes",
]
