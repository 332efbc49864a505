"""Minimal reverse-mode autodiff engine for the accent-detection models."""

from .tensor import NonFiniteError, Tensor, op_node, parameter
from . import ops
from .lstm import bilstm, lstm_layer
from .optim import Adam
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Adam",
    "NonFiniteError",
    "Tensor",
    "bilstm",
    "load_checkpoint",
    "lstm_layer",
    "op_node",
    "ops",
    "parameter",
    "save_checkpoint",
]
