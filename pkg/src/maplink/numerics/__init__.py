"""Numeric core: autodiff tensors, layers, optimiser, checkpoints."""
from . import checkpoint
from .nn import (
    MLP,
    Dropout,
    Embedding,
    Encoder,
    EncoderLayer,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    Parameter,
    attention_mask,
)
from .optim import Adam, PlateauSchedule, adam_step, lr_schedule, warmup_linear_decay
from .tensor import ShapeError, Tensor, check_grad, check_param_grad

__all__ = [
    "Adam", "Dropout", "Embedding", "Encoder", "EncoderLayer", "LayerNorm", "Linear", "MLP",
    "Module", "MultiHeadAttention", "Parameter", "PlateauSchedule", "ShapeError", "Tensor",
    "adam_step", "attention_mask", "check_grad", "check_param_grad", "checkpoint", "lr_schedule", "warmup_linear_decay",
]
