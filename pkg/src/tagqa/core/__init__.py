from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, finite_difference_check
from .optim import Adam, AdamState, DivergenceError, LrSchedule, adam_step
from .tensor import (
    GradientError,
    ShapeError,
    Tensor,
    bce_with_logits,
    concat,
    dropout,
    embedding,
    gelu,
    layer_norm,
    matmul,
    no_grad,
    softmax,
)

__all__ = [
    "Adam",
    "AdamState",
    "DivergenceError",
    "GradCheckReport",
    "GradientError",
    "LrSchedule",
    "ShapeError",
    "Tensor",
    "adam_step",
    "bce_with_logits",
    "concat",
    "dropout",
    "embedding",
    "finite_difference_check",
    "gelu",
    "layer_norm",
    "load_checkpoint",
    "matmul",
    "no_grad",
    "save_checkpoint",
    "softmax",
]
