"""Dense float64 tensors, reverse-mode autodiff, and Adam."""

from . import kernels
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Tape,
    Tensor,
    as_tensor,
    concat,
    cosine_rows,
    dropout,
    elu,
    exp,
    log,
    log_sigmoid,
    log_softmax,
    matmul,
    nll_loss,
    relu,
    segment_softmax,
    segment_sum,
    sigmoid,
    softmax,
    take_rows,
)
from .layers import Linear

__all__ = [
    "Adam", "AdamState", "Linear", "Tape", "Tensor", "adam_step", "as_tensor",
    "concat", "cosine_rows", "dropout", "elu", "exp", "kernels", "log",
    "log_sigmoid", "log_softmax", "matmul", "nll_loss", "relu",
    "segment_softmax", "segment_sum", "sigmoid", "softmax", "take_rows",
]
