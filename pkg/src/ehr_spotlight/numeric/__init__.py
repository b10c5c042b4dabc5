"""Differentiable float64 tensor operations and a gradient-check harness."""

from .gradcheck import GradCheckResult, grad_check
from .tensor import (
    BatchNormState,
    GradTape,
    Tensor,
    add,
    backward,
    batch_norm,
    concat,
    conv2d_dilated,
    cross_entropy,
    gather_rows,
    matmul,
    mul,
    neg,
    no_grad,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    sub,
    take,
    tanh_act,
    transpose2d,
)

__all__ = [
    "BatchNormState",
    "GradCheckResult",
    "GradTape",
    "Tensor",
    "add",
    "backward",
    "batch_norm",
    "concat",
    "conv2d_dilated",
    "cross_entropy",
    "gather_rows",
    "grad_check",
    "matmul",
    "mul",
    "neg",
    "no_grad",
    "reduce_mean",
    "reduce_sum",
    "relu",
    "reshape",
    "scale",
    "sigmoid",
    "softmax",
    "sub",
    "take",
    "tanh_act",
    "transpose2d",
]
