"""Reverse-mode automatic differentiation with double-backward support."""

from .grad import GradDiagnostics, finite_diff_check, grad
from .tensor import (
    ACTIVATIONS,
    Tensor,
    add,
    as_tensor,
    concat,
    div,
    elu,
    enable_grad,
    exp,
    is_grad_enabled,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    sigmoid,
    softmax,
    sqrt,
    sub,
    swish,
    tanh,
)

__all__ = [
    "ACTIVATIONS",
    "GradDiagnostics",
    "Tensor",
    "add",
    "as_tensor",
    "concat",
    "div",
    "elu",
    "enable_grad",
    "exp",
    "finite_diff_check",
    "grad",
    "is_grad_enabled",
    "log",
    "matmul",
    "mean",
    "mul",
    "no_grad",
    "relu",
    "sigmoid",
    "softmax",
    "sqrt",
    "sub",
    "swish",
    "tanh",
]
