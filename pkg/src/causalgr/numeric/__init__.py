"""Minimal dense-tensor backbone with reverse-mode differentiation."""
from causalgr.numeric.gradcheck import grad_check
from causalgr.numeric.tensor import (
    DTYPES,
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    clip,
    concat,
    current_tape,
    div,
    exp,
    finite_checks,
    finite_checks_enabled,
    gelu,
    getitem,
    layernorm,
    log,
    masked_softmax,
    matmul,
    mean,
    mul,
    pad_left,
    reshape,
    resolve_dtype,
    sigmoid,
    softmax_lastdim,
    sub,
    sum_,
    tanh,
    transpose,
    unbroadcast,
    zeros,
)

__all__ = [
    "DTYPES", "Tape", "Tensor", "add", "as_tensor", "backward", "clip", "concat",
    "current_tape", "div", "exp", "finite_checks", "finite_checks_enabled", "gelu",
    "getitem", "grad_check", "layernorm", "log", "masked_softmax", "matmul", "mean",
    "mul", "pad_left", "reshape", "resolve_dtype", "sigmoid", "softmax_lastdim", "sub",
    "sum_", "tanh", "transpose", "unbroadcast", "zeros",
]
