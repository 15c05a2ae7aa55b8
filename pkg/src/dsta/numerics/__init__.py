"""Tensor substrate: autodiff, optimizer and gradient oracle."""
from .gradcheck import grad_check, numeric_grad
from .optim import AdamWState, adamw_step
from .tensor import (
    ComputationRecord,
    NonFiniteError,
    ShapeError,
    Tensor,
    abs_,
    add,
    backward,
    concat,
    cos,
    default_dtype,
    div,
    exp,
    finite_checks,
    getitem,
    layer_norm,
    linear,
    log,
    matmul,
    mean_axis,
    mul,
    neg,
    no_grad,
    power,
    precision,
    relu,
    reshape,
    sin,
    slice_axis,
    softmax,
    stack,
    sub,
    sum_,
    swapaxes,
    take,
    tensor,
    transpose,
)

__all__ = [name for name in dir() if not name.startswith("_")]
from .module import Module, ParamFactory  # noqa: E402

__all__ += ["Module", "ParamFactory"]
