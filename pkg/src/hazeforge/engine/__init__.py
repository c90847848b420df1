"""Minimal fp64 reverse-mode autodiff engine."""
from .gradcheck import GradCheckReport, grad_check
from .nn import avg_pool2, concat_channels, conv2d, init_conv, separable_filter
from .optim import AdamState, adam_step
from .serialize import load_weights, save_weights
from .tensor import (
    Graph,
    Tensor,
    abs,
    add,
    backward,
    clip,
    concat,
    div,
    exp,
    expand,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    sigmoid,
    sqrt,
    square,
    sub,
    sum,
    take,
)

__all__ = [
    "AdamState", "GradCheckReport", "Graph", "Tensor", "abs", "adam_step", "add",
    "avg_pool2", "backward", "clip", "concat", "concat_channels", "conv2d", "div", "exp",
    "expand", "grad_check", "init_conv", "load_weights", "mean", "mul", "neg",
    "no_grad", "relu", "reshape", "save_weights", "separable_filter", "sigmoid",
    "sqrt", "square", "sub", "sum", "take",
]
