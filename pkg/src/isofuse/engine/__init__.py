"""Reverse-mode differentiation and optimizers for small coordinate networks.

The engine records define-by-run tapes of vectorized numpy operations
(fixed-topology feedforward graphs are all the pipeline needs) and exposes
Adam-style optimizers with learning-rate scheduling. Dense products go
through numpy's BLAS; everything else is plain elementwise numpy, so results
are bit-reproducible run-to-run on one machine.
"""

from .tape import (
    Tensor,
    absolute,
    add,
    add_bias,
    add_scaled,
    backward,
    concat,
    constant,
    div,
    matmul,
    mean_all,
    mul,
    neg,
    relu,
    reshape,
    rows,
    scale,
    sine,
    sqrt,
    square,
    sub,
    sum_all,
)
from .params import ParamStore
from .optim import Optimizer, OptimizerSpec, scheduled_lr

__all__ = [
    "Tensor",
    "absolute",
    "ParamStore",
    "Optimizer",
    "OptimizerSpec",
    "scheduled_lr",
    "backward",
    "constant",
    "matmul",
    "add_bias",
    "relu",
    "sine",
    "concat",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "add_scaled",
    "square",
    "sqrt",
    "div",
    "mean_all",
    "sum_all",
    "reshape",
    "rows",
]
