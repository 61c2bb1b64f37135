from .autograd import (
    ShapeError,
    Tensor,
    add,
    backward,
    concat,
    cosine_similarity,
    dropout,
    exp,
    gather_rows,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    pick,
    relu,
    reshape,
    scale,
    slice_cols,
    softmax,
    square,
    stack,
    sub,
    sum,
    transpose,
)
from .optim import Adam, AdamState, adam_step

__all__ = [
    "Adam",
    "AdamState",
    "ShapeError",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "concat",
    "cosine_similarity",
    "dropout",
    "exp",
    "gather_rows",
    "layer_norm",
    "log",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "pick",
    "relu",
    "reshape",
    "scale",
    "slice_cols",
    "softmax",
    "square",
    "stack",
    "sub",
    "sum",
    "transpose",
]
