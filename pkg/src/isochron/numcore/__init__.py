"""Small float32 tensor library with tape-based reverse-mode autodiff."""

from .ops import (
    DimensionError,
    add,
    add_const,
    attention,
    cross_entropy,
    dropout,
    embedding,
    layer_norm,
    log_softmax_np,
    matmul,
    mean,
    mul,
    mul_const,
    relu,
    reshape,
    scale,
    softmax,
    sub,
    sum,
    transpose,
)
from .tensor import Graph, Tensor, backward, default_dtype, no_grad, precision

__all__ = [
    "DimensionError", "Graph", "Tensor", "add", "add_const", "attention", "backward",
    "cross_entropy", "default_dtype", "dropout", "embedding", "layer_norm", "log_softmax_np",
    "matmul", "mean", "mul", "mul_const", "no_grad", "precision", "relu", "reshape", "scale",
    "softmax", "sub", "sum", "transpose",
]
