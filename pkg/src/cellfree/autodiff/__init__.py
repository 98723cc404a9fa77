from .tensor import (
    Tensor, abs2, add, as_tensor, backward, clamp, concat, div, einsum, exp, getitem,
    linear, log, log2, matmul, maximum, mean, mean_pool, mul, no_grad, power, prod, relu,
    reshape, sigmoid, softmax, solve, sqrt, stack, sub, tanh, transpose, tsum, where,
)
from .nn import Adam, BatchNorm, glorot
from .gradcheck import check_gradients, numerical_grad, relative_error

__all__ = [
    "Tensor", "abs2", "add", "as_tensor", "backward", "clamp", "concat", "div", "einsum",
    "exp", "getitem", "linear", "log", "log2", "matmul", "maximum", "mean", "mean_pool",
    "mul", "no_grad", "power", "prod", "relu", "reshape", "sigmoid", "softmax", "solve", "sqrt",
    "stack", "sub", "tanh", "transpose", "tsum", "where", "Adam", "BatchNorm", "glorot",
    "check_gradients", "numerical_grad", "relative_error",
]
