"""Numeric substrate: tensors, reverse-mode tape, FFT, gradient checking."""

from .fft import circular_xcorr, irfft, rfft
from .gradcheck import grad_check
from .module import LayerNorm, Linear, Module, glorot, parameter
from .ops import (
    activation,
    add,
    avgpool1d_replicate,
    broadcast_to,
    concat,
    conv1d,
    div,
    embedding,
    exp,
    gelu,
    getitem,
    layer_norm,
    log,
    matmul,
    mean,
    mse,
    mul,
    neg,
    power,
    reshape,
    sigmoid,
    softmax,
    softplus,
    square,
    sub,
    swapaxes,
    tanh,
    transpose,
)
from .ops import sum as tsum
from .tensor import NonFiniteError, Tape, Tensor, as_tensor, get_tape, make_op, no_grad

__all__ = [
    "LayerNorm", "Linear", "Module", "NonFiniteError", "Tape", "Tensor", "activation", "add", "as_tensor",
    "avgpool1d_replicate", "broadcast_to", "circular_xcorr", "concat", "conv1d", "div",
    "embedding", "exp", "gelu", "get_tape", "getitem", "glorot", "grad_check", "irfft", "layer_norm", "log",
    "make_op", "matmul", "mean", "mse", "mul", "neg", "no_grad", "parameter", "power",
    "reshape", "rfft", "sigmoid", "softmax", "softplus", "square", "sub", "swapaxes", "tanh",
    "transpose", "tsum",
]
