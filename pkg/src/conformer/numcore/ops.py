"""Differentiable tensor operations.

Every function takes and returns :class:`Tensor` values. Binary elementwise
operations broadcast with numpy semantics; adjoints are reduced back to each
operand's shape.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .tensor import Tensor, as_tensor, make_op


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_op("mul", a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return make_op("div", out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_op("neg", -a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return make_op("power", a.data ** p, (a,),
                   lambda g: (g * p * a.data ** (p - 1),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return make_op("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_op("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return make_op("log", out, (a,), lambda g: (g / a.data,))


# -- activations ----------------------------------------------------------

def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return make_op("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow-free for any finite input
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_op("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.logaddexp(0.0, x)
    return make_op("softplus", out, (a,), lambda g: (g * _sigmoid(x),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return make_op("gelu", out, (a,), backward)


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "softplus": softplus, "gelu": gelu}


def activation(a, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(a)


# -- reductions and shape ops ------------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_op("sum", out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_op("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return make_op("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    return make_op("swapaxes", a.data.swapaxes(i, j), (a,), lambda g: (g.swapaxes(i, j),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return make_op("getitem", a.data[idx], (a,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return make_op("concat", np.concatenate([t.data for t in tensors], axis=axis),
                   tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_op("broadcast_to", np.broadcast_to(a.data, shape).copy(), (a,),
                   lambda g: (_unbroadcast(g, a.shape),))


# -- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands with at least two axes")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # shared weight: fold every leading axis into one product
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))

    return make_op("matmul", a.data @ b.data, (a, b), backward)


# -- softmax ----------------------------------------------------------------

def softmax(a, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax.

    ``mask`` (boolean, broadcastable to ``a``) marks allowed positions; the
    others behave as logits of minus infinity and receive zero weight.
    """
    a = as_tensor(a)
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(mask, x.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("softmax: a slice has every position masked")
        x = np.where(mask, x, -np.inf)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_op("softmax", out, (a,), backward)


# -- temporal operators -----------------------------------------------------

def conv1d(x, kernel, bias=None, channels_last: bool = False) -> Tensor:
    """Same-length 1-D cross-correlation with symmetric zero padding.

    Layout is ``(..., C_in, L)`` by default or ``(..., L, C_in)`` with
    ``channels_last``. ``kernel`` has shape ``(C_out, C_in, k)`` with odd ``k``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    c_out, c_in, k = kernel.shape
    if k % 2 == 0:
        raise ValueError(f"conv1d kernel size must be odd, got {k}")
    xd = x.data if channels_last else np.swapaxes(x.data, -1, -2)  # (..., L, C_in)
    if xd.shape[-1] != c_in:
        raise ValueError(f"conv1d channel mismatch: input {xd.shape[-1]} vs kernel {c_in}")
    lead = xd.shape[:-2]
    L = xd.shape[-2]
    p = (k - 1) // 2
    xp = np.zeros(lead + (L + 2 * p, c_in))
    xp[..., p:p + L, :] = xd
    # one flat matmul against every tap, then shift-and-add the taps
    w_all = kernel.data.transpose(1, 2, 0).reshape(c_in, k * c_out)  # [i, j*c_out + o]
    taps = (xp.reshape(-1, c_in) @ w_all).reshape(lead + (L + 2 * p, k, c_out))
    out = taps[..., 0:L, 0, :].copy()
    for j in range(1, k):
        out += taps[..., j:j + L, j, :]
    inputs = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data
        inputs.append(bias)

    def backward(g):
        # g: channels-last adjoint
        gl = np.ascontiguousarray(g if channels_last else np.swapaxes(g, -1, -2))
        g2 = gl.reshape(-1, c_out)
        gx = gw = gb = None
        if x.requires_grad:
            w_back = kernel.data.transpose(0, 2, 1).reshape(c_out, k * c_in)  # [o, j*c_in + i]
            gt = (g2 @ w_back).reshape(lead + (L, k, c_in))
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[..., j:j + L, :] += gt[..., j, :]
            gx = gxp[..., p:p + L, :]
            if not channels_last:
                gx = np.swapaxes(gx, -1, -2)
        if kernel.requires_grad:
            gw = np.empty(kernel.shape)
            for j in range(k):
                gw[:, :, j] = g2.T @ xp[..., j:j + L, :].reshape(-1, c_in)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        grads = [gx, gw]
        if bias is not None:
            grads.append(gb)
        return grads

    if not channels_last:
        out = np.swapaxes(out, -1, -2)
    return make_op("conv1d", np.ascontiguousarray(out), inputs, backward)


@lru_cache(maxsize=64)
def _avg_matrix(L: int, k: int) -> np.ndarray:
    """Row i holds the weights of the replicate-padded centred moving average."""
    p = (k - 1) // 2
    A = np.zeros((L, L))
    for i in range(L):
        for j in range(i - p, i + p + 1):
            A[i, min(max(j, 0), L - 1)] += 1.0 / k
    A.setflags(write=False)
    return A


def avgpool1d_replicate(x, kernel: int, channels_last: bool = False) -> Tensor:
    """Centred moving average with edge-replicating padding; output length equals input.

    Computed as ``x_0 + A (x - x_0)`` with ``x_0`` each series' first value and
    ``A`` the averaging matrix, so a constant series maps to itself exactly.
    """
    x = as_tensor(x)
    if kernel % 2 == 0 or kernel < 1:
        raise ValueError(f"moving-average kernel must be odd and positive, got {kernel}")
    t_axis = -2 if channels_last else -1
    L = x.shape[t_axis]
    if kernel > 2 * L - 1:
        raise ValueError(f"moving-average kernel {kernel} exceeds 2L-1 for L={L}")
    A = _avg_matrix(L, kernel)
    if channels_last:
        ref = x.data[..., :1, :]
        out = ref + np.matmul(A, x.data - ref)
    else:
        ref = x.data[..., :1]
        out = ref + (x.data - ref) @ A.T

    def backward(g):
        # rows of A sum to one, so the reference term drops out of the adjoint
        if channels_last:
            return (np.matmul(A.T, g),)
        return (g @ A,)

    return make_op("avgpool1d_replicate", out, (x,), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        red = tuple(range(g.ndim - 1))
        gh = g * gamma.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make_op("layer_norm", out, (x, gamma, beta), backward)


def embedding(table, idx: np.ndarray) -> Tensor:
    """Row lookup ``table[idx]``; ``idx`` is an integer array of any shape."""
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.intp)
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"embedding index out of range for table of {n} rows")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return make_op("embedding", table.data[idx], (table,), backward)


def mse(a, b) -> Tensor:
    d = sub(a, b)
    return mean(square(d))
