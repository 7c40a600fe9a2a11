"""Stationary-and-instant recurrent layer: GRU gating, windowed attention and
recurrent seasonal-trend distillation."""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .attention import BandMask, MhaParams, windowed_self_attention
from .numcore import Linear, Module, Tensor, glorot, make_op, parameter
from .numcore.ops import _sigmoid


class GruLayer(Module):
    """One GRU layer; gate blocks are ordered (reset, update, candidate)."""

    def __init__(self, d_in: int, d_h: int, rng: np.random.Generator):
        self.d_h = d_h
        self.w_ih = glorot(rng, d_in, 3 * d_h)
        self.w_hh = glorot(rng, d_h, 3 * d_h)
        self.b_ih = parameter(np.zeros(3 * d_h))
        self.b_hh = parameter(np.zeros(3 * d_h))


class GruParams(Module):
    def __init__(self, d_in: int, d_h: int, n_layers: int, rng: np.random.Generator):
        if n_layers < 1:
            raise ValueError("a GRU needs at least one layer")
        self.layers = [GruLayer(d_in if i == 0 else d_h, d_h, rng) for i in range(n_layers)]

    @property
    def d_h(self) -> int:
        return self.layers[0].d_h


def gru_layer(x: Tensor, layer: GruLayer, h0: Tensor | None = None) -> Tensor:
    """Run one GRU layer over ``x`` of shape ``(..., L, d_in)``; returns every hidden state.

    Recurrence::

        r = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
        z = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
        n = tanh(x W_in + b_in + r * (h W_hn + b_hn))
        h = (1 - z) * n + z * h
    """
    H = layer.d_h
    lead = x.shape[:-2]
    L = x.shape[-2]
    if h0 is None:
        h0 = Tensor(np.zeros(lead + (H,)))
    w_ih, w_hh = layer.w_ih.data, layer.w_hh.data
    b_hh = layer.b_hh.data
    # buffers are time-major so each step touches contiguous memory
    xt = np.moveaxis(x.data, -2, 0)  # (L, ..., d_in)
    gx = xt @ w_ih + layer.b_ih.data  # (L, ..., 3H)
    hs = np.empty((L + 1,) + lead + (H,))
    hs[0] = h0.data
    rs = np.empty((L,) + lead + (H,))
    zs = np.empty_like(rs)
    ns = np.empty_like(rs)
    ghn = np.empty_like(rs)
    h = h0.data
    for t in range(L):
        gh = h @ w_hh + b_hh
        g = gx[t]
        rz = _sigmoid(g[..., :2 * H] + gh[..., :2 * H])
        r, z = rz[..., :H], rz[..., H:]
        ghn[t] = gh[..., 2 * H:]
        n = np.tanh(g[..., 2 * H:] + r * ghn[t])
        h = (1.0 - z) * n + z * h
        rs[t], zs[t], ns[t], hs[t + 1] = r, z, n, h
    out = np.ascontiguousarray(np.moveaxis(hs[1:], 0, -2))

    def backward(gout):
        gt = np.moveaxis(gout, -2, 0)
        dgx = np.empty((L,) + lead + (3 * H,))
        dgh = np.empty_like(dgx)
        dh = np.zeros(lead + (H,))
        w_hh_t = w_hh.T
        for t in range(L - 1, -1, -1):
            dh = dh + gt[t]
            r, z, n = rs[t], zs[t], ns[t]
            da_n = dh * (1.0 - z) * (1.0 - n * n)
            da_r = da_n * ghn[t] * r * (1.0 - r)
            da_z = dh * (hs[t] - n) * z * (1.0 - z)
            dgx[t, ..., :H] = da_r
            dgx[t, ..., H:2 * H] = da_z
            dgx[t, ..., 2 * H:] = da_n
            dgh[t, ..., :2 * H] = dgx[t, ..., :2 * H]
            dgh[t, ..., 2 * H:] = da_n * r
            dh = dh * z + dgh[t] @ w_hh_t
        flat_x = dgx.reshape(-1, 3 * H)
        flat_h = dgh.reshape(-1, 3 * H)
        dx = np.moveaxis(dgx @ w_ih.T, 0, -2)
        dw_ih = xt.reshape(-1, xt.shape[-1]).T @ flat_x
        dw_hh = hs[:-1].reshape(-1, H).T @ flat_h
        return dx, dh, dw_ih, dw_hh, flat_x.sum(axis=0), flat_h.sum(axis=0)

    return make_op("gru", out, (x, h0, layer.w_ih, layer.w_hh, layer.b_ih, layer.b_hh), backward)


def gru_forward(x: Tensor, params: GruParams, h0: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Stacked GRU. Returns ``(outputs, states)``.

    A GRU's output at each step is its hidden state, so ``states`` is the
    top layer's hidden-state sequence (the same tensor as ``outputs``).
    """
    h = x
    for i, layer in enumerate(params.layers):
        h = gru_layer(h, layer, h0 if i == 0 else None)
    return h, h


def series_decompose(x: Tensor, kernel: int) -> tuple[Tensor, Tensor]:
    """Moving-average trend and residual seasonal part of ``x`` shaped ``(..., L, d)``."""
    trend = nc.avgpool1d_replicate(x, kernel, channels_last=True)
    return trend, x - trend


class SeasonalConv(Module):
    def __init__(self, d: int, k: int, rng: np.random.Generator):
        self.kernel = glorot(rng, d * k, d, shape=(d, d, k))
        self.bias = parameter(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return nc.conv1d(x, self.kernel, self.bias, channels_last=True)


class SirnLayer(Module):
    """One stationary-and-instant recurrent layer over ``(..., L, d)`` sequences."""

    def __init__(self, d: int, n_heads: int, window: int, eta: int, decomp_kernel: int,
                 gru_layers: int, rng: np.random.Generator, seasonal_kernel: int = 3,
                 attn_impl: str = "banded"):
        if eta < 1:
            raise ValueError("distillation depth eta must be at least 1")
        if decomp_kernel % 2 == 0:
            raise ValueError("decomposition kernel must be odd")
        self.band = BandMask(window)
        self.eta = eta
        self.decomp_kernel = decomp_kernel
        self.attn_impl = attn_impl
        self.rnn1 = GruParams(d, d, gru_layers, rng)
        self.rnn2 = GruParams(d, d, gru_layers, rng)
        self.mha = MhaParams(d, n_heads, rng)
        self.seasonal = [SeasonalConv(d, seasonal_kernel, rng) for _ in range(eta)]
        self.proj = Linear(d, d, rng, bias=False)
        self.decompositions = 0

    def _decompose(self, x: Tensor) -> tuple[Tensor, Tensor]:
        self.decompositions += 1
        return series_decompose(x, self.decomp_kernel)

    def _local(self, x: Tensor) -> Tensor:
        return windowed_self_attention(x, self.mha, self.band, self.attn_impl)

    def __call__(self, x_in: Tensor) -> tuple[Tensor, Tensor]:
        """Returns ``(x_out, flow_state)``; ``flow_state`` is the first GRU's hidden sequence."""
        h, states = gru_forward(x_in, self.rnn1)
        gate = nc.softmax(h, axis=-1)
        x = gate * x_in + self._local(x_in) + x_in

        trend, seasonal = self._decompose(x)
        trend_sum = trend
        local = self._local(x)
        for conv in self.seasonal:
            trend, seasonal = self._decompose(conv(seasonal) + local)
            trend_sum = trend_sum + trend
        agg, _ = gru_forward(trend_sum, self.rnn2)
        return self.proj(seasonal + agg), states
