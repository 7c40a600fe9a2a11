"""Multi-head attention, dense (optionally band-masked) and banded O(wL).

Sequences are laid out ``(..., L, d)``. Heads split the feature axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided, sliding_window_view

from . import numcore as nc
from .numcore import Module, Tensor, get_tape, glorot, make_op


@dataclass(frozen=True)
class BandMask:
    """Each position attends to ``w // 2`` neighbours per side plus itself."""

    w: int

    def __post_init__(self):
        if self.w <= 0 or self.w % 2:
            raise ValueError(f"window size must be even and positive, got {self.w}")

    @property
    def half_width(self) -> int:
        return self.w // 2

    def allowed(self, L: int) -> np.ndarray:
        idx = np.arange(L)
        return np.abs(idx[:, None] - idx[None, :]) <= self.half_width


class MhaParams(Module):
    """Per-head query/key/value projections (stored fused) and output projection."""

    def __init__(self, d: int, n_heads: int, rng: np.random.Generator):
        if d % n_heads:
            raise ValueError(f"model width {d} not divisible by {n_heads} heads")
        self.d = d
        self.n_heads = n_heads
        self.w_q = glorot(rng, d, d)
        self.w_k = glorot(rng, d, d)
        self.w_v = glorot(rng, d, d)
        self.w_o = glorot(rng, d, d)

    @property
    def head_dim(self) -> int:
        return self.d // self.n_heads


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """``softmax(q k^T / sqrt(d_k)) v`` with disallowed positions excluded."""
    if q.shape[-1] != k.shape[-1]:
        raise ValueError("query and key widths differ")
    scale = 1.0 / np.sqrt(q.shape[-1])
    logits = nc.matmul(q, nc.swapaxes(k, -1, -2)) * scale
    return nc.matmul(nc.softmax(logits, axis=-1, mask=mask), v)


def _split_heads(x: Tensor, n: int) -> Tensor:
    *lead, L, d = x.shape
    return nc.swapaxes(nc.reshape(x, (*lead, L, n, d // n)), -2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, n, L, dh = x.shape
    return nc.reshape(nc.swapaxes(x, -2, -3), (*lead, L, n * dh))


def multi_head_attention(query: Tensor, context: Tensor, params: MhaParams,
                         mask: np.ndarray | None = None) -> Tensor:
    """Dense multi-head attention of ``query`` positions over ``context`` positions."""
    n = params.n_heads
    q = _split_heads(nc.matmul(query, params.w_q), n)
    k = _split_heads(nc.matmul(context, params.w_k), n)
    v = _split_heads(nc.matmul(context, params.w_v), n)
    return nc.matmul(_merge_heads(scaled_dot_attention(q, k, v, mask)), params.w_o)


def sliding_window_mha(x: Tensor, params: MhaParams, band: BandMask) -> Tensor:
    """Self-attention under the band mask via the dense masked path (reference)."""
    return multi_head_attention(x, x, params, band.allowed(x.shape[-2]))


# -- banded fast path -----------------------------------------------------------

_BLOCK = 64
_GROUP = 4


def _pad_time(x: np.ndarray, before: int, after: int) -> np.ndarray:
    return np.pad(x, [(0, 0)] * (x.ndim - 2) + [(before, after), (0, 0)])


def _spans(xp: np.ndarray, block: int, span: int, n_blocks: int) -> np.ndarray:
    """View rows ``[b*block, b*block + span)`` of ``xp`` for each block: ``(..., n_blocks, span, dh)``."""
    win = sliding_window_view(xp, span, axis=-2)[..., :n_blocks * block:block, :, :]
    return np.swapaxes(win, -1, -2)


def _band_view(dense: np.ndarray, width: int) -> np.ndarray:
    """Diagonal band ``[..., i, o] = dense[..., i, i + o]`` of a C-contiguous block array."""
    *lead, s_row, s_col = dense.strides
    return as_strided(dense, dense.shape[:-1] + (width,), (*lead, s_row + s_col, s_col))


def _banded_dense(band: np.ndarray, span: int) -> np.ndarray:
    """Inverse of :func:`_band_view`: place ``(..., B, W)`` diagonals in a zero ``(..., B, span)`` block."""
    dense = np.zeros(band.shape[:-1] + (span,))
    _band_view(dense, band.shape[-1])[...] = band
    return dense


def _overlap_add(spans: np.ndarray, block: int, length: int) -> np.ndarray:
    """Sum per-block span rows back onto the padded time axis (inverse of :func:`_spans`)."""
    *lead, n_blocks, span, dh = spans.shape
    chunks = -(-span // block)
    sp = np.zeros((*lead, n_blocks, chunks * block, dh))
    sp[..., :span, :] = spans
    acc = np.zeros((*lead, n_blocks + chunks, block, dh))
    for j in range(chunks):
        acc[..., j:j + n_blocks, :, :] += sp[..., j * block:(j + 1) * block, :]
    return acc.reshape(*lead, -1, dh)[..., :length, :]


def _band_forward(qd: np.ndarray, kp: np.ndarray, vp: np.ndarray, hw: int, first: int, L: int):
    """Band attention for query rows ``first .. first + n - 1`` of a length-``L`` series.

    ``kp``/``vp`` hold key/value rows for positions ``first - hw`` onward,
    zero outside the series. Returns ``(out, attn, cache)`` where ``attn`` is
    the ``(..., nb, B, W)`` block-diagonal band and ``cache`` feeds the
    backward pass.
    """
    n, dh = qd.shape[-2], qd.shape[-1]
    lead = qd.shape[:-2]
    W = 2 * hw + 1
    B = min(_BLOCK, n)
    nb = -(-n // B)
    Lq, S = nb * B, B + 2 * hw
    scale = 1.0 / np.sqrt(dh)
    qb = _pad_time(qd, 0, Lq - n).reshape(*lead, nb, B, dh)
    short = Lq + 2 * hw - kp.shape[-2]
    ks = _spans(_pad_time(kp, 0, max(short, 0)), B, S, nb)
    vs = _spans(_pad_time(vp, 0, max(short, 0)), B, S, nb)

    row = first + np.arange(Lq).reshape(nb, B, 1)
    pos = row + np.arange(W) - hw
    # padding rows past the block see every slot; they are cropped from the output
    masked = ~(((pos >= 0) & (pos < L)) | (row >= first + n))
    attn = np.empty((*lead, nb, B, W))
    out = np.empty((*lead, nb, B, dh))
    # a few blocks at a time keeps every temporary small and cache-resident
    for c0 in range(0, nb, _GROUP):
        c = slice(c0, min(c0 + _GROUP, nb))
        logits = _band_view(qb[..., c, :, :] @ np.swapaxes(ks[..., c, :, :], -1, -2), W) * scale
        np.copyto(logits, -np.inf, where=masked[c])
        logits -= logits.max(axis=-1, keepdims=True)
        np.exp(logits, out=logits)
        logits /= logits.sum(axis=-1, keepdims=True)
        attn[..., c, :, :] = logits
        out[..., c, :, :] = _banded_dense(logits, S) @ vs[..., c, :, :]
    return out.reshape(*lead, Lq, dh)[..., :n, :], attn, (qb, ks, vs, scale)


def band_attention(q: Tensor, k: Tensor, v: Tensor, half_width: int) -> Tensor:
    """Scaled-dot self-attention restricted to ``|i - j| <= half_width``.

    Query rows are processed in fixed blocks. Each block meets only the
    ``block + 2*half_width`` keys its band can reach, so time and memory are
    linear in sequence length while the products stay dense matrix products.
    """
    hw = half_width
    L = q.shape[-2]
    out, attn, (qb, ks, vs, scale) = _band_forward(q.data, _pad_time(k.data, hw, hw),
                                                   _pad_time(v.data, hw, hw), hw, 0, L)
    *lead, nb, B, W = attn.shape
    Lq, S = nb * B, ks.shape[-2]

    def backward(g):
        gq = gk = gv = None
        gb = _pad_time(g, 0, Lq - L).reshape(*lead, nb, B, g.shape[-1])
        if v.requires_grad:
            probs = _banded_dense(attn, S)
            gv = _overlap_add(np.swapaxes(probs, -1, -2) @ gb, B, Lq + 2 * hw)[..., hw:hw + L, :]
        if q.requires_grad or k.requires_grad:
            gattn = _band_view(gb @ np.swapaxes(vs, -1, -2), W)
            glog = _banded_dense(attn * (gattn - (gattn * attn).sum(axis=-1, keepdims=True)) * scale, S)
            if q.requires_grad:
                gq = (glog @ ks).reshape(*lead, Lq, -1)[..., :L, :]
            if k.requires_grad:
                gk = _overlap_add(np.swapaxes(glog, -1, -2) @ qb, B, Lq + 2 * hw)[..., hw:hw + L, :]
        return gq, gk, gv

    return make_op("band_attention", np.ascontiguousarray(out), (q, k, v), backward)


def _heads(x: np.ndarray, n: int) -> np.ndarray:
    return np.swapaxes(x.reshape(*x.shape[:-1], n, x.shape[-1] // n), -2, -3)


def _banded_mha_streaming(x: np.ndarray, params: MhaParams, hw: int) -> np.ndarray:
    """Tape-free banded self-attention computed one row group at a time.

    Each group projects its own queries and the keys/values of its rows plus
    a ``hw`` halo on each side, so no full-length intermediate is formed.
    """
    *lead, L, d = x.shape
    n = params.n_heads
    rows = _GROUP * _BLOCK
    xp = _pad_time(x, hw, hw)
    out = np.empty(x.shape)
    wq, wk, wv, wo = (w.data for w in (params.w_q, params.w_k, params.w_v, params.w_o))
    for lo in range(0, L, rows):
        hi = min(lo + rows, L)
        ctx = xp[..., lo:hi + 2 * hw, :]
        o, _, _ = _band_forward(_heads(x[..., lo:hi, :] @ wq, n), _heads(ctx @ wk, n),
                                _heads(ctx @ wv, n), hw, lo, L)
        out[..., lo:hi, :] = np.swapaxes(o, -2, -3).reshape(*lead, hi - lo, d) @ wo
    return out


def banded_mha_fast(x: Tensor, params: MhaParams, band: BandMask) -> Tensor:
    """Band-masked multi-head self-attention in O(wL) time and memory.

    When nothing would be recorded on the tape the computation streams over
    row groups; otherwise it is composed from differentiable ops.
    """
    tracked = (x, *params.parameters())
    if not (get_tape().enabled and any(t.requires_grad for t in tracked)):
        return Tensor(_banded_mha_streaming(x.data, params, band.half_width))
    n = params.n_heads
    q = _split_heads(nc.matmul(x, params.w_q), n)
    k = _split_heads(nc.matmul(x, params.w_k), n)
    v = _split_heads(nc.matmul(x, params.w_v), n)
    return nc.matmul(_merge_heads(band_attention(q, k, v, band.half_width)), params.w_o)


def windowed_self_attention(x: Tensor, params: MhaParams, band: BandMask,
                            impl: str = "banded") -> Tensor:
    if impl == "banded":
        return banded_mha_fast(x, params, band)
    if impl == "dense":
        return sliding_window_mha(x, params, band)
    raise ValueError(f"unknown attention implementation {impl!r}")
