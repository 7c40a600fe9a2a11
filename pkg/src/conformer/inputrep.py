"""Input representation: FFT correlation weights, calendar embedding, fusion.

Sequences are time-major: a window is ``(..., L, d_x)`` and representations are
``(..., L, d)``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import numcore as nc
from .dataio import CARDINALITY, SCALES
from .numcore import Module, Tensor, glorot, parameter

VARIANTS = (
    "full",
    "minus_gamma",
    "minus_r",
    "minus_r_minus_gamma",
    "minus_x",
    "minus_x_minus_gamma",
    "method1",
    "method2",
    "method3",
    "method4",
)


# -- multivariate correlation -----------------------------------------------------

def correlation_matrix(x: np.ndarray, return_lags: bool = False):
    """Peak circular cross-correlation between every pair of variables.

    ``x`` is ``(..., L_w, d_x)``. Entry ``[i, j]`` is
    ``max_tau sum_t xc_i[t] xc_j[t + tau] / L_w`` over mean-removed series,
    computed through the spectrum ``conj(F_i) F_j``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] == 0:
        raise ValueError("correlation needs at least one variable")
    L = x.shape[-2]
    if L < 2:
        raise ValueError("correlation needs a window of at least two steps")
    xc = x - x.mean(axis=-2, keepdims=True)
    r = nc.circular_xcorr(xc, axis=-2) / L  # (..., d, d, L)
    mr = r.max(axis=-1)
    if return_lags:
        return mr, r.argmax(axis=-1)
    return mr


def multivariate_correlation(x: np.ndarray) -> np.ndarray:
    """Row-softmax of :func:`correlation_matrix`; a data-derived constant."""
    mr = correlation_matrix(x)
    e = np.exp(mr - mr.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# -- multiscale calendar embedding ---------------------------------------------

class MultiscaleEmbed(Module):
    """Per-scale lookup tables mixed along time by per-scale ``L x L`` weights."""

    def __init__(self, d: int, length: int, scales: Sequence[str], rng: np.random.Generator):
        unknown = set(scales) - set(SCALES)
        if unknown:
            raise ValueError(f"unknown calendar scales {sorted(unknown)}")
        self.scales = tuple(scales)
        self.length = length
        self.tables = [parameter(rng.normal(scale=1.0 / np.sqrt(d), size=(CARDINALITY[s], d)))
                       for s in self.scales]
        # identity mixing: each scale starts as a plain additive embedding
        self.mix = parameter(np.tile(np.eye(length), (len(self.scales), 1, 1)))
        self.bias = parameter(np.zeros((length, d)))

    def __call__(self, marks: np.ndarray) -> Tensor:
        marks = np.asarray(marks)
        if marks.shape[-2] != self.length:
            raise ValueError(f"window length {marks.shape[-2]} does not match the "
                             f"embedding's configured length {self.length}")
        out = self.bias
        for k, scale in enumerate(self.scales):
            col = SCALES.index(scale)
            codes = marks[..., col]
            if scale in ("day", "month"):
                codes = codes - 1
            emb = nc.embedding(self.tables[k], codes)  # (..., L, d)
            out = out + nc.matmul(self.mix[k], emb)
        return out


# -- fusion ---------------------------------------------------------------------

class FusionParams(Module):
    """Same-length convolution from ``d_x`` input channels to ``d`` model channels."""

    def __init__(self, d_x: int, d: int, kernel: int, rng: np.random.Generator):
        if kernel % 2 == 0:
            raise ValueError("fusion kernel size must be odd")
        self.kernel = glorot(rng, d_x * kernel, d, shape=(d, d_x, kernel))
        self.bias = parameter(np.zeros(d))

    def conv(self, x: Tensor) -> Tensor:
        return nc.conv1d(x, self.kernel, self.bias, channels_last=True)


def gamma_weights(gamma_bar: Tensor) -> Tensor:
    """Time-mixing weights from the calendar representation.

    Row-softmax over the time axis of the scaled self-similarity of the
    ``(L, d)`` calendar representation, giving an ``(L, L)`` matrix whose rows
    are convex combinations of time steps.
    """
    d = gamma_bar.shape[-1]
    sim = nc.matmul(gamma_bar, nc.swapaxes(gamma_bar, -1, -2)) * (1.0 / np.sqrt(d))
    return nc.softmax(sim, axis=-1)


def fuse_input(x, w_r: np.ndarray, fusion: FusionParams, gamma_bar: Tensor | None,
               variant: str = "full") -> Tensor:
    """Combine a window ``x`` ``(..., L, d_x)`` with correlation weights and calendar
    representation into the model input ``(..., L, d)``."""
    x = nc.as_tensor(x)
    # variable mixing W_R x_t for every step t
    mixed = nc.matmul(x, np.swapaxes(w_r, -1, -2))
    conv = fusion.conv
    if variant == "full":
        return conv(mixed + x) + gamma_bar
    if variant == "minus_gamma":
        return conv(mixed + x)
    if variant == "minus_r":
        return conv(x) + gamma_bar
    if variant == "minus_r_minus_gamma":
        return conv(x)
    if variant == "minus_x":
        return conv(mixed) + gamma_bar
    if variant == "minus_x_minus_gamma":
        return conv(mixed)
    if variant in ("method1", "method2", "method3", "method4"):
        w_g = gamma_weights(gamma_bar)
        if variant == "method1":
            return conv(nc.matmul(w_g, mixed) + x)
        if variant == "method2":
            return conv(mixed + nc.matmul(w_g, x))
        if variant == "method3":
            return conv(mixed + nc.matmul(w_g, x) + x)
        return nc.matmul(w_g, conv(mixed + x))
    raise ValueError(f"unknown input variant {variant!r}; expected one of {VARIANTS}")


def needs_calendar(variant: str) -> bool:
    return variant not in ("minus_gamma", "minus_r_minus_gamma", "minus_x_minus_gamma")


class InputRepresentation(Module):
    """Correlation weights + calendar embedding + convolutional fusion for one stream."""

    def __init__(self, d_x: int, d: int, length: int, scales: Sequence[str], kernel: int,
                 variant: str, rng: np.random.Generator):
        if variant not in VARIANTS:
            raise ValueError(f"unknown input variant {variant!r}; expected one of {VARIANTS}")
        self.variant = variant
        self.fusion = FusionParams(d_x, d, kernel, rng)
        self.embed = MultiscaleEmbed(d, length, scales, rng) if needs_calendar(variant) else None

    def __call__(self, x: np.ndarray, marks: np.ndarray) -> Tensor:
        w_r = multivariate_correlation(x)
        gamma_bar = self.embed(marks) if self.embed is not None else None
        return fuse_input(Tensor(x), w_r, self.fusion, gamma_bar, self.variant)
