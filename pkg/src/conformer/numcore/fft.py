"""Real FFT wrappers used by the correlation front-end.

Backed by ``numpy.fft`` (pocketfft), which handles every length including
primes. These are not differentiable: their only consumer produces data-derived
constants.
"""

from __future__ import annotations

import numpy as np


def rfft(x, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[axis] < 1:
        raise ValueError("rfft needs at least one sample")
    return np.fft.rfft(x, axis=axis)


def irfft(spectrum, n: int, axis: int = -1) -> np.ndarray:
    return np.fft.irfft(np.asarray(spectrum), n=n, axis=axis)


def circular_xcorr(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """All-pairs circular cross-correlation along ``axis``.

    For ``x`` of shape ``(..., d, L)`` (with ``axis=-1``) returns
    ``(..., d, d, L)`` where ``out[..., i, j, tau] = sum_t x_i[t] * x_j[(t + tau) % L]``.
    """
    x = np.moveaxis(np.asarray(x, dtype=np.float64), axis, -1)
    n = x.shape[-1]
    f = rfft(x)
    cross = np.conj(f)[..., :, None, :] * f[..., None, :, :]
    return irfft(cross, n)
