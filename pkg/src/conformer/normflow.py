"""Conditional normalizing-flow head driven by encoder and decoder GRU states."""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .numcore import Linear, Module, Tensor

SIGMA_FLOOR = 1e-6

# "flow": full chain; "ze"/"zd"/"z0": emit that latent instead; "none": no flow head
NF_VARIANTS = ("flow", "ze", "zd", "z0", "none")
LATENT_LAYERS = ("first", "last")


class Fcn(Module):
    """One hidden tanh layer."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator):
        self.hidden = Linear(d_in, d_hidden, rng)
        self.out = Linear(d_hidden, d_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.out(nc.tanh(self.hidden(x)))


class FlowConditioner(Module):
    """Location and (strictly positive) scale networks over the same input."""

    def __init__(self, d_in: int, d: int, rng: np.random.Generator):
        self.mu = Fcn(d_in, d, d, rng)
        self.sigma = Fcn(d_in, d, d, rng)

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        return self.mu(x), nc.softplus(self.sigma(x)) + SIGMA_FLOOR


class FlowParams(Module):
    def __init__(self, d: int, d_t: int, n_transforms: int, rng: np.random.Generator):
        if n_transforms < 0:
            raise ValueError("number of flow transformations must be non-negative")
        self.enc = FlowConditioner(d, d, rng)
        self.init = FlowConditioner(d, d, rng)
        self.chain = [FlowConditioner(2 * d, d, rng) for _ in range(n_transforms)]
        self.out = Linear(d, d_t, rng)

    @property
    def n_transforms(self) -> int:
        return len(self.chain)


def encoder_latent(h_e: Tensor, cond: FlowConditioner, eps) -> Tensor:
    """Reparameterized draw ``mu(h_e) + sigma(h_e) * eps``."""
    mu, sigma = cond(h_e)
    return mu + sigma * nc.as_tensor(eps)


def init_flow(h_d: Tensor, z_e: Tensor, cond: FlowConditioner) -> Tensor:
    """``z_0 = mu(h_d) + sigma(h_d) * z_e``.

    ``z_e`` must broadcast against the decoder positions: either decoder length
    or pooled to a single position.
    """
    if z_e.shape[-2] not in (1, h_d.shape[-2]):
        raise ValueError(f"encoder latent length {z_e.shape[-2]} does not align with "
                         f"decoder length {h_d.shape[-2]}")
    mu, sigma = cond(h_d)
    return mu + sigma * z_e


def flow_chain(z0: Tensor, h_d: Tensor, chain) -> Tensor:
    """``z_t = mu_t([h_d, z_{t-1}]) + sigma_t([h_d, z_{t-1}]) * z_{t-1}`` for each step."""
    z = z0
    for cond in chain:
        hz = nc.concat([nc.broadcast_to(h_d, z.shape), z], axis=-1)
        mu, sigma = cond(hz)
        z = mu + sigma * z
    return z


def pool_latent(z_e: Tensor) -> Tensor:
    """Mean over encoder positions, kept as a length-1 time axis for broadcasting."""
    return nc.mean(z_e, axis=-2, keepdims=True)


def flow_latent(h_e: Tensor, h_d: Tensor, params: FlowParams, eps: np.ndarray,
                variant: str = "flow") -> Tensor:
    """Final latent for one batch of noise draws, aligned to decoder positions.

    ``eps`` matches ``h_e`` (or ``h_d`` for the ``zd`` variant), possibly with
    extra leading sample axes.
    """
    if variant == "zd":
        return encoder_latent(h_d, params.enc, eps)
    z_e = encoder_latent(h_e, params.enc, eps)
    if variant == "ze":
        return nc.broadcast_to(pool_latent(z_e), z_e.shape[:-2] + h_d.shape[-2:])
    z0 = init_flow(h_d, pool_latent(z_e), params.init)
    if variant == "z0":
        return z0
    if variant == "flow":
        return flow_chain(z0, h_d, params.chain)
    raise ValueError(f"unknown flow variant {variant!r}; expected one of {NF_VARIANTS}")


def flow_forecast(h_e: Tensor, h_d: Tensor, params: FlowParams, L_y: int, n_samples: int = 1,
                  rng: np.random.Generator | None = None, variant: str = "flow",
                  eps: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
    """Sample the flow ``n_samples`` times; returns (mean forecast, per-point variance).

    Forecasts are the last ``L_y`` decoder positions projected to the target
    width. Every flow step acts per position, so only those positions are
    computed. ``eps`` overrides sampling and must have shape
    ``(n_samples, *noise_shape)``, where the noise matches ``h_e`` (or the last
    ``L_y`` rows of ``h_d`` for the ``zd`` variant). Variance uses ``n - 1`` in
    the denominator and is zero for a single draw.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    if not 1 <= L_y <= h_d.shape[-2]:
        raise ValueError(f"L_y={L_y} must lie in [1, decoder length {h_d.shape[-2]}]")
    h_d = h_d[..., -L_y:, :]
    noise_shape = (h_d if variant == "zd" else h_e).shape
    if eps is None:
        rng = rng if rng is not None else np.random.default_rng()
        eps = rng.standard_normal((n_samples, *noise_shape))
    elif eps.shape != (n_samples, *noise_shape):
        raise ValueError(f"eps shape {eps.shape} != {(n_samples, *noise_shape)}")
    z = flow_latent(h_e, h_d, params, eps, variant)
    draws = params.out(z)  # (n_samples, ..., L_y, d_t)
    mean = nc.mean(draws, axis=0)
    if n_samples > 1:
        var = draws.data.var(axis=0, ddof=1)
    else:
        var = np.zeros(mean.shape)
    return mean, var
