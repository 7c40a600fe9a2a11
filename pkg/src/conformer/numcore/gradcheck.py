"""Finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor, get_tape, no_grad


def grad_check(f: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
               max_coords: int | None = None, seed: int = 0, floor: float = 1e-3) -> float:
    """Worst relative error between tape gradients and central differences.

    ``f`` takes no arguments and closes over ``inputs``; it must return a scalar
    and be deterministic. Each coordinate's error is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``. When
    ``max_coords`` is set, only that many randomly chosen coordinates per input
    are probed.
    """
    for t in inputs:
        t.grad = None
        t.requires_grad = True
        if not t.data.flags.c_contiguous or not t.data.flags.writeable:
            t.data = np.array(t.data, order="C")
    tape = get_tape()
    tape.clear()
    out = f()
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    out.backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for t, ga in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = rng.choice(flat.size, size=max_coords, replace=False)
            for c in coords:
                orig = flat[c]
                flat[c] = orig + eps
                fp = float(f().data)
                flat[c] = orig - eps
                fm = float(f().data)
                flat[c] = orig
                num = (fp - fm) / (2 * eps)
                if not np.isfinite(num):
                    raise NonFiniteError("non-finite finite-difference estimate")
                a = ga.reshape(-1)[c]
                err = abs(a - num) / max(abs(a), abs(num), floor)
                worst = max(worst, err)
    return worst
