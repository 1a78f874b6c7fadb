"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import Tape, Tensor, backward

__all__ = ["numeric_grad", "analytic_grad", "max_relative_error", "gradcheck"]


def analytic_grad(fn: Callable[[dict], Tensor], arrays: dict) -> dict:
    leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
    with Tape() as tape:
        loss = fn(leaves)
    grads = backward(loss, tape)
    return {k: grads.get_or_zeros(k, v.shape) for k, v in arrays.items()}


def numeric_grad(fn: Callable[[dict], Tensor], arrays: dict, step: float = 1e-5) -> dict:
    """Central differences of ``fn`` (which must return a scalar tensor)."""
    work = {k: np.array(v, dtype=np.float64) for k, v in arrays.items()}
    out = {}
    for name, arr in work.items():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(fn({k: Tensor(v) for k, v in work.items()}).data)
            flat[i] = orig - step
            down = float(fn({k: Tensor(v) for k, v in work.items()}).data)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        out[name] = g
    return out


def max_relative_error(a: dict, b: dict, floor: float = 1e-3) -> float:
    """Largest ``|a - b| / max(|a|, |b|, floor)`` over all entries.

    The floor keeps near-zero gradients from inflating the ratio; below it the
    comparison is effectively absolute.
    """
    worst = 0.0
    for k in a:
        x, y = np.asarray(a[k], dtype=np.float64), np.asarray(b[k], dtype=np.float64)
        denom = np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
        if x.size:
            worst = max(worst, float(np.max(np.abs(x - y) / denom)))
    return worst


def gradcheck(fn: Callable[[dict], Tensor], arrays: dict, step: float = 1e-5) -> float:
    """Max relative error between tape and finite-difference gradients."""
    return max_relative_error(analytic_grad(fn, arrays), numeric_grad(fn, arrays, step))
