"""Central finite-difference checks for the autodiff engine."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .autograd import Tensor, backward

# Per unit of loss magnitude: below ``REL_FLOOR * max(1, |L|)`` a gradient
# entry is compared in absolute terms. Central differences with h = 1e-5
# carry round-off of roughly eps * |L| / h ~ 2e-11 * |L|, so a relative error
# on smaller entries would measure that noise, not the engine.
REL_FLOOR = 1e-6


def analytic_grads(loss_fn: Callable[[], Tensor], params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    for p in params.values():
        p.grad = None
    backward(loss_fn())
    return {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}


def numeric_grads(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-5) -> dict[str, np.ndarray]:
    out = {}
    for k, p in params.items():
        flat = p.data.reshape(-1)
        g = np.zeros(flat.size)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss_fn().item()
            flat[i] = old - h
            down = loss_fn().item()
            flat[i] = old
            g[i] = (up - down) / (2 * h)
        out[k] = g.reshape(p.data.shape)
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    """Elementwise ``|a - b| / max(|a|, |b|, floor)``."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def max_relative_error(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-5,
                       floor: float = REL_FLOOR) -> tuple[float, str]:
    """Worst relative error over every parameter entry, and the tensor it sits in."""
    floor = floor * max(1.0, abs(loss_fn().item()))
    an = analytic_grads(loss_fn, params)
    fd = numeric_grads(loss_fn, params, h)
    worst, where = 0.0, ""
    for k in params:
        err = float(relative_error(an[k], fd[k], floor).max(initial=0.0))
        if err > worst:
            worst, where = err, k
    return worst, where
