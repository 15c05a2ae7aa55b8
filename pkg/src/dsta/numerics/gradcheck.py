"""Central-difference gradient oracle."""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numeric_grad(f: Callable[[], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` wrt every element of ``x.data``."""
    g = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f().data)
        flat[i] = orig - h
        fm = float(f().data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def grad_check(f: Callable[..., Tensor], x: Tensor | Sequence[Tensor], h: float = 1e-5) -> float:
    """Max over elements of ``|analytic - numeric| / max(1, |numeric|)``.

    ``f`` is called as ``f(*xs)`` and must return a scalar tensor. Inputs
    should be float64 for meaningful results. Any non-finite value along the
    way yields ``inf``.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.requires_grad = True
        t.grad = None
    out = f(*xs)
    if not np.all(np.isfinite(out.data)):
        return math.inf
    if out.requires_grad:
        backward(out)
    worst = 0.0
    for t in xs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        numeric = numeric_grad(lambda: f(*xs), t, h)
        if not (np.all(np.isfinite(numeric)) and np.all(np.isfinite(analytic))):
            return math.inf
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
