"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .rng import Rng
from .tensor import Tensor


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, step: float = 1e-5,
                 coords: np.ndarray | None = None) -> np.ndarray:
    """d fn() / d t by central differences, at ``coords`` (flat indices) or everywhere."""
    flat = t.data.reshape(-1)
    idx = np.arange(flat.size) if coords is None else coords
    out = np.zeros(len(idx))
    for j, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + step
        hi = fn().item()
        flat[i] = orig - step
        lo = fn().item()
        flat[i] = orig
        out[j] = (hi - lo) / (2.0 * step)
    return out


def relative_error(a: np.ndarray, b: np.ndarray, atol: float = 1e-8) -> float:
    """``|a - b| / (|a| + |b|)``; both norms below ``atol`` count as agreement.

    The floor keeps structurally-zero gradients (e.g. an attention key bias,
    which softmax shift-invariance cancels) from being judged on roundoff.
    """
    a, b = np.ravel(a), np.ravel(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if max(na, nb) < atol:
        return 0.0
    denom = na + nb
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(fn: Callable[[], Tensor], params: dict[str, Tensor], step: float = 1e-5,
                    max_coords: int | None = None, rng: Rng | None = None) -> dict[str, float]:
    """Compare backprop with finite differences; returns per-tensor relative error.

    ``fn`` must rebuild the scalar loss from the current parameter values and
    be deterministic.  ``max_coords`` subsamples large tensors.
    """
    for p in params.values():
        p.grad = None
    fn().backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    rng = rng or Rng(0)
    errors = {}
    for k, p in params.items():
        coords = None
        if max_coords is not None and p.size > max_coords:
            coords = np.sort(rng.choice(p.size, max_coords, replace=False))
        num = numeric_grad(fn, p, step, coords)
        ana = analytic[k].reshape(-1) if coords is None else analytic[k].reshape(-1)[coords]
        errors[k] = relative_error(ana, num)
    for p in params.values():
        p.grad = None
    return errors
