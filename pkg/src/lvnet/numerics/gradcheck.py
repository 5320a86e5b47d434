"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from lvnet.errors import UsageError
from lvnet.numerics.tensor import Tensor, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    """Worst per-element relative error.

    Entries far below the largest gradient magnitude are compared against
    ``floor * max|numeric|`` instead of their own (noise-dominated) size.
    """
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    if analytic.size == 0:
        return 0.0
    scale = max(np.abs(numeric).max(), np.abs(analytic).max())
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), max(floor * scale, 1e-12))
    return float((np.abs(analytic - numeric) / denom).max())


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-4,
    max_elements: int | None = None,
    seed: int = 0,
) -> float:
    """Compare reverse-mode gradients of scalar ``fn(*inputs)`` with central differences.

    Inputs should be float64. With ``max_elements`` only that many randomly
    chosen entries per input are perturbed. Returns the worst relative error.
    """
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = fn(*inputs)
    if out.size != 1:
        raise UsageError(f"grad_check closure must return a scalar, got shape {out.shape}")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for t, grad in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_elements is not None and flat.size > max_elements:
                idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
            numeric = np.empty(idx.size)
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = float(fn(*inputs).data.sum())
                flat[i] = orig - eps
                f_minus = float(fn(*inputs).data.sum())
                flat[i] = orig
                numeric[j] = (f_plus - f_minus) / (2.0 * eps)
            worst = max(worst, relative_error(grad.reshape(-1)[idx], numeric))
    return worst
