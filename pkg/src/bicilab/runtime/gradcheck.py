"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numerical_grads(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """d fn / d array for each input, by central differences with step ``h``."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out = []
    for i, a in enumerate(arrays):
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            orig = a[idx]
            a[idx] = orig + h
            fp = fn(*[Tensor(x) for x in arrays]).item()
            a[idx] = orig - h
            fm = fn(*[Tensor(x) for x in arrays]).item()
            a[idx] = orig
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def analytic_grads(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray]) -> list[np.ndarray]:
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    backward(fn(*leaves))
    return [leaf.grad if leaf.grad is not None else np.zeros(leaf.shape) for leaf in leaves]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor_ratio: float = 1e-3) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|, floor).

    The floor is ``floor_ratio`` times the tensor's largest numeric gradient,
    so components many orders below the tensor scale are judged absolutely at
    that scale instead of amplifying finite-difference round-off.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(numeric), initial=0.0)), float(np.max(np.abs(analytic), initial=0.0)))
    if scale == 0.0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor_ratio * scale)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-5) -> list[float]:
    """Relative error per input between backward() and finite differences."""
    return [relative_error(a, n) for a, n in zip(analytic_grads(fn, arrays), numerical_grads(fn, arrays, h))]
