"""Central finite-difference gradient checking for tape functions."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward
from .tensor import sum as tsum


def numerical_grad(fn: Callable[..., Tensor], inputs: Sequence[Tensor],
                   eps: float = 1e-4) -> list[np.ndarray]:
    """Central differences of the scalar ``fn(*inputs)`` w.r.t. each input."""
    grads = []
    for t in inputs:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(fn(*inputs).data.sum())
            flat[i] = orig - eps
            fm = float(fn(*inputs).data.sum())
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def analytic_grad(fn: Callable[..., Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = fn(*inputs)
    if out.data.size != 1:
        out = tsum(out)
    backward(out)
    return [np.zeros_like(t.data) if t.grad is None else t.grad for t in inputs]


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """||a-b|| / max(||a||, ||b||, floor)."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(fn, inputs, eps: float = 1e-4, floor: float = 1e-6) -> float:
    """Worst per-input relative error between analytic and numeric gradients."""
    ana = analytic_grad(fn, inputs)
    num = numerical_grad(fn, inputs, eps)
    return max(rel_error(a, n, floor) for a, n in zip(ana, num))
