"""Central finite-difference checks for the autodiff engine."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numerical_grad(fn, tensor: Tensor, h: float = 1e-5) -> np.ndarray:
    """d fn() / d tensor by central differences; ``fn`` returns a scalar Tensor."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(fn().data)
        flat[i] = orig - h
        down = float(fn().data)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """``||a - b|| / max(||a||, ||b||, floor)``."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


def check_gradients(fn, params: dict, h: float = 1e-5) -> dict:
    """Relative error between autodiff and finite-difference gradients per parameter."""
    for p in params.values():
        p.grad = None
    out = fn()
    out.backward()
    errors = {}
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        errors[name] = relative_error(analytic, numerical_grad(fn, p, h))
    return errors
