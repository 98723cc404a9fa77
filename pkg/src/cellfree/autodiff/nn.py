"""Parameter containers, batch normalization and Adam."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, as_tensor, mul, sqrt, tsum


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_out, fan_in)), requires_grad=True)


class BatchNorm:
    """Per-feature standardization over every axis but the last.

    In training mode statistics come from the batch (optionally restricted to
    entries where ``mask`` is 1) and update exponential running averages;
    evaluation mode uses the running averages. Variances are biased.
    """

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(num_features), requires_grad=True)
        self.beta = Tensor(np.zeros(num_features), requires_grad=True)
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self.momentum = momentum
        self.eps = eps

    def parameters(self) -> dict:
        return {"gamma": self.gamma, "beta": self.beta}

    def __call__(self, x, training: bool, mask=None):
        x = as_tensor(x)
        axes = tuple(range(x.ndim - 1))
        if training:
            if x.shape[0] < 2:
                raise ValueError("batch normalization needs a batch of at least 2 in training mode")
            if mask is None:
                w = np.ones(x.shape[:-1] + (1,))
            else:
                w = np.broadcast_to(np.asarray(mask, float), x.shape[:-1] + (1,))
            count = max(float(w.sum()), 1.0)
            mu = mul(tsum(mul(x, w), axes, keepdims=True), 1.0 / count)
            centred = x - mu
            var = mul(tsum(mul(mul(centred, centred), w), axes, keepdims=True), 1.0 / count)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu.data.reshape(-1)
            self.running_var = (1 - m) * self.running_var + m * var.data.reshape(-1)
            out = centred / sqrt(var + self.eps)
        else:
            out = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
        out = out * self.gamma + self.beta
        if mask is not None:
            out = out * np.asarray(mask, float)
        return out


class Adam:
    """Bias-corrected Adam over a name -> Tensor mapping."""

    def __init__(self, params: dict, lr: float = 0.01, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, grads: dict | None = None):
        """One update; ``grads`` defaults to each parameter's ``.grad``."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad if grads is None else grads.get(name)
            if g is None:
                continue
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "lr": self.lr}
