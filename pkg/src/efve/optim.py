"""Adaptive-moment optimizer with decoupled weight decay and a maximum-tracked
second moment, driving the per-frame attribute updates.

The step direction is the usual m_hat / (sqrt(v_max_hat) + eps); the caller
multiplies it by a per-parameter learning-rate vector, so the optimizer itself
is rate-free.  v_max never decreases (the AMSGrad rule).
"""

from __future__ import annotations

import numpy as np


class AdamWAmsgrad:
    def __init__(self, n: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.v_max = np.zeros(n)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray, lr: np.ndarray) -> np.ndarray:
        """Returns updated params (a new array); lr may be scalar or per-param."""
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        self.v_max = np.maximum(self.v_max, self.v)
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v_max / (1.0 - self.beta2**self.t)
        direction = m_hat / (np.sqrt(v_hat) + self.eps)
        out = params - lr * direction
        if self.weight_decay:
            out = out - lr * self.weight_decay * params
        return out
