"""Adaptive-moment gradient descent on numpy parameter arrays.

Shared by the radiance-field fit and the outpainter trainer. Parameters and
moments stay in the parameter dtype (float32 in practice); the bias
correction scalars are float64.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


class Adam:
    """Classic Adam with in-place updates.

    ``params`` is a list of arrays updated in place by :meth:`step`.
    """

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0 or not 0 <= beta1 < 1 or not 0 <= beta2 < 1 or eps <= 0:
            raise ConfigError("bad Adam hyperparameters")
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads, lr_scale: float = 1.0) -> None:
        """Apply one update from gradients matching the parameter list."""
        if len(grads) != len(self.params):
            raise ConfigError(f"got {len(grads)} gradients for {len(self.params)} parameters")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        # Fold both bias corrections into one scalar on the step size.
        alpha = self.lr * lr_scale * np.sqrt(bias2) / bias1
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g.astype(p.dtype, copy=False)
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            p -= (alpha * m / (np.sqrt(v) + self.eps * np.sqrt(bias2))).astype(p.dtype, copy=False)
