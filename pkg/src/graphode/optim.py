"""AdamW with decoupled weight decay.

Decay multiplies the weights directly by (1 - lr * wd) each step instead of
being folded into the gradient, so the adaptive moments never see it. State
is keyed by parameter name and stays in float64.
"""

from __future__ import annotations

import numpy as np

from .autodiff import NumericsError


class AdamW:
    def __init__(self, lr=0.001, weight_decay=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update params in place from one gradient dict."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericsError(f"non-finite gradient for parameter '{name}'")
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(p)
                self._v[name] = np.zeros_like(p)
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay != 0.0:
                p *= 1.0 - self.lr * self.weight_decay
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
