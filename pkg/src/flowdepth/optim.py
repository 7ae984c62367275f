"""Small adaptive first-order optimizer used by the per-instance solvers."""

from __future__ import annotations

import numpy as np


class Adam:
    """Per-parameter adaptive gradient steps (beta1=0.9, beta2=0.999)."""

    def __init__(self, step_size: float = 1e-2, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.step_size = step_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update parameters in place from matching-shaped gradients."""
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        correction = np.sqrt(1.0 - b2**self._t) / (1.0 - b1**self._t)
        for name, g in grads.items():
            p = params[name]
            m = self._m.setdefault(name, np.zeros_like(p))
            v = self._v.setdefault(name, np.zeros_like(p))
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            p -= self.step_size * correction * m / (np.sqrt(v) + self.eps)
