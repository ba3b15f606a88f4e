"""AdaBelief: Adam with the second moment tracking ``(g - m)^2`` instead of ``g^2``."""
from __future__ import annotations

import numpy as np


class AdaBelief:
    """Updates arrays in place. Weight decay is decoupled (``p *= 1 - lr * wd``).

    >>> opt = AdaBelief(lr=0.1)
    >>> p = {"w": np.array([1.0])}
    >>> opt.step(p, {"w": np.array([0.5])})
    >>> float(p["w"][0]) < 1.0
    True
    """

    def __init__(self, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-16,
                 weight_decay: float = 0.0):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        b1, b2 = betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        self.lr = lr
        self.b1, self.b2 = b1, b2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: dict = {}
        self.s: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for key, g in grads.items():
            p = params[key]
            if key not in self.m:
                self.m[key] = np.zeros_like(p)
                self.s[key] = np.zeros_like(p)
            m = self.m[key]
            m *= self.b1
            m += (1.0 - self.b1) * g
            s = self.s[key]
            s *= self.b2
            s += (1.0 - self.b2) * (g - m) ** 2 + self.eps
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            p -= self.lr * (m / bc1) / (np.sqrt(s / bc2) + self.eps)
