from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np


@dataclass
class Adam:
    """Bias-corrected Adam over a list of weight matrices (updated in place)."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    def step(self, weights: List[np.ndarray], grads: List[np.ndarray],
             weight_decay: float = 0.0) -> List[np.ndarray]:
        if not self.m:
            self.m = [np.zeros_like(w) for w in weights]
            self.v = [np.zeros_like(w) for w in weights]
        if len(grads) != len(weights) or any(g.shape != w.shape for g, w in zip(grads, weights)):
            raise ValueError("gradient shapes do not match weights")
        self.step_count += 1
        t = self.step_count
        for w, g, m, v in zip(weights, grads, self.m, self.v):
            if weight_decay:
                # gradient of weight_decay * ||W||^2
                g = g + 2.0 * weight_decay * w
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** t)
            v_hat = v / (1 - self.beta2 ** t)
            w -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return weights


def adam_step(opt: Adam, grads, weights, weight_decay: float = 0.0):
    return opt.step(weights, grads, weight_decay)
