from typing import Dict, Iterable

import numpy as np


class Adam:
    """Adaptive-moment optimizer over a dict of named arrays with one learning rate per name"""

    def __init__(self, learning_rates: Dict[str, float], beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-15):
        self.learning_rates = dict(learning_rates)
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        """Update params in place"""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t

        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])

            self.m[name] *= self.beta1
            self.m[name] += (1.0 - self.beta1) * g
            self.v[name] *= self.beta2
            self.v[name] += (1.0 - self.beta2) * (g * g)

            denom = np.sqrt(self.v[name] / bc2) + self.epsilon
            params[name] -= (self.learning_rates[name] / bc1) * self.m[name] / denom

    def keep_rows(self, names: Iterable[str], keep: np.ndarray):
        """Drop moment rows of pruned Gaussians so they stay aligned with the parameters"""
        for name in names:
            if name in self.m:
                self.m[name] = self.m[name][keep]
                self.v[name] = self.v[name][keep]
