from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    """Bias-corrected Adam (Kingma & Ba) with per-parameter moments."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             frozen=()) -> None:
        """Update ``params`` in place. Names in ``frozen`` (or starting with a
        frozen prefix ending in '.') are left untouched."""
        names = [k for k in params if not _is_frozen(k, frozen)]
        for k in names:
            g = grads[k]
            if g.shape != params[k].shape:
                raise ValueError(f"gradient for {k} has shape {g.shape}, expected {params[k].shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient for {k}; step aborted")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k in names:
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[k] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)

    def hyper(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "epsilon": self.epsilon, "t": self.t}


def adam_step(state: AdamState, params, grads, frozen=()):
    state.step(params, grads, frozen)
    return params


def _is_frozen(name: str, frozen) -> bool:
    for f in frozen:
        if name == f or (f.endswith(".") and name.startswith(f)):
            return True
    return False
