"""AdamW with decoupled weight decay and a warmup-cosine learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from spssl.autodiff import Tensor


def lr_at(step: int, total_steps: int, warmup_steps: int, base_lr: float, min_lr: float = 0.0) -> float:
    """Linear warmup from 0 to ``base_lr``, then cosine decay to ``min_lr``."""
    if warmup_steps >= total_steps:
        raise ValueError("warmup must be shorter than the total schedule")
    if not 0 <= step <= total_steps:
        raise ValueError("step outside schedule")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    frac = (step - warmup_steps) / (total_steps - warmup_steps)
    return min_lr + (base_lr - min_lr) * 0.5 * (1.0 + math.cos(math.pi * frac))


def decays_weight(name: str, tensor: Tensor) -> bool:
    """Weight decay applies to weight matrices only.

    Excluded: biases, layer-norm gains/shifts, positional embeddings and the
    class/mask tokens (i.e. everything that is not a >=2-D projection weight).
    """
    return tensor.ndim >= 2 and name.endswith(".w")


class AdamW:
    """Standard AdamW with bias-corrected moments over a named parameter dict."""

    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self, lr: float) -> float:
        """Apply one update from the accumulated ``.grad``s; returns grad norm."""
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        sq_norm = 0.0
        for name, t in self.params.items():
            g = t.grad
            if g is None:
                g = np.zeros_like(t.data)
            sq_norm += float(np.vdot(g, g))
            if self.weight_decay and decays_weight(name, t):
                t.data *= 1.0 - lr * self.weight_decay
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            t.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return math.sqrt(sq_norm)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def state_dict(self) -> dict:
        return {"step_count": self.step_count, "m": self.m, "v": self.v}

    def load_state_dict(self, state: dict) -> None:
        self.step_count = int(state["step_count"])
        for k in self.m:
            self.m[k] = np.array(state["m"][k], copy=True)
            self.v[k] = np.array(state["v"][k], copy=True)
