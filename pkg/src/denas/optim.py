"""Adam and the cosine learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np


def adam_step(params, grads, state, lr, b1=0.9, b2=0.999, eps=1e-8):
    """In-place bias-corrected Adam update; ``state`` holds ``t`` and per-parameter ``m``, ``v``."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    state["t"] = state.get("t", 0) + 1
    t = state["t"]
    ms = state.setdefault("m", [np.zeros_like(p.data) for p in params])
    vs = state.setdefault("v", [np.zeros_like(p.data) for p in params])
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, ms, vs):
        if g is None:
            g = np.zeros_like(p.data)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype)


class Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2, self.eps = b1, b2, eps
        self.state = {}

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr, self.b1, self.b2, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_dict(self):
        return {
            "t": self.state.get("t", 0),
            "m": [m.copy() for m in self.state.get("m", [])],
            "v": [v.copy() for v in self.state.get("v", [])],
            "lr": self.lr,
        }

    def load_state_dict(self, d):
        self.lr = d["lr"]
        self.state = {"t": d["t"]}
        if d["m"]:
            self.state["m"] = [m.copy() for m in d["m"]]
            self.state["v"] = [v.copy() for v in d["v"]]


def cosine_lr(epoch, total, lr_max=2e-4, lr_min=1e-6):
    if total <= 0:
        return lr_max
    if not 0 <= epoch <= total:
        raise ValueError(f"epoch {epoch} outside [0, {total}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * epoch / total))
