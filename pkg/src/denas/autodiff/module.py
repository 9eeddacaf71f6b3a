"""Parameter containers."""

from __future__ import annotations

import numpy as np

from .tensor import Parameter, get_default_dtype


class Module:
    """Base class that discovers parameters held in attributes, lists and dicts."""

    def named_parameters(self, prefix=""):
        seen = set()
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            yield from _walk(value, f"{prefix}{name}", seen)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data[...] = arr

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk(value, name, seen):
    if isinstance(value, Parameter):
        if id(value) not in seen:
            seen.add(id(value))
            if value.name is None:
                value.name = name
            yield name, value
    elif isinstance(value, Module):
        for sub, v in vars(value).items():
            if not sub.startswith("_"):
                yield from _walk(v, f"{name}.{sub}", seen)
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{name}.{i}", seen)
    elif isinstance(value, dict):
        for k, v in value.items():
            yield from _walk(v, f"{name}.{k}", seen)


def kaiming(rng, shape, fan_in, gain=1.0):
    std = gain * np.sqrt(2.0 / (1.0 + 0.2**2) / max(fan_in, 1))
    return Parameter(rng.normal(0.0, std, size=shape).astype(get_default_dtype()))


def zeros(shape):
    return Parameter(np.zeros(shape, dtype=get_default_dtype()))
