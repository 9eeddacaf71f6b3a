"""Tensor, graph recording and reverse-mode backward."""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager

import numpy as np

_state = threading.local()
_seq = itertools.count()
_default_dtype = np.float64


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""


class GraphError(RuntimeError):
    """Misuse of the recorded graph (non-scalar backward, replay of a consumed graph)."""


def get_default_dtype():
    return _default_dtype


def set_default_dtype(dtype):
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype}")
    _default_dtype = dtype


@contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for new tensors ("float32" or "float64")."""
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def grad_enabled():
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


def check_finite(arr, where):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {where}")


class Node:
    """One recorded primitive application."""

    __slots__ = ("name", "inputs", "backward", "seq", "out_id", "consumed")

    def __init__(self, name, inputs, backward, out_id):
        self.name = name
        self.inputs = inputs
        self.backward = backward
        self.seq = next(_seq)
        self.out_id = out_id
        self.consumed = False


class Tensor:
    """Dense array participating in reverse-mode differentiation."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype or _default_dtype)
        check_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._node is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # arithmetic sugar; the primitives live in functional.py
    def __add__(self, other):
        from . import functional as F

        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F

        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F

        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F

        if isinstance(other, (int, float)):
            return F.scale(self, other)
        return F.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import functional as F

        return F.scale(self, -1.0)

    def sum(self):
        from . import functional as F

        return F.sum(self)

    def mean(self):
        from . import functional as F

        return F.mean(self)


class Parameter(Tensor):
    """Trainable leaf tensor with a hierarchical name such as ``cell.r0.l1.conv_d1.weight``."""

    def __init__(self, data, name=None, dtype=None):
        super().__init__(data, requires_grad=True, name=name, dtype=dtype)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def record(name, out_data, inputs, backward_fn):
    """Wrap ``out_data`` as the result of primitive ``name``.

    ``backward_fn(grad_out)`` must return one gradient (or None) per input.
    """
    check_finite(out_data, name)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.name = None
    out._node = None
    out.requires_grad = False
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = Node(name, tuple(inputs), backward_fn, id(out))
    return out


class Graph:
    """Ordered record of the primitive applications that produced a tensor."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out):
        seen = set()
        nodes = []
        stack = [out]
        while stack:
            t = stack.pop()
            node = t._node
            if node is None or id(node) in seen:
                continue
            if node.consumed:
                raise GraphError(
                    "graph already consumed by a previous backward; re-run the forward pass"
                )
            seen.add(id(node))
            nodes.append(node)
            stack.extend(node.inputs)
        nodes.sort(key=lambda n: n.seq)
        return cls(nodes)

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad."""
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor that requires grad")
    if loss._node is None:
        _accumulate(loss, np.ones_like(loss.data))
        return
    graph = Graph.from_output(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(node.out_id, None)
        if g is None:
            node.consumed = True
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if t._node is None:
                _accumulate(t, gi)
            else:
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        node.consumed = True
        node.backward = None


def _accumulate(t, g):
    g = np.asarray(g, dtype=t.data.dtype).reshape(t.data.shape)
    check_finite(g, "backward")
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g
