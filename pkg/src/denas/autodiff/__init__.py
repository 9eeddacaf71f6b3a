"""Minimal reverse-mode differentiation over the primitives the operator zoo needs."""

from . import functional
from .gradcheck import NonDeterminismError, finite_difference_check
from .kernels import BACKEND
from .module import Module
from .tensor import (
    Graph,
    GraphError,
    NonFiniteError,
    Parameter,
    Tensor,
    backward,
    get_default_dtype,
    no_grad,
    precision,
    record,
    set_default_dtype,
)

__all__ = [
    "BACKEND",
    "Graph",
    "GraphError",
    "Module",
    "NonDeterminismError",
    "NonFiniteError",
    "Parameter",
    "Tensor",
    "backward",
    "finite_difference_check",
    "functional",
    "get_default_dtype",
    "no_grad",
    "precision",
    "record",
    "set_default_dtype",
]
