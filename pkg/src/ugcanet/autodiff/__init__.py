"""Reverse-mode autodiff over numpy arrays."""

from . import ops
from .ops import REGISTRY, ShapeError
from .tensor import GraphError, Node, Tensor, backward, is_grad_enabled, no_grad, trace

__all__ = [
    "GraphError",
    "Node",
    "REGISTRY",
    "ShapeError",
    "Tensor",
    "backward",
    "is_grad_enabled",
    "no_grad",
    "ops",
    "trace",
]
