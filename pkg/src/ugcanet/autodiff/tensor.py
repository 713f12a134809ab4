"""Tensor value type and the define-by-run graph.

Every op in :mod:`ugcanet.autodiff.ops` produces a new :class:`Tensor`. When
gradients are enabled and any operand requires them, the op also records a
:class:`Node` holding its operands and a backward rule. Nodes carry a
monotonically increasing index, so sorting the reachable nodes by index gives
a valid topological order without keeping a global tape alive.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_counter = itertools.count()
_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (per thread)."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class GraphError(RuntimeError):
    pass


@dataclass(eq=False)
class Node:
    op: str
    parents: tuple
    backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]]
    out_id: int = 0
    index: int = field(default_factory=lambda: next(_counter))
    consumed: bool = False


class Tensor:
    """N-dimensional array with an optional gradient slot.

    ``data`` is a C-contiguous numpy array (row-major, NCHW for image-like
    values). ``grad`` is ``None`` until a backward pass reaches this tensor.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node", "name", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        # not np.ascontiguousarray: it promotes 0-d arrays to 1-d
        self.data = arr if arr.flags.c_contiguous else arr.copy(order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar (ops imported lazily to avoid a cycle) ------------
    def __add__(self, other):
        from . import ops
        return ops.add_scalar(self, other) if _is_scalar(other) else ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.add_scalar(self, -other) if _is_scalar(other) else ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.add_scalar(ops.neg(self), other)

    def __mul__(self, other):
        from . import ops
        return ops.scale(self, other) if _is_scalar(other) else ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        if _is_scalar(other):
            return ops.scale(self, 1.0 / other)
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> None:
        backward(self)


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


def trace(loss: Tensor) -> list:
    """Nodes reachable from ``loss`` in recording (topological) order."""
    seen = set()
    nodes = []
    stack = [loss]
    while stack:
        t = stack.pop()
        node = t._node
        if node is None or id(node) in seen:
            continue
        seen.add(id(node))
        nodes.append(node)
        stack.extend(node.parents)
    nodes.sort(key=lambda n: n.index)
    return nodes


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every reachable leaf that requires gradients.

    The graph is consumed: a second call on the same graph raises
    :class:`GraphError`. Gradients accumulate into existing ``.grad`` slots.
    """
    if loss.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss does not require grad; nothing was recorded")

    nodes = trace(loss)
    if any(n.consumed for n in nodes):
        raise GraphError("graph already consumed by a previous backward(); rerun the forward pass")

    grads = {id(loss): np.ones(loss.shape, dtype=np.float64)}
    leaves = {}
    if loss._node is None:
        leaves[id(loss)] = loss

    for node in reversed(nodes):
        node.consumed = True
        g = grads.pop(node.out_id, None)
        if g is None:
            node.backward = None
            continue
        parent_grads = node.backward(g)
        node.backward = None
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
            if parent._node is None:
                leaves[key] = parent

    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        g = np.asarray(g).reshape(leaf.shape).astype(leaf.dtype)
        leaf.grad = g if leaf.grad is None else leaf.grad + g


def attach(out: Tensor, op: str, parents: tuple, rule) -> Tensor:
    """Record ``out`` as produced by ``op`` when any parent needs gradients."""
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        # out_id is an int, so a node never keeps its own output alive
        out._node = Node(op, parents, rule, out_id=id(out))
        out.requires_grad = True
    return out
