"""Module/parameter plumbing with name-keyed deterministic initialization."""

from __future__ import annotations

import math
import zlib
from typing import Iterator, Optional

import numpy as np

from .tensor import DEFAULT_DTYPE, Tensor


class Parameter(Tensor):
    """Trainable leaf tensor; ``init`` says how :meth:`Module.initialize` fills it.

    ``init`` is ``"zeros"``, ``"ones"``, or ``("uniform", fan_in)`` for a
    uniform draw with variance ``1 / fan_in``.
    """

    __slots__ = ("init",)

    def __init__(self, shape, init="uniform", fan_in: Optional[int] = None, dtype=DEFAULT_DTYPE):
        super().__init__(np.zeros(tuple(shape), dtype=dtype), requires_grad=True, dtype=dtype)
        if init == "uniform":
            if fan_in is None:
                fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else int(shape[0])
            init = ("uniform", fan_in)
        self.init = init


def param_rng(seed: int, name: str) -> np.random.Generator:
    """Generator keyed on (seed, parameter name), independent of build order."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


class Module:
    """Minimal container: attributes that are Parameters or Modules register in order."""

    def __init__(self) -> None:
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_modules(self, prefix: str = "") -> Iterator[tuple]:
        yield prefix.rstrip("."), self
        for name, child in self._children.items():
            yield from child.named_modules(prefix + name + ".")

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def initialize(self, seed: int) -> "Module":
        for name, p in self.named_parameters():
            init = p.init
            if init == "zeros":
                p.data[...] = 0
            elif init == "ones":
                p.data[...] = 1
            else:
                _, fan_in = init
                bound = math.sqrt(3.0 / max(fan_in, 1))
                p.data[...] = param_rng(seed, name).uniform(-bound, bound, size=p.shape)
        return self

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data[...] = arr


class ModuleList(Module):
    def __init__(self, modules=()) -> None:
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]
