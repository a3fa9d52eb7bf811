"""Tensor values and the recording tape."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """A primitive received operands whose shapes it cannot combine."""


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""


class TapeError(RuntimeError):
    """Misuse of a tape: backward without forward, non-scalar loss, ..."""


class Tensor:
    """Dense array with an optional gradient slot.

    Floating data is stored as float32 unless an explicit dtype is given.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f" or arr.dtype != DEFAULT_DTYPE:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar; all of these record on the active tape
    def __add__(self, other):
        from .primitives import elementwise_add

        return elementwise_add(self, _as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        from .primitives import elementwise_mul

        return elementwise_mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __sub__(self, other):
        from .primitives import elementwise_add, neg

        return elementwise_add(self, neg(_as_tensor(other)))

    def __neg__(self):
        from .primitives import neg

        return neg(self)

    def __matmul__(self, other):
        from .primitives import matmul

        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


@dataclass
class Node:
    prim: Any
    inputs: tuple[Tensor, ...]
    output: Tensor
    ctx: Any = None

    def label(self, index: int) -> str:
        return f"node {index} ({self.prim.name})"


_local = threading.local()


def current_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


@dataclass
class Tape:
    """Append-only record of primitive applications.

    Use as a context manager; primitives applied inside the block are
    recorded in order. A recorded tape can be replayed with new named
    inputs (see :func:`forward`) and differentiated once per forward pass.
    """

    nodes: list[Node] = field(default_factory=list)
    inputs: dict[str, Tensor] = field(default_factory=dict)
    outputs: dict[str, Tensor] = field(default_factory=dict)
    leaves: list[Tensor] = field(default_factory=list)
    materialized: bool = False
    _leaf_ids: set = field(default_factory=set, repr=False)
    _produced: set = field(default_factory=set, repr=False)

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()
        if exc[0] is None:
            self.materialized = True

    def input(self, name: str, data, requires_grad: bool = False) -> Tensor:
        t = data if isinstance(data, Tensor) else Tensor(data, requires_grad=requires_grad)
        t.name = t.name or name
        self.inputs[name] = t
        if t.requires_grad:
            self.watch(t)
        return t

    def output(self, name: str, t: Tensor) -> Tensor:
        self.outputs[name] = t
        return t

    def watch(self, t: Tensor) -> Tensor:
        """Register a leaf so it receives a (possibly zero) gradient."""
        if id(t) not in self._leaf_ids and id(t) not in self._produced:
            self._leaf_ids.add(id(t))
            self.leaves.append(t)
        return t

    def record(self, node: Node) -> None:
        for t in node.inputs:
            if t.requires_grad and id(t) not in self._produced:
                self.watch(t)
        self._produced.add(id(node.output))
        self.nodes.append(node)

    def constants(self) -> list[Tensor]:
        """Node inputs that are neither leaves nor produced by a node."""
        seen: set[int] = set()
        out = []
        for node in self.nodes:
            for t in node.inputs:
                key = id(t)
                if key in seen or key in self._produced or key in self._leaf_ids:
                    continue
                seen.add(key)
                out.append(t)
        return out
