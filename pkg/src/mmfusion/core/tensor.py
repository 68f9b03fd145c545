"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`Graph` is a tape: while one is active (``with Graph() as g:``),
every primitive applied to an input that requires a gradient appends a
node. :func:`backward` walks the tape once in reverse and accumulates
gradients into leaf tensors (parameters). Graphs are rebuilt on every
forward pass, so sequence lengths may differ between calls.
"""
from __future__ import annotations

import threading
from typing import Callable

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when the inputs of a primitive do not conform."""


class Tensor:
    """A float64 array plus an optional gradient accumulator.

    Leaf tensors created with ``requires_grad=True`` own a zero-initialised
    ``grad`` buffer of the same shape. Tensors produced by primitives have
    ``grad = None``; their gradients only live inside :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name

    @classmethod
    def _result(cls, data, requires_grad):
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return self.grad is not None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; every method routes through apply()
    def __add__(self, other):
        return apply("add", self, other)

    def __radd__(self, other):
        return apply("add", other, self)

    def __sub__(self, other):
        return apply("sub", self, other)

    def __rsub__(self, other):
        return apply("sub", other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return apply("scale", self, factor=float(other))
        return apply("mul", self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return apply("scale", self, factor=-1.0)

    def __matmul__(self, other):
        return apply("matmul", self, other)

    def __rmatmul__(self, other):
        return apply("matmul", other, self)

    def __getitem__(self, index):
        return apply("slice", self, index=index)

    def sum(self, axis=None, keepdims=False):
        return apply("sum", self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return apply("mean", self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply("reshape", self, shape=shape)

    def transpose(self, *axes):
        return apply("transpose", self, axes=axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Node:
    __slots__ = ("name", "inputs", "out", "back")

    def __init__(self, name, inputs, out, back):
        self.name = name
        self.inputs = inputs
        self.out = out
        self.back = back


_local = threading.local()


def _stack():
    if not hasattr(_local, "graphs"):
        _local.graphs = []
    return _local.graphs


class Graph:
    """Tape of primitive applications in execution (topological) order."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def __len__(self):
        return len(self.nodes)


def active_graph() -> Graph | None:
    stack = _stack()
    return stack[-1] if stack else None


# name -> forward function returning (output array, backward closure)
PRIMITIVES: dict[str, Callable] = {}


def primitive(name):
    def register(fn):
        PRIMITIVES[name] = fn
        return fn

    return register


def apply(name: str, *inputs, **attrs) -> Tensor:
    """Apply primitive ``name`` to ``inputs`` and record it on the active graph."""
    try:
        fwd = PRIMITIVES[name]
    except KeyError:
        raise KeyError(f"unknown primitive {name!r}") from None
    tensors = [as_tensor(x) for x in inputs]
    out, back = fwd(*(t.data for t in tensors), **attrs)
    needs = any(t.requires_grad for t in tensors)
    graph = active_graph() if needs else None
    result = Tensor._result(out, graph is not None)
    if graph is not None:
        graph.nodes.append(Node(name, tensors, result, back))
    return result


def backward(graph: Graph, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every leaf's ``grad`` buffer."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = pending.pop(id(node.out), None)
        if g is None:
            continue
        grads = node.back(g)
        for t, gi in zip(node.inputs, grads):
            if gi is None or not t.requires_grad:
                continue
            if t.grad is not None:
                t.grad += gi
            else:
                key = id(t)
                prev = pending.get(key)
                pending[key] = gi if prev is None else prev + gi
