"""Tensor container and the recording tape used for reverse-mode differentiation."""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np


class _State(threading.local):
    """Per-thread precision and recording stacks."""

    def __init__(self):
        self.dtypes = [np.float32]
        self.active: list[Graph] = []


_STATE = _State()


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the float type new tensors are created with.

    Training and inference always run in float32; the float64 setting exists so
    that finite-difference checks are not drowned in rounding noise.
    """
    _STATE.dtypes.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _STATE.dtypes.pop()


def default_dtype():
    return _STATE.dtypes[-1]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data)
        if arr.dtype != default_dtype():
            arr = arr.astype(default_dtype())
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self.shape)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; the implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def _raise_item(shape):
    raise ValueError(f"item() needs a one-element tensor, got shape {shape}")


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    output: int
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] = field(repr=False)


class Graph:
    """Ordered record of differentiable operations.

    Operations executed while a graph is active (``with Graph() as g``) and that
    touch at least one tensor with ``requires_grad`` are appended in execution
    order, so the node list is topologically sorted by construction.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._tensors: dict[int, Tensor] = {}

    def __enter__(self) -> "Graph":
        _STATE.active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _STATE.active.remove(self)

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor,
               backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> None:
        for t in inputs:
            self._tensors[id(t)] = t
        self._tensors[id(output)] = output
        self.nodes.append(Node(op, tuple(id(t) for t in inputs), id(output), backward))

    def produced(self) -> set[int]:
        return {n.output for n in self.nodes}

    def tensor(self, tid: int) -> Tensor:
        return self._tensors[tid]


def active_graph() -> Graph | None:
    return _STATE.active[-1] if _STATE.active else None


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording on every active graph."""
    saved = list(_STATE.active)
    _STATE.active.clear()
    try:
        yield
    finally:
        _STATE.active.extend(saved)


def backward(graph: Graph, loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf that requires grad with d(loss)/d(leaf).

    Gradients accumulate into existing ``.grad`` arrays, matching the usual
    convention; call ``zero_grad`` on parameters between steps.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    lid = id(loss)
    if lid not in graph.produced():
        raise ValueError("loss tensor was not produced on this graph")
    grads: dict[int, np.ndarray] = {lid: np.ones_like(loss.data)}
    produced = graph.produced()
    for node in reversed(graph.nodes):
        g = grads.pop(node.output, None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for tid, ig in zip(node.inputs, in_grads):
            if ig is None:
                continue
            t = graph.tensor(tid)
            if not t.requires_grad:
                continue
            if tid in grads:
                grads[tid] = grads[tid] + ig
            else:
                grads[tid] = ig
    for tid, g in grads.items():
        if tid in produced:
            continue
        t = graph.tensor(tid)
        g = g.astype(t.data.dtype, copy=False)
        t.grad = g.copy() if t.grad is None else t.grad + g
