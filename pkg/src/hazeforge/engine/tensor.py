"""Reverse-mode autodiff over fp64 numpy arrays.

A :class:`Tensor` records the operation that produced it (its parents and a
closure mapping the output gradient to parent gradients). :class:`Graph`
collects those records in topological order starting from a scalar output and
replays them backwards exactly once each.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ContractError, DimensionError

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) \
            or data.dtype != np.float64 else data
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.name = name

    @property
    def shape(self) -> tuple:
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
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

    # operator sugar; elementwise ops require equal shapes or a python scalar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(Tensor(np.full(self.shape, float(other))), self)

    def __neg__(self):
        return neg(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``data`` as an op output, recording the op if any parent needs grad.

    ``backward_fn(g)`` must return one gradient (or None) per parent.
    """
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


class Graph:
    """Topologically ordered record of the ops that produced ``output``."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes: list[Tensor] = []
        seen: set[int] = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in reversed(node._parents):
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

    def backward(self) -> None:
        out = self.output
        if out.data.size != 1 or out.data.ndim != 0:
            raise ContractError(f"backward needs a scalar loss, got shape {out.shape}")
        grads: dict[int, np.ndarray] = {id(out): np.ones((), dtype=np.float64)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if node._backward is None:
                if node.requires_grad and g is not None:
                    node.grad = g if g.shape == node.shape else np.broadcast_to(g, node.shape).copy()
                continue
            if g is None:
                continue
            pgrads = node._backward(g)
            for p, pg in zip(node._parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        # parameters that received no gradient path still get an explicit zero
        for node in self.nodes:
            if node._backward is None and node.requires_grad and node.grad is None:
                node.grad = np.zeros(node.shape)
        self.release()

    def release(self) -> None:
        for node in self.nodes:
            if node._backward is not None:
                node._parents = ()
                node._backward = None
        self.nodes = []


def backward(loss: Tensor) -> Graph:
    """Populate ``.grad`` on every leaf that ``loss`` depends on.

    Leaf gradients are overwritten, not accumulated; the graph is freed.
    """
    if loss.data.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = Graph(loss)
    for node in graph.nodes:
        if node._backward is None:
            node.grad = None
    graph.backward()
    return graph


# ---------------------------------------------------------------------------
# elementwise


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return make_result(a.data + c, (a,), lambda g: (g,))
    _check_same(a, b, "add")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return make_result(a.data - c, (a,), lambda g: (g,))
    _check_same(a, b, "sub")
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return make_result(a.data * c, (a,), lambda g: (g * c,))
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return make_result(a.data / c, (a,), lambda g: (g / c,))
    _check_same(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return make_result(out, (a, b), lambda g: (g / bd, -g * out / bd))


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return make_result(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def sqrt(a: Tensor) -> Tensor:
    """Square root; the derivative at exactly 0 is taken as 0."""
    out = np.sqrt(a.data)

    def bw(g):
        safe = np.where(out > 0.0, out, 1.0)
        return (np.where(out > 0.0, 0.5 * g / safe, 0.0),)

    return make_result(out, (a,), bw)


def abs(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    """Absolute value; subgradient 0 at 0."""
    ad = a.data
    return make_result(np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def relu(a: Tensor) -> Tensor:
    ad = a.data
    mask = ad > 0.0
    return make_result(np.where(mask, ad, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    ad = a.data
    # split by sign to keep exp() from overflowing
    e = np.exp(-np.abs(ad))
    out = np.where(ad >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make_result(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,))


# ---------------------------------------------------------------------------
# reductions and shape ops


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axis(axis, a.ndim)
    shape = a.shape
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(out, dtype=np.float64), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return mul(sum(a, axes, keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    out = a.data.reshape(shape)
    return make_result(out, (a,), lambda g: (g.reshape(old),))


def expand(a: Tensor, shape) -> Tensor:
    """Explicit broadcast of ``a`` to ``shape`` (numpy rules)."""
    old = a.shape
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise DimensionError(f"expand: cannot broadcast {old} to {tuple(shape)}") from exc
    lead = len(shape) - len(old)

    def bw(g):
        if lead:
            g = g.sum(axis=tuple(range(lead)))
        axes = tuple(i for i, n in enumerate(old) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return make_result(np.ascontiguousarray(out), (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != ax
        ):
            raise DimensionError(f"concat: incompatible shapes {ref} and {t.shape} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        idx = [slice(None)] * g.ndim
        res = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[ax] = slice(lo, hi)
            res.append(g[tuple(idx)])
        return tuple(res)

    return make_result(out, tuple(tensors), bw)


def take(a: Tensor, start: int, stop: int, axis: int) -> Tensor:
    """Slice ``a[start:stop]`` along ``axis``."""
    ax = axis % a.ndim
    idx = [slice(None)] * a.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)
    shape = a.shape
    out = a.data[idx].copy()

    def bw(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return make_result(out, (a,), bw)


def clip(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clamp values; gradient flows only where the input was inside [lo, hi]."""
    ad = a.data
    out = np.clip(ad, lo, hi)
    mask = out == ad
    return make_result(out, (a,), lambda g: (g * mask,))
