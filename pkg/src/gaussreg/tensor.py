"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every primitive applied to a tensor that requires gradients is appended to a
:class:`Graph` (a tape).  ``Graph.backward`` walks the tape in exact reverse
order, so gradients are deterministic and accumulate additively when a tensor
fans out into several consumers.

Only row-vector bias broadcasting is supported; every other binary op wants
identical shapes.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import BackwardError, DimensionError, DomainError, NonFiniteError

_debug_checks = False


@contextlib.contextmanager
def debug_checks(enabled: bool = True):
    """Raise ``NonFiniteError`` as soon as any primitive produces NaN/Inf."""
    global _debug_checks
    previous = _debug_checks
    _debug_checks = enabled
    try:
        yield
    finally:
        _debug_checks = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "graph", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        if any(d < 1 for d in arr.shape):
            raise DimensionError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.graph: Optional[Graph] = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = requires_grad
        t.graph = None
        t.name = None
        return t

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> Dict["Tensor", np.ndarray]:
        if self.graph is None:
            raise BackwardError("tensor was not produced by a recorded operation")
        return self.graph.backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self.shape))

    def __radd__(self, other):
        return add(_as_tensor(other, self.shape), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.shape))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.shape), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(value, shape) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.full(shape, float(value)), False)


_clock = itertools.count()


class _Record:
    __slots__ = ("kind", "inputs", "output", "backward_fn", "seq")

    def __init__(self, kind, inputs, output, backward_fn):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn
        self.seq = next(_clock)


class Graph:
    """Tape of executed primitives, in execution order."""

    def __init__(self):
        self.records: List[_Record] = []
        self._consumed = False

    def __len__(self) -> int:
        return len(self.records)

    @property
    def kinds(self) -> List[str]:
        return [r.kind for r in self.records]

    def absorb(self, other: "Graph") -> None:
        """Take over ``other``'s records, keeping global execution order."""
        if other._consumed or self._consumed:
            raise BackwardError("cannot combine a graph that already ran backward")
        for rec in other.records:
            rec.output.graph = self
        self.records = sorted(self.records + other.records, key=lambda r: r.seq)
        other.records = []

    def reset(self) -> None:
        """Allow another backward pass over the same tape.

        Leaf gradients are not cleared; call ``zero_grad`` on them first if a
        fresh gradient is wanted.
        """
        self._consumed = False

    def backward(self, loss: Tensor) -> Dict[Tensor, np.ndarray]:
        if loss.graph is not self:
            raise BackwardError("loss tensor does not belong to this graph")
        if loss.data.ndim > 1 or loss.data.size != 1:
            raise BackwardError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self._consumed:
            raise BackwardError("backward already ran on this graph; call reset() first")
        self._consumed = True

        pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: Dict[Tensor, np.ndarray] = {}
        for rec in reversed(self.records):
            g = pending.pop(id(rec.output), None)
            if g is None:
                continue
            for t, gi in zip(rec.inputs, rec.backward_fn(g)):
                if gi is None or not t.requires_grad:
                    continue
                if t.graph is self:
                    key = id(t)
                    pending[key] = pending[key] + gi if key in pending else gi
                else:
                    leaves[t] = leaves[t] + gi if t in leaves else gi
        for t, g in leaves.items():
            t.grad = g.copy() if t.grad is None else t.grad + g
        return leaves


def backward(loss: Tensor) -> Dict[Tensor, np.ndarray]:
    return loss.backward()


# -- primitives ---------------------------------------------------------------

_Backward = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
_PRIMITIVES: Dict[str, Callable[..., Tuple[np.ndarray, _Backward]]] = {}


def _primitive(kind):
    def register(fn):
        _PRIMITIVES[kind] = fn
        return fn

    return register


def _same_shape(kind, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{kind}: shapes {a.shape} and {b.shape} differ")


def _sigmoid(x):
    # split on sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus_array(x: np.ndarray) -> np.ndarray:
    """Overflow-safe ``log(1 + exp(x))`` on plain arrays."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def inverse_softplus(y: float) -> float:
    """``x`` such that softplus(x) == y, for y > 0."""
    if y <= 0:
        raise DomainError(f"inverse_softplus needs y > 0, got {y}")
    # log(expm1(y)) rewritten to stay finite for large y
    return float(y + np.log(-np.expm1(-y)))


@_primitive("add")
def _add(a, b):
    _same_shape("add", a, b)
    return a + b, lambda g: (g, g)


@_primitive("sub")
def _sub(a, b):
    _same_shape("sub", a, b)
    return a - b, lambda g: (g, -g)


@_primitive("mul")
def _mul(a, b):
    _same_shape("mul", a, b)
    return a * b, lambda g: (g * b, g * a)


@_primitive("matmul")
def _matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b, lambda g: (g @ b.T, a.T @ g)


@_primitive("broadcast_add_row")
def _broadcast_add_row(a, row):
    if a.ndim != 2 or row.shape not in ((a.shape[1],), (1, a.shape[1])):
        raise DimensionError(f"broadcast_add_row: cannot add row {row.shape} to {a.shape}")
    return a + row, lambda g: (g, g.sum(axis=0).reshape(row.shape))


@_primitive("tanh")
def _tanh(a):
    out = np.tanh(a)
    return out, lambda g: (g * (1.0 - out * out),)


@_primitive("relu")
def _relu(a):
    mask = a > 0
    return np.where(mask, a, 0.0), lambda g: (g * mask,)


@_primitive("exp")
def _exp(a):
    with np.errstate(over="ignore"):  # inf is reported by debug_checks / the trainer
        out = np.exp(a)
    return out, lambda g: (g * out,)


@_primitive("log")
def _log(a):
    if np.any(a <= 0):
        raise DomainError(f"log: {int(np.sum(a <= 0))} non-positive value(s), min {a.min()!r}")
    return np.log(a), lambda g: (g / a,)


@_primitive("square")
def _square(a):
    return a * a, lambda g: (2.0 * g * a,)


@_primitive("softplus")
def _softplus(a):
    return softplus_array(a), lambda g: (g * _sigmoid(a),)


@_primitive("reduce_sum")
def _reduce_sum(a):
    return np.array(a.sum()), lambda g: (np.full(a.shape, float(g)),)


@_primitive("reduce_mean")
def _reduce_mean(a):
    n = a.size
    return np.array(a.sum() / n), lambda g: (np.full(a.shape, float(g) / n),)


@_primitive("scale_by_constant")
def _scale(a, constant):
    c = float(constant)
    return c * a, lambda g: (c * g,)


@_primitive("slice_cols")
def _slice_cols(a, start, stop):
    if a.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise DimensionError(f"slice_cols: bad column range [{start}, {stop}) for shape {a.shape}")

    def grad(g):
        full = np.zeros_like(a)
        full[:, start:stop] = g
        return (full,)

    return a[:, start:stop].copy(), grad


PRIMITIVES = tuple(sorted(_PRIMITIVES))


def apply(kind: str, *inputs: Tensor, **params) -> Tensor:
    """Run primitive ``kind`` forward and record it on the inputs' graph."""
    try:
        fn = _PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}") from None
    for t in inputs:
        if not isinstance(t, Tensor):
            raise TypeError(f"{kind}: expected Tensor inputs, got {type(t).__name__}")
    out_data, backward_fn = fn(*(t.data for t in inputs), **params)
    if _debug_checks and not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"{kind}: produced non-finite values")

    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(out_data, requires_grad)
    if requires_grad:
        graphs = list({id(t.graph): t.graph for t in inputs if t.graph is not None}.values())
        graph = graphs[0] if graphs else Graph()
        for other in graphs[1:]:
            graph.absorb(other)  # two branches that grew from shared leaves
        graph.records.append(_Record(kind, inputs, out, backward_fn))
        out.graph = graph
    return out


forward_primitive = apply


def add(a, b):
    return apply("add", a, b)


def sub(a, b):
    return apply("sub", a, b)


def mul(a, b):
    return apply("mul", a, b)


def matmul(a, b):
    return apply("matmul", a, b)


def broadcast_add_row(a, row):
    return apply("broadcast_add_row", a, row)


def tanh(a):
    return apply("tanh", a)


def relu(a):
    return apply("relu", a)


def exp(a):
    return apply("exp", a)


def log(a):
    return apply("log", a)


def square(a):
    return apply("square", a)


def softplus(a):
    return apply("softplus", a)


def reduce_sum(a):
    return apply("reduce_sum", a)


def reduce_mean(a):
    return apply("reduce_mean", a)


def scale(a, constant):
    return apply("scale_by_constant", a, constant=constant)


def slice_cols(a, start, stop):
    return apply("slice_cols", a, start=start, stop=stop)


def numeric_gradient(f: Callable[[Tensor], Tensor], point: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``point``."""
    if h <= 0:
        raise DomainError(f"step h must be positive, got {h}")
    x = np.array(point, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(Tensor(x)).item()
        flat[i] = orig - h
        lo = f(Tensor(x)).item()
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NonFiniteError(f"f is not finite at coordinate {i} +/- {h}")
        out[i] = (hi - lo) / (2.0 * h)
    return out.reshape(x.shape)


def analytic_gradient(f: Callable[[Tensor], Tensor], point: np.ndarray) -> np.ndarray:
    p = Tensor(point, requires_grad=True)
    loss = f(p)
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("f is not finite at the evaluation point")
    if loss.graph is None:
        return np.zeros_like(p.data)
    loss.backward()
    return p.grad if p.grad is not None else np.zeros_like(p.data)


def finite_diff_check(f: Callable[[Tensor], Tensor], point, h: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|)."""
    if isinstance(point, Tensor):
        point = point.data
    analytic = analytic_gradient(f, point)
    numeric = numeric_gradient(f, point, h)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0
