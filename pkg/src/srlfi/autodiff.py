"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` is opened as a context manager and records every operation
whose inputs are tracked (leaves created with ``requires_grad=True`` or
results of earlier recorded operations). Outside an active tape, operations
evaluate eagerly and return untracked tensors, which keeps sampling cheap.

Example:
    >>> w = Tensor([1.0, -2.0], requires_grad=True)
    >>> with Tape():
    ...     loss = sum(w * w)
    ...     grads = backward(loss)
    >>> grads[w]
    array([ 2., -4.])
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DomainError",
    "GradCheckResult",
    "GradientMap",
    "OP_KINDS",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "add",
    "apply_op",
    "backward",
    "broadcast",
    "clip",
    "concat",
    "exp",
    "gradient_check",
    "leaky_relu",
    "log",
    "matmul",
    "mean",
    "multiply",
    "pairwise_sqdist",
    "power",
    "relu",
    "reshape",
    "sigmoid",
    "subtract",
    "sum",
    "take",
    "tanh",
]


class ShapeError(ValueError):
    """Input shapes do not conform for an operation."""


class DomainError(ValueError):
    """Input lies outside the domain of log or power."""


class TapeError(RuntimeError):
    """Backward was requested on something the tape cannot differentiate."""


_state = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """Dense real array, optionally participating in a differentiation tape."""

    __slots__ = ("data", "requires_grad", "grad", "node", "_tape")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: int | None = None
        self._tape: Tape | None = None

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4)}{flag})"

    def __len__(self):
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __neg__(self):
        return multiply(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return multiply(self, power(other, -1.0))
        return multiply(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class _Node:
    kind: str
    parents: tuple[int | None, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    shape: tuple[int, ...]


class Tape:
    """Ordered record of operations, rebuilt for every forward pass.

    Nodes are appended as operations run, so parents always precede their
    children. Leaves (``requires_grad`` tensors) get a node the first time they
    are used on this tape.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.leaves: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def _node_of(self, t: Tensor) -> int | None:
        if t._tape is self and t.node is not None:
            return t.node
        if t.requires_grad:
            t.node = len(self.nodes)
            t._tape = self
            self.nodes.append(_Node("leaf", (), None, t.shape))
            self.leaves[t.node] = t
            return t.node
        return None

    def _record(self, kind, inputs, out_data, backward_fn) -> Tensor:
        parents = tuple(self._node_of(t) for t in inputs)
        out = Tensor.__new__(Tensor)
        out.data = out_data
        out.requires_grad = False
        out.grad = None
        if all(p is None for p in parents):
            out.node = None
            out._tape = None
            return out
        out.node = len(self.nodes)
        out._tape = self
        self.nodes.append(_Node(kind, parents, backward_fn, out_data.shape))
        return out


class GradientMap(dict):
    """Gradients keyed by tape node id; tensors are accepted as keys too."""

    def __init__(self, *args, tensors: dict[int, Tensor] | None = None):
        super().__init__(*args)
        self._by_object: dict[int, np.ndarray] = {}
        for node_id, t in (tensors or {}).items():
            self._by_object[id(t)] = self[node_id]

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            return self._by_object[id(key)]
        return super().__getitem__(key)

    def __contains__(self, key):
        if isinstance(key, Tensor):
            return id(key) in self._by_object
        return super().__contains__(key)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finish(kind: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn) -> Tensor:
    tape = _active_tape()
    if tape is None:
        return Tensor(out_data)
    return tape._record(kind, inputs, out_data, backward_fn)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(kind: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# --- binary elementwise ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _finish("add", (a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def subtract(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("subtract", a, b)
    sa, sb = a.shape, b.shape
    return _finish("subtract", (a, b), a.data - b.data,
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def multiply(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("elementwise-multiply", a, b)
    ad, bd = a.data, b.data
    return _finish("elementwise-multiply", (a, b), ad * bd,
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching semantics (``a`` may carry leading batch axes)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    track_a = a.requires_grad or a.node is not None
    if bd.ndim == 2:
        # fold batch axes into rows: one BLAS call instead of a batched loop
        a2 = ad.reshape(-1, ad.shape[-1])
        out = (a2 @ bd).reshape(ad.shape[:-1] + bd.shape[-1:])

        def backward_fn(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bd.T).reshape(ad.shape) if track_a else None
            return ga, a2.T @ g2

        return _finish("matmul", (a, b), out, backward_fn)

    def backward_fn(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _finish("matmul", (a, b), ad @ bd, backward_fn)


# --- unary ----------------------------------------------------------------


def power(x, exponent: float, grad_eps: float = 0.0) -> Tensor:
    """Elementwise ``x ** exponent`` for a scalar exponent.

    ``grad_eps`` shifts the base inside the derivative only, which keeps
    gradients finite for fractional exponents at ``x == 0``.
    """
    x = _as_tensor(x)
    p = float(exponent)
    xd = x.data
    if p != int(p) and np.any(xd < 0):
        raise DomainError(f"scalar-power: negative base with fractional exponent {p}")
    if p < 0 and np.any(xd == 0):
        raise DomainError(f"scalar-power: zero base with negative exponent {p}")
    out = xd ** p

    def backward_fn(g):
        if p == 0:
            return (np.zeros_like(xd),)
        return (g * p * (xd + grad_eps) ** (p - 1),)

    return _finish("scalar-power", (x,), out, backward_fn)


def exp(x) -> Tensor:
    x = _as_tensor(x)
    out = np.exp(x.data)
    return _finish("exp", (x,), out, lambda g: (g * out,))


def log(x) -> Tensor:
    x = _as_tensor(x)
    xd = x.data
    if np.any(xd <= 0):
        raise DomainError("log: non-positive input")
    return _finish("log", (x,), np.log(xd), lambda g: (g / xd,))


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return _finish("tanh", (x,), out, lambda g: (g * (1.0 - out * out),))


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    xd = x.data
    # split by sign so exp never overflows
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ez = np.exp(xd[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _finish("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _finish("relu", (x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    out = np.where(mask, x.data, slope * x.data)
    return _finish("leaky-relu", (x,), out, lambda g: (np.where(mask, g, slope * g),))


def clip(x, low: float, high: float) -> Tensor:
    """Clamp to ``[low, high]``; gradient is zero where clamping is active."""
    x = _as_tensor(x)
    inside = (x.data >= low) & (x.data <= high)
    return _finish("clip", (x,), np.clip(x.data, low, high), lambda g: (g * inside,))


# --- reductions and structure -----------------------------------------------


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = _as_tensor(x)
    shape = x.shape
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _finish("sum", (x,), np.asarray(out, dtype=np.float64), backward_fn)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape
    count = x.size if axis is None else int(np.prod([shape[a] for a in np.atleast_1d(axis)]))
    out = np.mean(x.data, axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _finish("mean", (x,), np.asarray(out, dtype=np.float64), backward_fn)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: shapes {shapes} do not conform along axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _finish("concat", tensors, out,
                   lambda g: tuple(np.split(g, bounds, axis=axis)))


def broadcast(x, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast: cannot broadcast {x.shape} to {shape}") from None
    src = x.shape
    return _finish("broadcast", (x,), out, lambda g: (_unbroadcast(g, src),))


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {src} to {tuple(shape)}") from None
    return _finish("reshape", (x,), out, lambda g: (g.reshape(src),))


def take(x, indices, axis: int = -1) -> Tensor:
    """Select entries along ``axis`` by integer index (used for patch restriction)."""
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.max() >= x.shape[axis] or idx.min() < -x.shape[axis]):
        raise ShapeError(f"take: index out of range for axis {axis} of shape {x.shape}")
    shape = x.shape

    def backward_fn(g):
        full = np.zeros(shape)
        np.add.at(np.moveaxis(full, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (full,)

    return _finish("take", (x,), np.take(x.data, idx, axis=axis), backward_fn)


def pairwise_sqdist(a, b) -> Tensor:
    """Squared Euclidean distances between rows: ``(..., m, p), (..., k, p) -> (..., m, k)``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"pairwise-squared-distance: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    diff = ad[..., :, None, :] - bd[..., None, :, :]
    out = np.einsum("...ijk,...ijk->...ij", diff, diff)

    def backward_fn(g):
        ga = 2.0 * (g.sum(axis=-1)[..., None] * ad - g @ bd)
        gb = 2.0 * (np.swapaxes(g, -1, -2).sum(axis=-1)[..., None] * bd - np.swapaxes(g, -1, -2) @ ad)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _finish("pairwise-squared-distance", (a, b), out, backward_fn)


_DISPATCH: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "subtract": subtract,
    "elementwise-multiply": multiply,
    "scalar-power": power,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "leaky-relu": leaky_relu,
    "sum": sum,
    "mean": mean,
    "concat": lambda *ts, axis=-1: concat(ts, axis=axis),
    "broadcast": broadcast,
    "pairwise-squared-distance": pairwise_sqdist,
    "clip": clip,
    "reshape": reshape,
    "take": take,
}

OP_KINDS = tuple(_DISPATCH)


def apply_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Run the operation named ``kind`` (e.g. ``"leaky-relu"``) on ``inputs``."""
    try:
        fn = _DISPATCH[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}; expected one of {OP_KINDS}") from None
    return fn(*inputs, **kwargs)


# --- backward pass ----------------------------------------------------------


def backward(root: Tensor, wrt: Sequence[Tensor] | None = None) -> GradientMap:
    """Differentiate the scalar ``root`` with respect to tape leaves.

    Args:
        root: Scalar tensor produced on a tape.
        wrt: Leaves to report. Defaults to every ``requires_grad`` leaf that
            participated. Leaves that did not participate get zero gradients.

    Returns:
        GradientMap keyed by node id (and by tensor). Each leaf's ``.grad`` is
        also set.
    """
    if root.size != 1:
        raise TapeError(f"backward needs a scalar root, got shape {root.shape}")
    tape = root._tape
    if tape is None or root.node is None:
        if wrt is None:
            raise TapeError("root is not on a tape")
        grads = {}
        for i, t in enumerate(wrt):
            t.grad = np.zeros(t.shape)
            grads[-(i + 1)] = t.grad
        return GradientMap(grads, tensors={-(i + 1): t for i, t in enumerate(wrt)})
    if root.node >= len(tape.nodes) or tape.nodes[root.node].shape != root.shape:
        raise TapeError("root does not belong to its tape")

    acc: dict[int, np.ndarray] = {root.node: np.ones(root.shape)}
    for idx in range(root.node, -1, -1):
        g = acc.get(idx)
        if g is None:
            continue
        node = tape.nodes[idx]
        if node.backward is None:
            continue
        del acc[idx]
        for parent, pg in zip(node.parents, node.backward(g)):
            if parent is None or pg is None:
                continue
            if parent in acc:
                acc[parent] = acc[parent] + pg
            else:
                acc[parent] = pg

    if wrt is None:
        targets = dict(tape.leaves)
    else:
        targets = {}
        for i, t in enumerate(wrt):
            key = t.node if (t._tape is tape and t.node is not None) else -(i + 1)
            targets[key] = t
    grads = {}
    for key, t in targets.items():
        g = acc.get(key)
        t.grad = np.zeros(t.shape) if g is None else np.asarray(g, dtype=np.float64).reshape(t.shape)
        grads[key] = t.grad
    return GradientMap(grads, tensors=targets)


@dataclass
class GradCheckResult:
    passed: bool
    max_rel_error: float
    analytic: list[np.ndarray] = field(repr=False)
    numeric: list[np.ndarray] = field(repr=False)

    def __bool__(self):
        return self.passed


def gradient_check(f: Callable, point, eps: float = 1e-5, rtol: float = 1e-4,
                   atol: float = 1e-6) -> GradCheckResult:
    """Compare tape gradients of ``f(point)`` against central finite differences.

    ``point`` is a tensor or a list of tensors; they are marked as requiring
    gradients and perturbed in place. The relative error of each component is
    ``|a - n| / max(|a|, |n|, atol)``, so ``atol`` acts as an absolute floor
    for components whose true derivative is near zero.

    Never raises on mismatch; inspect ``passed`` and ``max_rel_error``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = list(point) if isinstance(point, (list, tuple)) else [point]
    for p in params:
        p.requires_grad = True

    def evaluate() -> float:
        with Tape():
            return f(point).item()

    with Tape():
        out = f(point)
        backward(out, wrt=params)
    analytic = [p.grad.copy() for p in params]

    numeric = []
    for p in params:
        num = np.zeros(p.shape)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = evaluate()
            flat[i] = orig - eps
            down = evaluate()
            flat[i] = orig
            num.reshape(-1)[i] = (up - down) / (2 * eps)
        numeric.append(num)

    worst = 0.0
    for a, n in zip(analytic, numeric):
        if a.size == 0:
            continue
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), atol)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return GradCheckResult(bool(np.isfinite(worst) and worst <= rtol), worst, analytic, numeric)
