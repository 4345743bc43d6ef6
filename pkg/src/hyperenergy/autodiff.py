"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every differentiable operation builds a new :class:`Tensor` holding references to
its inputs and a closure that maps the output gradient onto the inputs.
:func:`backward` walks the graph in reverse topological order and accumulates
gradients into leaves that have ``requires_grad=True``.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "ShapeError",
    "tensor",
    "zeros",
    "matmul",
    "add",
    "sub",
    "mul",
    "scalar_mul",
    "neg",
    "exp",
    "pow_int",
    "tanh",
    "sigmoid",
    "relu",
    "swish",
    "absolute",
    "elementwise",
    "bias_add",
    "reduce",
    "sum",
    "mean",
    "slice_view",
    "reshape",
    "transpose",
    "concat",
    "take",
    "pairwise_sq_dist",
    "backward",
    "no_grad",
    "finite_diff_check",
]

DTYPE = np.float64

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph construction (evaluation passes)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """Dense float64 array that can take part in a differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"all dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"
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

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True).reshape(self.shape)
        else:
            self.grad += g

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(shape: Sequence[int], requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(tuple(shape)), requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], op: str,
          grad_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.name = None
    out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = grad_fn
    else:
        out._parents = ()
        out._backward = None
    return out


# ----------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. Accepts 2-D operands or equal-batch 3-D operands."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim not in (2, 3) or a.ndim != b.ndim:
        raise ShapeError(f"matmul expects two 2-D or two 3-D tensors, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or (a.ndim == 3 and a.shape[0] != b.shape[0]):
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def grad_fn(g):
        return g @ np.swapaxes(B, -1, -2), np.swapaxes(A, -1, -2) @ g

    return _make(A @ B, (a, b), "matmul", grad_fn)


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a vector ``b`` to every row of ``x`` along the last axis."""
    x, b = _as_tensor(x), _as_tensor(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"bias_add: bias {b.shape} does not match last axis of {x.shape}")
    axes = tuple(range(x.ndim - 1))

    def grad_fn(g):
        return g, g.sum(axis=axes)

    return _make(x.data + b.data, (x, b), "bias_add", grad_fn)


def pairwise_sq_dist(x: Tensor, r: Tensor) -> Tensor:
    """Squared Euclidean distance between every row of ``x`` and every row of ``r``."""
    x, r = _as_tensor(x), _as_tensor(r)
    if x.ndim != 2 or r.ndim != 2 or x.shape[1] != r.shape[1]:
        raise ShapeError(f"pairwise_sq_dist: incompatible shapes {x.shape} and {r.shape}")
    X, R = x.data, r.data
    diff = X[:, None, :] - R[None, :, :]
    out = np.einsum("ijk,ijk->ij", diff, diff)

    def grad_fn(g):
        gx = 2.0 * np.einsum("ij,ijk->ik", g, diff)
        gr = -2.0 * np.einsum("ij,ijk->jk", g, diff)
        return gx, gr

    return _make(out, (x, r), "pairwise_sq_dist", grad_fn)


# ----------------------------------------------------------------------------
# elementwise

def _binary_check(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    # only scalar operands are broadcast
    return np.asarray(g.sum())


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_check(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), "add",
                 lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_check(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), "sub",
                 lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_check(a, b, "mul")
    A, B = a.data, b.data
    return _make(A * B, (a, b), "mul",
                 lambda g: (_reduce_to(g * B, a.shape), _reduce_to(g * A, b.shape)))


def scalar_mul(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(a.data * s, (a,), "scalar_mul", lambda g: (g * s,))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), "neg", lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), "exp", lambda g: (g * out,))


def pow_int(a: Tensor, d: int) -> Tensor:
    if int(d) != d or d < 1:
        raise ValueError(f"pow_int requires an integer exponent >= 1, got {d}")
    d = int(d)
    A = a.data
    if d == 1:
        return _make(A.copy(), (a,), "pow_int", lambda g: (g,))
    lower = A ** (d - 1)
    return _make(lower * A, (a,), "pow_int", lambda g: (g * d * lower,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), "tanh", lambda g: (g * (1.0 - out * out),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return expit(z)


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), "sigmoid", lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), "relu", lambda g: (g * mask,))


def swish(a: Tensor) -> Tensor:
    z = a.data
    s = _sigmoid(z)
    out = z * s
    return _make(out, (a,), "swish", lambda g: (g * (s + out * (1.0 - s)),))


def absolute(a: Tensor) -> Tensor:
    # subgradient at 0 is 0
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), "abs", lambda g: (g * sign,))


_UNARY = {"exp": exp, "tanh": tanh, "sigmoid": sigmoid, "relu": relu,
          "swish": swish, "neg": neg, "abs": absolute}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op_kind: str, a: Tensor, b=None) -> Tensor:
    """Dispatch an elementwise operation by name.

    ``pow_int`` and ``scalar_mul`` take their integer / float argument as ``b``.
    """
    if op_kind in _UNARY:
        return _UNARY[op_kind](a)
    if op_kind in _BINARY:
        if b is None:
            raise ValueError(f"{op_kind} needs a second operand")
        return _BINARY[op_kind](a, b)
    if op_kind == "pow_int":
        return pow_int(a, b)
    if op_kind == "scalar_mul":
        return scalar_mul(a, b)
    raise ValueError(f"unknown elementwise op {op_kind!r}")


# ----------------------------------------------------------------------------
# reductions and views

def reduce(kind: str, a: Tensor, axis: int | None = None) -> Tensor:
    if kind not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {kind!r}")
    if axis is not None and not (-a.ndim <= axis < a.ndim):
        raise ValueError(f"axis {axis} out of range for rank {a.ndim}")
    shape = a.shape
    count = a.size if axis is None else shape[axis]
    scale = 1.0 if kind == "sum" else 1.0 / count
    out = a.data.sum(axis=axis) * scale

    def grad_fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * scale, shape),)

    return _make(np.asarray(out), (a,), kind, grad_fn)


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    return reduce("sum", a, axis)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    return reduce("mean", a, axis)


def slice_view(a: Tensor, start: int, end: int, new_shape: Sequence[int]) -> Tensor:
    """Take ``[start, end)`` along the last axis and reshape it.

    For a 1-D tensor the result has shape ``new_shape``. Leading axes are kept,
    so a ``[B, P]`` tensor yields ``[B, *new_shape]``.
    """
    length = a.shape[-1] if a.ndim else 1
    if a.ndim == 0 or not (0 <= start < end <= length):
        raise IndexError(f"slice [{start}, {end}) out of range for last axis of length {length}")
    new_shape = tuple(int(s) for s in new_shape)
    if int(np.prod(new_shape)) != end - start:
        raise ShapeError(f"cannot view {end - start} values as shape {new_shape}")
    lead = a.shape[:-1]
    out = a.data[..., start:end].reshape(lead + new_shape)
    parent_shape = a.shape

    def grad_fn(g):
        full = np.zeros(parent_shape)
        full[..., start:end] = g.reshape(lead + (end - start,))
        return (full,)

    return _make(out, (a,), "slice_view", grad_fn)


def reshape(a: Tensor, new_shape: Sequence[int]) -> Tensor:
    shape = a.shape
    return _make(a.data.reshape(tuple(new_shape)), (a,), "reshape", lambda g: (g.reshape(shape),))


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), "transpose", lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(_as_tensor(t) for t in tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(data, tensors, "concat", lambda g: tuple(np.split(g, bounds, axis=axis)))


def take(a: Tensor, index, axis: int = 0) -> Tensor:
    """Select a slice or integer index along ``axis`` (gradient is scattered back)."""
    key = [slice(None)] * a.ndim
    key[axis] = index
    key = tuple(key)
    shape = a.shape

    def grad_fn(g):
        full = np.zeros(shape)
        full[key] = g
        return (full,)

    return _make(a.data[key].copy(), (a,), "take", grad_fn)


# ----------------------------------------------------------------------------
# graph traversal

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable trainable leaf."""
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    owned: set[int] = set()
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node._accumulate(g)
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            prev = grads.get(key)
            if prev is None:
                grads[key] = pg
            elif key in owned:
                np.add(prev, pg, out=prev)
            else:
                # first merge allocates a private buffer; later merges reuse it
                grads[key] = prev + pg
                owned.add(key)


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
                      indices: dict[int, Sequence[tuple]] | None = None, floor: float = 1e-8) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``f`` must rebuild the graph from the current values of ``params`` on each
    call. ``indices`` optionally restricts, per parameter position, which
    entries are probed; by default every entry is. ``floor`` bounds the
    relative-error denominator from below, so entries smaller than the
    central-difference round-off are compared on an absolute scale.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    for p in params:
        p.zero_grad()
    loss = f()
    if not np.all(np.isfinite(loss.data)):
        raise FloatingPointError("non-finite function value")
    backward(loss)
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for pi, p in enumerate(params):
        probe = indices.get(pi) if indices else None
        if probe is None:
            probe = list(np.ndindex(*p.shape)) if p.ndim else [()]
        for idx in probe:
            orig = p.data[idx]
            p.data[idx] = orig + eps
            fp = float(f().data)
            p.data[idx] = orig - eps
            fm = float(f().data)
            p.data[idx] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("non-finite function value")
            num = (fp - fm) / (2 * eps)
            ana = float(analytic[pi][idx])
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst
