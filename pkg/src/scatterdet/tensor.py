"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op records a node (inputs, output, backward closure) in creation
order.  ``backward`` replays the nodes reachable from the loss in reverse
topological order, visiting each exactly once.
"""
from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_ids = itertools.count()
_grad_enabled = True


class DomainError(ValueError):
    """Raised when an op is evaluated outside its mathematical domain."""


class DimensionError(ValueError):
    """Raised on incompatible operand shapes."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_inputs", "_backward", "_id", "op")
    # make numpy defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite values in tensor {name or ''}".strip())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._inputs: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._id = next(_ids)
        self.op = "leaf"

    # -- basic protocol -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    # -- autodiff -------------------------------------------------------
    def backward(self) -> None:
        if self.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node._id in seen:
                continue
            seen.add(node._id)
            stack.append((node, True))
            for parent in node._inputs:
                if parent._id not in seen:
                    stack.append((parent, False))
        grads: dict[int, np.ndarray] = {self._id: np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(node._id, None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node._accumulate(g)
                continue
            for parent, pg in zip(node._inputs, node._backward(g)):
                if pg is None:
                    continue
                if parent._id in grads:
                    grads[parent._id] = grads[parent._id] + pg
                else:
                    grads[parent._id] = pg

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return reduce("sum", self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce("mean", self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _needs_graph(inputs: Sequence[Tensor]) -> bool:
    if not _grad_enabled:
        return False
    return any(_tracked(t) for t in inputs)


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"op '{op}' produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out.name = None
    out._id = next(_ids)
    out.op = op
    if _needs_graph(inputs):
        out._inputs = tuple(inputs)
        out._backward = backward
    else:
        out._inputs = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- binary elementwise -------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
        "div",
    )


# -- unary elementwise --------------------------------------------------
def neg(x) -> Tensor:
    x = as_tensor(x)
    return _make(-x.data, (x,), lambda g: (-g,), "neg")


def square(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _make(xd * xd, (x,), lambda g: (2.0 * xd * g,), "square")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError("sqrt of negative input")
    out = np.sqrt(x.data)
    # zero input: derivative is unbounded, use 0 (subgradient)
    safe = np.where(out > 0, out, 1.0)
    return _make(out, (x,), lambda g: (np.where(out > 0, g / (2.0 * safe), 0.0),), "sqrt")


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):  # overflow is reported by _make
        out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log of non-positive input")
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,), "log")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    out = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))), np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd))))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log_sigmoid(x) -> Tensor:
    """log(sigmoid(x)) evaluated without overflow."""
    x = as_tensor(x)
    xd = x.data
    out = np.minimum(xd, 0.0) - np.log1p(np.exp(-np.abs(xd)))
    s = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))), np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd))))
    return _make(out, (x,), lambda g: (g * (1.0 - s),), "log_sigmoid")


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    pos = xd > 0
    return _make(np.where(pos, xd, slope * xd), (x,), lambda g: (np.where(pos, g, slope * g),), "leakyrelu")


def prelu(x, alpha) -> Tensor:
    """max(0, x) + alpha * min(0, x) with a learnable scalar slope."""
    x, alpha = as_tensor(x), as_tensor(alpha)
    if alpha.size != 1:
        raise DimensionError(f"prelu: alpha must be scalar, got shape {alpha.shape}")
    xd, a = x.data, alpha.data
    pos = xd > 0
    neg_part = np.where(pos, 0.0, xd)

    def backward(g):
        return np.where(pos, g, g * a), np.reshape(np.sum(g * neg_part), alpha.shape)

    return _make(np.where(pos, xd, a * xd), (x, alpha), backward, "prelu")


def elu(x, alpha: float = 1.0) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    pos = xd > 0
    em = np.exp(np.minimum(xd, 0.0))
    out = np.where(pos, xd, alpha * (em - 1.0))
    return _make(out, (x,), lambda g: (np.where(pos, g, g * alpha * em),), "elu")


_UNARY = {
    "neg": neg,
    "square": square,
    "sqrt": sqrt,
    "exp": exp,
    "log": log,
    "sigmoid": sigmoid,
    "elu": elu,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, *inputs, alpha=None) -> Tensor:
    """Dispatch an elementwise op by tag.

    ``prelu`` and ``leakyrelu`` take their slope through ``alpha``; for
    prelu it is a tensor (learnable), for leakyrelu a plain float.
    """
    if op in _BINARY:
        return _BINARY[op](*inputs)
    if op in _UNARY:
        return _UNARY[op](*inputs)
    if op == "prelu":
        return prelu(inputs[0], alpha)
    if op == "leakyrelu":
        return leaky_relu(inputs[0], 0.2 if alpha is None else alpha)
    raise ValueError(f"unknown elementwise op {op!r}")


# -- linear algebra -----------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    ad, bd = a.data, b.data

    # constant operands (graph selectors, fixed weights) get no gradient
    need_a, need_b = _tracked(a), _tracked(b)

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if need_a else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if need_b else None
        return ga, gb

    return _make(ad @ bd, (a, b), backward, "matmul")


# -- reductions ---------------------------------------------------------
def _norm_axis(axis, ndim: int):
    if axis is None or axis == "all":
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = tuple(sorted(ax % ndim for ax in axis))
    if not out:
        raise DimensionError("reduce over an empty axis set")
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for ndim {ndim}")
    return out


def _expand(g: np.ndarray, axes: tuple[int, ...], keepdims: bool) -> np.ndarray:
    if keepdims:
        return g
    return np.expand_dims(g, axes)


def _first_arg_mask(xd: np.ndarray, axes: tuple[int, ...], target: np.ndarray) -> np.ndarray:
    # one-hot mask on the first index (row-major over the reduced axes) attaining the extremum
    moved = np.moveaxis(xd, axes, tuple(range(xd.ndim - len(axes), xd.ndim)))
    lead = moved.shape[: xd.ndim - len(axes)]
    flat = moved.reshape(lead + (-1,))
    hit = flat == np.expand_dims(target.reshape(lead), -1)
    first = np.argmax(hit, axis=-1)
    mask = np.zeros_like(flat)
    np.put_along_axis(mask, np.expand_dims(first, -1), 1.0, axis=-1)
    mask = mask.reshape(moved.shape)
    return np.moveaxis(mask, tuple(range(xd.ndim - len(axes), xd.ndim)), axes)


def reduce(op: str, x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    if xd.size == 0:
        raise DimensionError("reduce over an empty tensor")
    axes = _norm_axis(axis, xd.ndim)
    if op == "sum":
        out = xd.sum(axis=axes, keepdims=keepdims)
        return _make(out, (x,), lambda g: (np.broadcast_to(_expand(g, axes, keepdims), xd.shape).copy(),), "sum")
    if op == "mean":
        n = int(np.prod([xd.shape[a] for a in axes]))
        out = xd.mean(axis=axes, keepdims=keepdims)
        return _make(
            out, (x,), lambda g: (np.broadcast_to(_expand(g, axes, keepdims) / n, xd.shape).copy(),), "mean"
        )
    if op in ("min", "max"):
        fn = np.min if op == "min" else np.max
        kept = fn(xd, axis=axes, keepdims=True)
        out = kept if keepdims else np.squeeze(kept, axis=axes)
        mask = _first_arg_mask(xd, axes, kept)
        return _make(out, (x,), lambda g: (mask * _expand(g, axes, keepdims),), op)
    if op == "l2norm":
        kept = np.sqrt(np.sum(xd * xd, axis=axes, keepdims=True))
        out = kept if keepdims else np.squeeze(kept, axis=axes)
        safe = np.where(kept > 0, kept, 1.0)
        return _make(
            out, (x,), lambda g: (np.where(kept > 0, xd / safe, 0.0) * _expand(g, axes, keepdims),), "l2norm"
        )
    raise ValueError(f"unknown reduction {op!r}")


def sum(x, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    return reduce("sum", x, axis, keepdims)


def mean(x, axis=None, keepdims=False) -> Tensor:
    return reduce("mean", x, axis, keepdims)


def l2norm(x, axis=None, keepdims=False) -> Tensor:
    return reduce("l2norm", x, axis, keepdims)


def softmax(x, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax with max-subtraction.

    ``mask`` (boolean, broadcastable to ``x``) selects the admissible
    entries; excluded entries get probability exactly 0.  Every slice
    along ``axis`` must keep at least one admissible entry.
    """
    x = as_tensor(x)
    xd = x.data
    if mask is None:
        shifted = xd - xd.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.broadcast_to(mask, xd.shape)
        if not np.all(mask.any(axis=axis)):
            raise DomainError("softmax: a slice has no admissible entries")
        big = np.where(mask, xd, -np.inf)
        shifted = np.where(mask, xd - big.max(axis=axis, keepdims=True), 0.0)
        e = np.where(mask, np.exp(shifted), 0.0)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _make(out, (x,), backward, "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)
    return _make(out, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),), "log_softmax")


# -- shape ops ----------------------------------------------------------
def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _make(out, (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(x, a: int, b: int) -> Tensor:
    x = as_tensor(x)
    return _make(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),), "swapaxes")


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(x.data[idx]), (x,), backward, "getitem")


def pad_left(x, n: int, axis: int) -> Tensor:
    """Prepend ``n`` zeros along ``axis``."""
    x = as_tensor(x)
    if n == 0:
        return x
    widths = [(0, 0)] * x.ndim
    widths[axis] = (n, 0)
    size = x.shape[axis]
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(n, n + size)
    sl = tuple(sl)
    return _make(np.pad(x.data, widths), (x,), lambda g: (g[sl],), "pad")


def concat(xs: Iterable, axis: int = -1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(xs)))

    return _make(np.concatenate([t.data for t in xs], axis=axis), xs, backward, "concat")


def stack(xs: Iterable, axis: int = 0) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    return _make(
        np.stack([t.data for t in xs], axis=axis),
        xs,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(xs))),
        "stack",
    )
