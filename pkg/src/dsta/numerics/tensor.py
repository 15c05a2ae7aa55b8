"""Dense tensors with reverse-mode automatic differentiation on a numpy backend.

Every operation returns a new :class:`Tensor` that remembers its parents and a
backward rule mapping the output gradient to parent gradients. Calling
:func:`backward` on a scalar replays those rules in reverse topological order.
"""
from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_ids = itertools.count()
_grad_enabled = True
_default_dtype = np.dtype(np.float32)
_check_finite = False


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """A forward operation produced NaN or Inf."""


@contextlib.contextmanager
def no_grad():
    """Disable recording; results carry no parents and no backward rule."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def precision(dtype):
    """Set the dtype used for tensors built from non-float data (float32 or float64)."""
    global _default_dtype
    prev, _default_dtype = _default_dtype, np.dtype(dtype)
    try:
        yield
    finally:
        _default_dtype = prev


@contextlib.contextmanager
def finite_checks(enabled: bool = True):
    """Raise :class:`NonFiniteError` as soon as any op emits NaN/Inf."""
    global _check_finite
    prev, _check_finite = _check_finite, enabled
    try:
        yield
    finally:
        _check_finite = prev


def default_dtype() -> np.dtype:
    return _default_dtype


def _as_array(data) -> np.ndarray:
    if isinstance(data, np.ndarray) and data.dtype.kind == "f":
        return data
    if isinstance(data, np.floating):  # 0-d op results come back as numpy scalars
        return np.asarray(data)
    return np.asarray(data, dtype=_default_dtype)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "id", "name", "_parents", "_backward", "_op")
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None, _op: str = ""):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.id = next(_ids)
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __pow__(self, p): return power(self, p)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims=False): return sum_(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean_axis(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
    def transpose(self, *perm): return transpose(self, perm[0] if len(perm) == 1 and isinstance(perm[0], (tuple, list)) else (perm or None))
    def relu(self): return relu(self)
    def exp(self): return exp(self)
    def log(self): return log(self)
    def abs(self): return abs_(self)
    def softmax(self, axis=-1): return softmax(self, axis)

    def backward(self) -> None:
        backward(self)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if arr.dtype.kind != "f":
        arr = arr.astype(_default_dtype)
    return Tensor(arr)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    if _check_finite and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward_fn, _op=op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise --------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)
    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape("sub", a, b)

    def bw(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)
    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)
    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None)
    return _make(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = _wrap(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = _wrap(a)
    return _make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def relu(a) -> Tensor:
    a = _wrap(a)
    out = np.maximum(a.data, 0)
    return _make(out, (a,), lambda g: (g * (out > 0),), "relu")


def exp(a) -> Tensor:
    a = _wrap(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = _wrap(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def abs_(a) -> Tensor:
    a = _wrap(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def sin(a) -> Tensor:
    a = _wrap(a)
    return _make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def cos(a) -> Tensor:
    a = _wrap(a)
    return _make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


# -- linear algebra -----------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Batched matrix product ``a[..., m, k] @ b[..., k, p]`` with broadcast batch axes."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError(f"matmul: scalar operand, shapes {a.shape} and {b.shape}")
    if a.ndim == 1:
        return reshape(matmul(reshape(a, (1, a.shape[0])), b), b.shape[:-2] + b.shape[-1:])
    if b.ndim == 1:
        return reshape(matmul(a, reshape(b, (b.shape[0], 1))), a.shape[:-1])
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch axes do not broadcast, shapes {a.shape} and {b.shape}") from None

    if b.ndim == 2:
        # fold batch axes of a into rows: one GEMM instead of many tiny ones
        k, p = b.shape
        a2 = a.data.reshape(-1, k)
        out = (a2 @ b.data).reshape(a.shape[:-1] + (p,))

        def bw(g):
            g2 = g.reshape(-1, p)
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb
        return _make(out, (a, b), bw, "matmul")

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb
    return _make(a.data @ b.data, (a, b), bw, "matmul")


def linear(x, w, b) -> Tensor:
    """``x @ w + b`` for 2-D ``w`` as one node (saves the intermediate product)."""
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    if w.ndim != 2 or b.shape != (w.shape[1],) or x.ndim < 1 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: shapes {x.shape} @ {w.shape} + {b.shape} do not fit")
    k, p = w.shape
    x2 = x.data.reshape(-1, k)
    out = x2 @ w.data
    out += b.data
    out = out.reshape(x.shape[:-1] + (p,))

    def bw(g):
        g2 = g.reshape(-1, p)
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        gb = g2.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb
    return _make(out, (x, w, b), bw, "linear")


def softmax(x, axis: int = -1) -> Tensor:
    x = _wrap(x)
    out = x.data - x.data.max(axis=axis, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _make(out, (x,), bw, "softmax")


def layer_norm(x, gain, bias, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize slices along ``axis`` to zero mean / unit variance, then scale and shift."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    axis = axis % x.ndim
    length = x.shape[axis]
    if gain.shape != (length,) or bias.shape != (length,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match axis length {length}")
    bshape = [1] * x.ndim
    bshape[axis] = length
    gb, bb = gain.data.reshape(bshape), bias.data.reshape(bshape)
    xhat = x.data - x.data.mean(axis=axis, keepdims=True)
    var = np.square(xhat).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat *= inv

    def bw(g):
        red = tuple(i for i in range(x.ndim) if i != axis)
        gx = None
        if x.requires_grad:
            gh = g * gb
            gx = inv * (gh - gh.mean(axis=axis, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=axis, keepdims=True))
        ggain = (g * xhat).sum(axis=red) if gain.requires_grad else None
        gbias = g.sum(axis=red) if bias.requires_grad else None
        return gx, ggain, gbias
    out = xhat * gb
    out += bb
    return _make(out, (x, gain, bias), bw, "layer_norm")


# -- reductions and shape ops -----------------------------------------------
def _norm_axes(axis, ndim) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)
    return _make(np.asarray(out, dtype=x.dtype), (x,), bw, "sum")


def mean_axis(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape),)
    return _make(np.asarray(out, dtype=x.dtype), (x,), bw, "mean")


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, perm=None) -> Tensor:
    x = _wrap(x)
    perm = tuple(reversed(range(x.ndim))) if perm is None else tuple(p % x.ndim for p in perm)
    if sorted(perm) != list(range(x.ndim)):
        raise ShapeError(f"transpose: {perm} is not a permutation of {x.ndim} axes")
    inv = tuple(np.argsort(perm))
    return _make(x.data.transpose(perm), (x,), lambda g: (g.transpose(inv),), "transpose")


def swapaxes(x, a: int, b: int) -> Tensor:
    perm = list(range(x.ndim))
    perm[a], perm[b] = perm[b], perm[a]
    return transpose(x, perm)


def concat(xs: Iterable, axis: int = 0) -> Tensor:
    xs = [_wrap(x) for x in xs]
    if not xs:
        raise ShapeError("concat: empty input list")
    axis = axis % xs[0].ndim
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[x.shape for x in xs]} on axis {axis}") from None
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def bw(g):
        grads = []
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if not x.requires_grad:
                grads.append(None)
                continue
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            grads.append(g[tuple(idx)])
        return tuple(grads)
    return _make(out, xs, bw, "concat")


def stack(xs: Iterable, axis: int = 0) -> Tensor:
    xs = [_wrap(x) for x in xs]
    axis = axis % (xs[0].ndim + 1)
    return concat([reshape(x, x.shape[:axis] + (1,) + x.shape[axis:]) for x in xs], axis=axis)


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous range ``[start, stop)`` of ``axis``."""
    x = _wrap(x)
    axis = axis % x.ndim
    length = x.shape[axis]
    if not (0 <= start <= stop <= length):
        raise IndexError(f"slice_axis: range [{start}, {stop}) out of bounds for axis {axis} of length {length}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    return getitem(x, tuple(idx))


def getitem(x, idx) -> Tensor:
    x = _wrap(x)
    out = x.data[idx]
    basic = not any(isinstance(i, (list, np.ndarray)) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def bw(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)
    return _make(np.array(out, copy=True) if basic else out, (x,), bw, "getitem")


def take(x, indices, axis: int = 0) -> Tensor:
    """Gather entries of ``axis`` at integer ``indices`` (any index shape)."""
    x = _wrap(x)
    axis = axis % x.ndim
    indices = np.asarray(indices, dtype=np.intp)
    if indices.size and (indices.min() < -x.shape[axis] or indices.max() >= x.shape[axis]):
        raise IndexError(f"take: index out of range for axis {axis} of length {x.shape[axis]}")
    out = np.take(x.data, indices, axis=axis)
    flat = indices.reshape(-1)
    unique = np.unique(flat % max(x.shape[axis], 1)).size == flat.size

    def bw(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        gm = np.moveaxis(g.reshape(x.shape[:axis] + (flat.size,) + x.shape[axis + 1:]), axis, 0)
        fm = np.moveaxis(full, axis, 0)
        if unique:
            fm[flat] = gm
        else:
            np.add.at(fm, flat, gm)
        return (full,)
    return _make(out, (x,), bw, "take")


# -- the record ---------------------------------------------------------------
class ComputationRecord:
    """Topologically ordered list of recorded operations reaching ``root``."""

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes = _topo_order(root)

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> list[Tensor]:
        return [t for t in self.nodes if t.is_leaf and t.requires_grad]

    def backward(self, seed: np.ndarray | None = None) -> None:
        root = self.root
        grads = {root.id: np.ones_like(root.data) if seed is None else seed}
        for node in reversed(self.nodes):
            g = grads.pop(node.id, None)
            if g is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    g = np.array(g, dtype=node.dtype)
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.id in grads:
                    grads[parent.id] = grads[parent.id] + pg
                else:
                    grads[parent.id] = pg


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and p.id not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> ComputationRecord:
    """Populate ``.grad`` on every trainable leaf reachable from scalar ``loss``."""
    if loss.size != 1 or loss.ndim > 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not depend on any trainable tensor")
    rec = ComputationRecord(loss)
    rec.backward()
    return rec
