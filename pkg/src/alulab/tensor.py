"""Dense tensors with reverse-mode automatic differentiation.

The surface is deliberately small: elementwise arithmetic (same shape, or a
scalar with a tensor), ``matmul``, a handful of activations, reductions,
reshape/slice/concat and the three losses used across the package.  Every
operation records a node on the graph when any operand requires a gradient;
``Tensor.backward`` walks that graph once in reverse topological order.

Data is stored as ``float32`` unless the caller hands in an array of another
floating dtype (``grad_check`` promotes leaves to ``float64``).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class GraphError(RuntimeError):
    """Misuse of the differentiation graph (non-scalar loss, reused graph...)."""


def _as_array(value, dtype=None) -> np.ndarray:
    return np.asarray(value, dtype=dtype or DEFAULT_DTYPE)


class Tensor:
    """A node in the differentiation graph.

    ``_parents`` holds the operand tensors and ``_backward`` maps the output
    gradient to one gradient per parent (``None`` for parents that do not
    need one).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._consumed = False

    # -- construction -------------------------------------------------
    @classmethod
    def _from_op(cls, data, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        data = np.asarray(data)
        out = cls(data, dtype=data.dtype if np.issubdtype(data.dtype, np.floating) else None)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out._op = op
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self._op})"

    # -- operators ------------------------------------------------------
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
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)

    # -- differentiation ------------------------------------------------
    def backward(self) -> None:
        """Backpropagate from this scalar into every ``requires_grad`` leaf.

        Leaf gradients accumulate into ``.grad``; a graph can be walked once.
        """
        if self.data.size != 1:
            raise GraphError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise GraphError("loss is detached from the graph (no operand requires grad)")
        if self._consumed:
            raise GraphError("backward() already called on this graph")

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node._consumed = True
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        self._consumed = True


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DEFAULT_DTYPE))


def _check_same_or_scalar(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ (only scalar broadcasting)")


def _unbroadcast(grad: np.ndarray, target: Tensor) -> np.ndarray:
    if grad.shape == target.shape:
        return grad
    # target is a scalar operand broadcast over the other one
    return np.asarray(grad.sum(), dtype=grad.dtype).reshape(target.shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_same_or_scalar(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a), _unbroadcast(g, b)

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_same_or_scalar(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a), _unbroadcast(-g, b)

    return Tensor._from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_same_or_scalar(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a), _unbroadcast(g * a.data, b)

    return Tensor._from_op(a.data * b.data, (a, b), backward, "mul")


def power(a, exponent: float) -> Tensor:
    a = _lift(a)
    exponent = float(exponent)
    out = np.power(a.data, exponent)

    def backward(g):
        return (g * exponent * np.power(a.data, exponent - 1.0),)

    return Tensor._from_op(out, (a,), backward, "pow")


def bias_add(x, bias) -> Tensor:
    """Add a length-``n`` bias to every row of an ``(m, n)`` tensor.

    This is the one explicit row broadcast in the library; general
    broadcasting is not supported.
    """
    x, bias = _lift(x), _lift(bias)
    if x.data.ndim != 2 or bias.data.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise DimensionError(f"bias_add: cannot add bias {bias.shape} to rows of {x.shape}")

    def backward(g):
        return g, g.sum(axis=0)

    return Tensor._from_op(x.data + bias.data, (x, bias), backward, "bias_add")


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a) -> Tensor:
    a = _lift(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {a.shape}")
    return Tensor._from_op(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _lift(a)
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from exc
    return Tensor._from_op(out.copy(), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def getitem(a, index) -> Tensor:
    a = _lift(a)
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._from_op(np.array(out, copy=True), (a,), backward, "slice")


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(out, tensors, backward, "concat")


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def relu(a) -> Tensor:
    a = _lift(a)
    mask = a.data > 0
    return Tensor._from_op(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def tanh(a) -> Tensor:
    a = _lift(a)
    out = np.tanh(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = _lift(a)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return Tensor._from_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def exp(a) -> Tensor:
    a = _lift(a)
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = _lift(a)
    if np.any(a.data <= 0):
        raise ValueError("log: argument must be strictly positive")
    return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def tsum(a, axis: int | None = None) -> Tensor:
    a = _lift(a)
    out = a.data.sum(axis=axis, dtype=np.float64).astype(a.data.dtype)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return Tensor._from_op(out, (a,), backward, "sum")


def mean(a, axis: int | None = None) -> Tensor:
    a = _lift(a)
    n = a.size if axis is None else a.shape[axis]
    out = a.data.mean(axis=axis, dtype=np.float64).astype(a.data.dtype)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g / n, axis), a.shape).copy(),)

    return Tensor._from_op(out, (a,), backward, "mean")


# ---------------------------------------------------------------------------
# probabilistic heads and losses
# ---------------------------------------------------------------------------

def _softmax_np(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(v) -> Tensor:
    """Softmax over the last axis (a vector, or each row of a matrix)."""
    v = _lift(v)
    if v.data.ndim not in (1, 2):
        raise DimensionError(f"softmax expects a vector or a matrix of rows, got {v.shape}")
    out = _softmax_np(v.data)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return Tensor._from_op(out, (v,), backward, "softmax")


def log_softmax_np(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits, label, reduction: str = "mean") -> Tensor:
    """``-log softmax(logits)[label]``.

    ``logits`` is a vector with an integer ``label`` or an ``(n, M)`` matrix
    with ``n`` labels; rows are averaged (``reduction="mean"``) or summed.
    """
    logits = _lift(logits)
    x = logits.data
    single = x.ndim == 1
    rows = x[None, :] if single else x
    if rows.ndim != 2:
        raise DimensionError(f"cross_entropy expects logits of rank 1 or 2, got {logits.shape}")
    labels = np.atleast_1d(np.asarray(label)).astype(np.int64)
    n, m = rows.shape
    if labels.shape != (n,):
        raise DimensionError(f"cross_entropy: {labels.shape[0]} labels for {n} logit rows")
    if np.any(labels < 0) or np.any(labels >= m):
        raise IndexError(f"label out of range [0, {m}): {labels[(labels < 0) | (labels >= m)][0]}")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")

    logp = log_softmax_np(rows.astype(np.float64))
    picked = -logp[np.arange(n), labels]
    scale = 1.0 / n if reduction == "mean" else 1.0
    out = np.asarray(picked.sum() * scale, dtype=x.dtype)

    def backward(g):
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        grad = (grad * scale * g).astype(x.dtype)
        return (grad[0] if single else grad,)

    return Tensor._from_op(out, (logits,), backward, "cross_entropy")


def mse(a, b) -> Tensor:
    """Mean of squared elementwise differences."""
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise DimensionError(f"mse: shapes {a.shape} and {b.shape} differ")
    diff = a.data - b.data
    n = diff.size
    out = np.asarray(np.mean(np.square(diff, dtype=np.float64)), dtype=diff.dtype)

    def backward(g):
        ga = (2.0 / n) * g * diff
        return ga, -ga

    return Tensor._from_op(out, (a, b), backward, "mse")


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[], Tensor], leaf: Tensor, h: float = 1e-3) -> float:
    """Worst relative disagreement between backprop and central differences.

    ``f`` must rebuild its graph from ``leaf`` on every call and return a
    scalar.  The check runs in float64 and restores the leaf afterwards.
    Error per element is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    saved_data, saved_grad, saved_flag = leaf.data, leaf.grad, leaf.requires_grad
    try:
        leaf.data = saved_data.astype(np.float64)
        leaf.grad = None
        leaf.requires_grad = True
        f().backward()
        analytic = leaf.grad.astype(np.float64).ravel()

        flat = leaf.data.reshape(-1)
        numeric = np.empty_like(analytic)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(f().data)
            flat[i] = orig - h
            down = float(f().data)
            flat[i] = orig
            numeric[i] = (up - down) / (2.0 * h)
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
        return float(err.max()) if err.size else 0.0
    finally:
        leaf.data, leaf.grad, leaf.requires_grad = saved_data, saved_grad, saved_flag


__all__ = [
    "DimensionError",
    "GraphError",
    "Tensor",
    "add",
    "bias_add",
    "concat",
    "cross_entropy",
    "exp",
    "getitem",
    "grad_check",
    "log",
    "matmul",
    "mean",
    "mse",
    "power",
    "relu",
    "reshape",
    "sigmoid",
    "softmax",
    "sub",
    "tanh",
    "tensor",
    "transpose",
    "tsum",
]
