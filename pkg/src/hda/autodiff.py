"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every differentiable value is a :class:`Tensor`. Operations build a dynamic
graph as they execute; :func:`backward` orders the graph topologically into a
:class:`Tape` and walks it once in reverse, accumulating gradients into every
leaf with ``requires_grad=True``.

Binary ops accept equal shapes or a scalar operand. Row-vector addition is a
separate primitive (:func:`add_bias`) rather than general broadcasting.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "DomainError",
    "tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "tanh",
    "exp",
    "log",
    "abs_",
    "square",
    "add_bias",
    "take_rows",
    "concat_rows",
    "softmax",
    "sum_",
    "mean",
    "l1_mean",
    "softmax_cross_entropy",
    "grad_reverse",
    "kurtosis",
    "backward",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """An input lies outside the mathematical domain of the operation."""


class Tensor:
    """Dense float64 array with an optional reverse-mode gradient node.

    Args:
        data: array-like values; copied into a new float64 array.
        requires_grad: whether backward should accumulate into ``grad``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], tuple]] = None
        self.op = "leaf"

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple, backward_fn, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        needs = any(p.requires_grad for p in parents)
        out.requires_grad = needs
        if needs:
            out._parents = parents
            out._backward = backward_fn
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_(self)

    def mean(self):
        return mean(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _is_scalar(t: Tensor) -> bool:
    return t.data.size == 1 and t.data.ndim <= 1


def _check_binary(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(grad: np.ndarray, t: Tensor) -> np.ndarray:
    # scalar operands receive the summed gradient
    if grad.shape == t.shape:
        return grad
    return np.asarray(grad.sum()).reshape(t.shape)


# ---------------------------------------------------------------------------
# matrix product


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        return g @ bd.T, ad.T @ g

    return Tensor._from_op(ad @ bd, (a, b), back, "matmul")


# ---------------------------------------------------------------------------
# elementwise


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "add")

    def back(g):
        return _unbroadcast(g, a), _unbroadcast(g, b)

    return Tensor._from_op(a.data + b.data, (a, b), back, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "sub")

    def back(g):
        return _unbroadcast(g, a), _unbroadcast(-g, b)

    return Tensor._from_op(a.data - b.data, (a, b), back, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "mul")
    ad, bd = a.data, b.data

    def back(g):
        return _unbroadcast(g * bd, a), _unbroadcast(g * ad, b)

    return Tensor._from_op(ad * bd, (a, b), back, "mul")


def scale(x: ArrayLike, c: float) -> Tensor:
    """Multiply by a constant (non-differentiable) scalar."""
    x = _as_tensor(x)
    c = float(c)
    return Tensor._from_op(x.data * c, (x,), lambda g: (g * c,), "scale")


def relu(x: ArrayLike) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0.0  # derivative at exactly 0 is 0
    return Tensor._from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def tanh(x: ArrayLike) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    return Tensor._from_op(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def exp(x: ArrayLike) -> Tensor:
    x = _as_tensor(x)
    y = np.exp(x.data)
    return Tensor._from_op(y, (x,), lambda g: (g * y,), "exp")


def log(x: ArrayLike) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data <= 0.0):
        raise DomainError("log: input contains non-positive values")
    xd = x.data
    return Tensor._from_op(np.log(xd), (x,), lambda g: (g / xd,), "log")


def abs_(x: ArrayLike) -> Tensor:
    x = _as_tensor(x)
    s = np.sign(x.data)
    return Tensor._from_op(np.abs(x.data), (x,), lambda g: (g * s,), "abs")


def square(x: ArrayLike) -> Tensor:
    x = _as_tensor(x)
    xd = x.data
    return Tensor._from_op(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


def add_bias(x: ArrayLike, b: ArrayLike) -> Tensor:
    """Add a length-``n`` row vector ``b`` to every row of an ``m x n`` matrix."""
    x, b = _as_tensor(x), _as_tensor(b)
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias: cannot add {b.shape} to rows of {x.shape}")
    return Tensor._from_op(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)), "add_bias")


def take_rows(x: ArrayLike, idx) -> Tensor:
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor._from_op(x.data[idx], (x,), back, "take_rows")


def concat_rows(parts: Sequence[ArrayLike]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat_rows: nothing to concatenate")
    cols = {p.shape[1:] for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: mismatched trailing shapes {sorted(cols)}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def back(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return Tensor._from_op(
        np.concatenate([p.data for p in parts], axis=0), tuple(parts), back, "concat_rows"
    )


def _softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax(x: ArrayLike) -> Tensor:
    """Row-wise softmax of an ``n x C`` matrix."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"softmax: expected a matrix, got shape {x.shape}")
    p = _softmax_np(x.data)

    def back(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return Tensor._from_op(p, (x,), back, "softmax")


# ---------------------------------------------------------------------------
# reductions


def _nonempty(x: Tensor, name: str) -> None:
    if x.data.size == 0:
        raise ValueError(f"{name}: empty tensor")


def sum_(x: ArrayLike) -> Tensor:
    x = _as_tensor(x)
    _nonempty(x, "sum")
    shape = x.shape
    return Tensor._from_op(
        np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),), "sum"
    )


def mean(x: ArrayLike) -> Tensor:
    x = _as_tensor(x)
    _nonempty(x, "mean")
    shape, n = x.shape, x.data.size
    return Tensor._from_op(
        np.asarray(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),), "mean"
    )


def l1_mean(x: ArrayLike) -> Tensor:
    """Mean of ``|x|`` over every element (batch and feature dimensions)."""
    x = _as_tensor(x)
    _nonempty(x, "l1_mean")
    s = np.sign(x.data)
    n = x.data.size
    return Tensor._from_op(
        np.asarray(np.abs(x.data).mean()), (x,), lambda g: (s * (float(g) / n),), "l1_mean"
    )


def softmax_cross_entropy(logits: ArrayLike, labels, weights=None) -> Tensor:
    """Mean (or weighted mean) negative log-likelihood of ``labels``.

    Args:
        logits: ``n x C`` scores.
        labels: integer class indices, length ``n``.
        weights: optional nonnegative per-sample weights; the result is
            ``sum(w * nll) / sum(w)``. Weights are constants.
    """
    logits = _as_tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: logits must be a matrix, got {logits.shape}")
    n, c = logits.shape
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    if labels.shape[0] != n:
        raise ShapeError(f"softmax_cross_entropy: {labels.shape[0]} labels for {n} rows")
    if n == 0:
        raise ValueError("softmax_cross_entropy: empty batch")
    if np.any(labels < 0) or np.any(labels >= c):
        raise ValueError(f"softmax_cross_entropy: labels must lie in [0, {c})")
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != n or np.any(w < 0):
            raise ValueError("softmax_cross_entropy: weights must be nonnegative, one per row")
        total = w.sum()
        if total <= 0:
            raise ValueError("softmax_cross_entropy: weights sum to zero")
        w = w / total

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    nll = lse - z[rows, labels]
    loss = float(w @ nll)

    def back(g):
        p = _softmax_np(logits.data)
        p[rows, labels] -= 1.0
        return (p * (w * float(g))[:, None],)

    return Tensor._from_op(np.asarray(loss), (logits,), back, "softmax_cross_entropy")


def grad_reverse(x: ArrayLike, lam: float) -> Tensor:
    """Identity forward; multiplies the incoming gradient by ``-lam`` backward."""
    x = _as_tensor(x)
    lam = float(lam)
    return Tensor._from_op(x.data, (x,), lambda g: (-lam * g,), "grad_reverse")


def kurtosis(x: ArrayLike, var_floor: float = 1e-12) -> Tensor:
    """Column-averaged excess kurtosis of an ``n x d`` matrix, differentiable.

    Columns with variance below ``var_floor`` are skipped; if every column is
    skipped the result is 0 with zero gradient.
    """
    x = _as_tensor(x)
    xd = x.data if x.data.ndim == 2 else x.data.reshape(-1, 1)
    n = xd.shape[0]
    if n < 4:
        raise ValueError(f"kurtosis: need at least 4 rows, got {n}")
    c = xd - xd.mean(axis=0)
    m2 = (c * c).mean(axis=0)
    valid = m2 >= var_floor
    if not np.any(valid):
        return Tensor._from_op(np.asarray(0.0), (x,), lambda g: (np.zeros(x.shape),), "kurtosis")
    safe = np.where(valid, m2, 1.0)
    m4 = (c ** 4).mean(axis=0)
    per_col = np.where(valid, m4 / safe**2 - 3.0, 0.0)
    k = int(valid.sum())
    value = per_col.sum() / k
    c3 = c ** 3

    def back(g):
        # d(m4/m2^2)/dx_i = 4 (c_i^3 - mean c^3) / (n m2^2) - 4 m4 c_i / (n m2^3)
        grad = 4.0 * (c3 - c3.mean(axis=0)) / (n * safe**2) - 4.0 * m4 * c / (n * safe**3)
        grad = np.where(valid, grad, 0.0) * (float(g) / k)
        return (grad.reshape(x.shape),)

    return Tensor._from_op(np.asarray(value), (x,), back, "kurtosis")


# ---------------------------------------------------------------------------
# tape and backward


class Tape:
    """Topologically ordered record of the operations reachable from a root.

    Nodes are stored inputs-first; :meth:`run` walks them in reverse so each
    recorded operation propagates its gradient exactly once.
    """

    def __init__(self, nodes: list):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list = []
        seen: set = set()
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
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def run(self, root: Tensor, seed: np.ndarray) -> None:
        grads = {id(root): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad or pg is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = np.asarray(pg, dtype=np.float64)


def backward(loss: Tensor) -> Tape:
    """Populate ``grad`` on every ``requires_grad`` leaf reachable from ``loss``.

    Gradients accumulate across calls until the leaves are reset with
    :meth:`Tensor.zero_grad`.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        shape = getattr(loss, "shape", None)
        raise ValueError(f"backward: loss must be a scalar Tensor, got shape {shape}")
    tape = Tape.from_root(loss)
    if loss.requires_grad:
        tape.run(loss, np.ones_like(loss.data))
    return tape


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
