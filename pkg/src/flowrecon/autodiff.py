"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every operation records its parents and a vector-Jacobian closure on a tape
of Var nodes; `backward` walks the tape in reverse topological order and
accumulates gradients on the leaves. Only the handful of operations the
reconstruction model needs are implemented, each with an exact hand-written
adjoint. All values are float64 and operations are sequential, so repeated
runs are bit-identical.

Non-differentiable inputs can be passed as plain ndarrays or Python floats;
no gradient is tracked through them.
"""

from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Sequence

import numpy as np

_GRAD_ENABLED: contextvars.ContextVar[bool] = contextvars.ContextVar(
    "flowrecon_grad_enabled", default=True
)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation-only forwards)."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


class Var:
    """One tape node: a float64 array value plus backward bookkeeping."""

    __slots__ = ("value", "grad", "_parents", "_vjp")

    def __init__(
        self,
        value,
        _parents: tuple["Var", ...] = (),
        _vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape})"


def _node(value: np.ndarray, parents, vjp) -> Var:
    if _GRAD_ENABLED.get():
        return Var(value, tuple(parents), vjp)
    return Var(value)


def _is_var(x) -> bool:
    return isinstance(x, Var)


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary(a, b, value, da, db) -> Var:
    """Assemble a binary op; constants on either side drop out of the tape."""
    parents, slots = [], []
    if _is_var(a):
        parents.append(a)
        slots.append("a")
    if _is_var(b):
        parents.append(b)
        slots.append("b")
    if not parents:
        return Var(value)

    def vjp(g):
        out = []
        for s in slots:
            out.append(da(g) if s == "a" else db(g))
        return out

    return _node(value, parents, vjp)


def add(a, b) -> Var:
    av, bv = _val(a), _val(b)
    return _binary(
        a, b, av + bv,
        lambda g: _unbroadcast(g, av.shape),
        lambda g: _unbroadcast(g, bv.shape),
    )


def sub(a, b) -> Var:
    av, bv = _val(a), _val(b)
    return _binary(
        a, b, av - bv,
        lambda g: _unbroadcast(g, av.shape),
        lambda g: _unbroadcast(-g, bv.shape),
    )


def mul(a, b) -> Var:
    av, bv = _val(a), _val(b)
    return _binary(
        a, b, av * bv,
        lambda g: _unbroadcast(g * bv, av.shape),
        lambda g: _unbroadcast(g * av, bv.shape),
    )


def div(a, b) -> Var:
    av, bv = _val(a), _val(b)
    return _binary(
        a, b, av / bv,
        lambda g: _unbroadcast(g / bv, av.shape),
        lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape),
    )


def matmul(a, b) -> Var:
    """2-D matrix product with gradients for either or both operands."""
    av, bv = _val(a), _val(b)
    return _binary(
        a, b, av @ bv,
        lambda g: g @ bv.T,
        lambda g: av.T @ g,
    )


def matvec(a, v) -> Var:
    """(n, k) @ (k,) -> (n,)."""
    av, vv = _val(a), _val(v)
    return _binary(
        a, v, av @ vv,
        lambda g: np.outer(g, vv),
        lambda g: av.T @ g,
    )


def scale(a: Var, c: float) -> Var:
    return _node(a.value * c, (a,), lambda g: (g * c,))


def square(a: Var) -> Var:
    return _node(a.value * a.value, (a,), lambda g: (2.0 * a.value * g,))


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def sigmoid(a: Var) -> Var:
    out = 1.0 / (1.0 + np.exp(-a.value))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def leaky_relu(a: Var, slope: float = 0.2) -> Var:
    v = a.value
    out = np.where(v > 0.0, v, slope * v)
    return _node(out, (a,), lambda g: (g * np.where(v > 0.0, 1.0, slope),))


def elu(a: Var) -> Var:
    """exp(x) - 1 below zero, identity above; C1 at the joint."""
    v = a.value
    neg = np.expm1(np.minimum(v, 0.0))
    out = np.where(v > 0.0, v, neg)
    dd = np.where(v > 0.0, 1.0, neg + 1.0)
    return _node(out, (a,), lambda g: (g * dd,))


def narrow(a: Var, start: int, stop: int) -> Var:
    """1-D slice a[start:stop] keeping gradient flow."""
    def vjp(g):
        z = np.zeros_like(a.value)
        z[start:stop] = g
        return (z,)

    return _node(a.value[start:stop], (a,), vjp)


def concat_cols(a, b) -> Var:
    av, bv = _val(a), _val(b)
    fa = av.shape[1]
    return _binary(
        a, b, np.concatenate([av, bv], axis=1),
        lambda g: g[:, :fa],
        lambda g: g[:, fa:],
    )


def take1d(a: Var, idx: np.ndarray) -> Var:
    """Gather from a 1-D Var; duplicate indices accumulate in the adjoint."""
    n = len(a.value)

    def vjp(g):
        return (np.bincount(idx, weights=g, minlength=n),)

    return _node(a.value[idx], (a,), vjp)


def take_rows_unique(a: Var, idx: np.ndarray) -> Var:
    """Gather rows by an index array with no repeats (scatter adjoint)."""
    def vjp(g):
        z = np.zeros_like(a.value)
        z[idx] = g
        return (z,)

    return _node(a.value[idx], (a,), vjp)


def segment_softmax(e: Var, indptr: np.ndarray, seg_of: np.ndarray) -> Var:
    """Softmax over contiguous segments of a 1-D array.

    `indptr` delimits the segments (CSR style, every segment non-empty) and
    `seg_of[k]` names the segment of element k. Max-shifted for stability.
    The adjoint is d e = alpha * (g - sum_seg(g * alpha)).
    """
    v = e.value
    starts = indptr[:-1]
    m = np.maximum.reduceat(v, starts)
    z = np.exp(v - m[seg_of])
    s = np.add.reduceat(z, starts)
    alpha = z / s[seg_of]

    def vjp(g):
        t = g * alpha
        seg_sum = np.add.reduceat(t, starts)
        return (alpha * (g - seg_sum[seg_of]),)

    return _node(alpha, (e,), vjp)


def sum_all(a: Var) -> Var:
    def vjp(g):
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return _node(np.asarray(a.value.sum()), (a,), vjp)


def mean_all(a: Var) -> Var:
    n = a.value.size

    def vjp(g):
        return (np.broadcast_to(g / n, a.value.shape).copy(),)

    return _node(np.asarray(a.value.mean()), (a,), vjp)


def reshape(a: Var, shape) -> Var:
    old = a.value.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def custom(value: np.ndarray, parents: tuple[Var, ...], vjp) -> Var:
    """Escape hatch for ops with hand-written adjoints (sparse kernels)."""
    return _node(value, parents, vjp)


def backward(root: Var, seed: np.ndarray | None = None) -> None:
    """Accumulate dL/dx into .grad for every Var reachable from `root`.

    `seed` defaults to ones (the usual scalar-loss case). Each call builds
    fresh gradients on this tape; tapes are single-use.
    """
    if seed is None:
        seed = np.ones_like(root.value)
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))

    root.grad = np.asarray(seed, dtype=np.float64)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = np.asarray(g, dtype=np.float64)
            else:
                parent.grad = parent.grad + g
