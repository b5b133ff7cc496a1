"""Dense tensors with tape-based reverse-mode differentiation.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients. ``backward`` walks
the tape in reverse topological order. Broadcasting is deliberately limited
to the bias term of :func:`linear`; every other binary op needs equal shapes.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

_GRAD_ENABLED = True
_MAC_COUNTER: list[int] | None = None
_KINK_MONITOR: list[float] | None = None


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def count_macs():
    """Tally multiply-accumulates of matmul-like ops executed in the block.

    Yields a one-element list whose entry holds the running total.
    """
    global _MAC_COUNTER
    prev = _MAC_COUNTER
    _MAC_COUNTER = [0]
    try:
        yield _MAC_COUNTER
    finally:
        _MAC_COUNTER = prev


def _tally(macs: int) -> None:
    if _MAC_COUNTER is not None:
        _MAC_COUNTER[0] += int(macs)


@contextlib.contextmanager
def kink_monitor():
    """Track how close piecewise ops came to a non-differentiable point.

    Yields a one-element list holding the smallest distance seen: ``|x|``
    for relu and leaky relu, and the top-two gap for max reductions.
    """
    global _KINK_MONITOR
    prev = _KINK_MONITOR
    _KINK_MONITOR = [math.inf]
    try:
        yield _KINK_MONITOR
    finally:
        _KINK_MONITOR = prev


def _note_kink(distance: np.ndarray) -> None:
    if _KINK_MONITOR is not None and distance.size:
        _KINK_MONITOR[0] = min(_KINK_MONITOR[0], float(np.min(distance)))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf's ``grad``.

        ``grad`` defaults to ones, which for a non-scalar output means the
        gradient of ``self.sum()``.
        """
        if grad is None:
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.shape:
            raise ValueError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")

        order = _topological(self)
        pending: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _make(data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    parents = tuple(parents)
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = parents
        out._backward = backward
    return out


def colsum(a: np.ndarray) -> np.ndarray:
    """Sum over axis 0 of a 2-D array (a BLAS product; much faster than ``sum(axis=0)``)."""
    return np.ones(a.shape[0], dtype=a.dtype) @ a


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,))


# linear algebra


def matmul(a, b) -> Tensor:
    """2-D matrix product."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    _tally(a.shape[0] * a.shape[1] * b.shape[1])
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def bmm(a, b) -> Tensor:
    """Batched matrix product ``[n, p, q] @ [n, q, r] -> [n, p, r]``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 3 or b.data.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ValueError(f"bmm: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    n, p, q = a.shape
    _tally(n * p * q * b.shape[2])

    def backward(g):
        return np.matmul(g, bd.transpose(0, 2, 1)), np.matmul(ad.transpose(0, 2, 1), g)

    return _make(np.matmul(ad, bd), (a, b), backward)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` shaped ``[d_in, d_out]``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    xd, wd = x.data, weight.data
    _tally(x.shape[0] * weight.shape[0] * weight.shape[1])
    out = xd @ wd
    if bias is None:
        return _make(out, (x, weight), lambda g: (g @ wd.T, xd.T @ g))
    bias = as_tensor(bias)
    if bias.shape != (weight.shape[1],):
        raise ValueError(f"linear: bias shape {bias.shape} != ({weight.shape[1]},)")
    out = out + bias.data
    return _make(out, (x, weight, bias), lambda g: (g @ wd.T, xd.T @ g, colsum(g)))


# normalization


def batch_norm(x, gamma, beta, mean=None, var=None, eps: float = 1e-5, weights=None):
    """Per-column normalization of a 2-D input.

    With ``mean``/``var`` omitted the batch statistics (biased variance) are
    used and returned alongside the output; otherwise the given statistics are
    treated as constants. ``weights`` gives each row a multiplicity, so the
    result equals normalizing the input with row ``i`` repeated ``weights[i]``
    times (rows of weight 0 are normalized but do not enter the statistics).
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.data.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ValueError(f"batch_norm: input {x.shape} vs gamma {gamma.shape} / beta {beta.shape}")
    xd, gd = x.data, gamma.data
    if mean is None:
        if weights is None:
            n = xd.shape[0]
            mu = colsum(xd) / n
            centered = xd - mu
            v = colsum(centered * centered) / n
        else:
            w = np.asarray(weights, dtype=xd.dtype).reshape(-1, 1)
            n = float(w.sum())
            wv = w.reshape(-1)
            mu = (wv @ xd) / n
            centered = xd - mu
            v = (wv @ (centered * centered)) / n
        inv = 1.0 / np.sqrt(v + eps)
        xhat = centered * inv
        out = xhat * gd + beta.data

        def backward(g):
            dxhat = g * gd
            s1, s2 = colsum(dxhat), colsum(dxhat * xhat)
            if weights is None:
                dx = (inv / n) * (n * dxhat - s1 - xhat * s2)
            else:
                dx = inv * (dxhat - (w / n) * (s1 + xhat * s2))
            return dx, colsum(g * xhat), colsum(g)

        return _make(out, (x, gamma, beta), backward), mu, v

    inv = 1.0 / np.sqrt(np.asarray(var, dtype=xd.dtype) + eps)
    xhat = (xd - np.asarray(mean, dtype=xd.dtype)) * inv
    out = xhat * gd + beta.data

    def backward_eval(g):
        return g * (gd * inv), colsum(g * xhat), colsum(g)

    return _make(out, (x, gamma, beta), backward_eval), None, None


# activations


def relu(x) -> Tensor:
    x = as_tensor(x)
    _note_kink(np.abs(x.data))
    mask = x.data > 0
    return _make(np.maximum(x.data, 0), (x,), lambda g: (g * mask,))


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    x = as_tensor(x)
    _note_kink(np.abs(x.data))
    # subgradient at exactly 0 is the slope
    factor = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return _make(x.data * factor, (x,), lambda g: (g * factor,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def dropout(x, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity when ``p == 0`` or not training."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a generator")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


# losses


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label out of range for {c} classes")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (d * (g / n),)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


# structural ops


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def reduce_sum(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    out = x.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.full(shape, g, dtype=x.dtype),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.asarray(out), (x,), backward)


def reduce_mean(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.shape[axis]
    return scale(reduce_sum(x, axis), 1.0 / count)


def reduce_max(x, axis: int = 0) -> Tensor:
    """Max along ``axis``; the gradient goes to the first maximal entry."""
    x = as_tensor(x)
    idx = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)
    if _KINK_MONITOR is not None and x.data.shape[axis] > 1:
        top2 = -np.partition(-x.data, 1, axis=axis).take([0, 1], axis=axis)
        _note_kink(np.abs(np.diff(top2, axis=axis)))

    def backward(g):
        dx = np.zeros_like(x.data)
        np.put_along_axis(dx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (dx,)

    return _make(out, (x,), backward)


def _selection_matrix(index: np.ndarray, n: int, dtype, values=None) -> sp.csr_matrix:
    """Sparse ``[len(index), n]`` matrix with one entry per row at ``index[r]``."""
    m = len(index)
    data = np.ones(m, dtype=dtype) if values is None else values
    return sp.csr_matrix((data, index, np.arange(m + 1)), shape=(m, n))


def gather_rows(x, index: np.ndarray) -> Tensor:
    """``x[index]`` for a 2-D ``x``; ``index`` may have any integer shape."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    if x.data.ndim != 2:
        raise ValueError("gather_rows expects a 2-D tensor")
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise IndexError(f"row index out of range for {x.shape[0]} rows")
    n, d = x.shape
    flat = index.reshape(-1)

    def backward(g):
        sel = _selection_matrix(flat, n, x.dtype)
        return (np.asarray(sel.T @ g.reshape(-1, d)),)

    return _make(x.data[index], (x,), backward)


def neighbor_sum(weights, x, rows: np.ndarray) -> Tensor:
    """``out[i] = sum_b weights[i, b] * x[rows[i, b]]`` for ``rows`` of shape ``[n, k]``."""
    weights, x = as_tensor(weights), as_tensor(x)
    rows = np.asarray(rows, dtype=np.intp)
    n, k = rows.shape
    if weights.shape != (n, k) or x.data.ndim != 2:
        raise ValueError(f"neighbor_sum: weights {weights.shape}, rows {rows.shape}, x {x.shape}")
    if rows.size and (rows.min() < 0 or rows.max() >= x.shape[0]):
        raise IndexError(f"neighbour index out of range for {x.shape[0]} rows")
    m = x.shape[0]
    xd = x.data
    mat = sp.csr_matrix((weights.data.reshape(-1), rows.reshape(-1), np.arange(0, n * k + 1, k)), shape=(n, m))
    _tally(n * k * x.shape[1])

    def backward(g):
        dw = np.matmul(xd[rows], g[:, :, None])[..., 0]
        return dw, np.asarray(mat.T @ g)

    return _make(np.asarray(mat @ xd), (weights, x), backward)


def numeric_grad(f: Callable[[], float], arr: np.ndarray, step: float = 1e-5, indices=None) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` w.r.t. ``arr`` (perturbed in place).

    With ``indices`` (flat positions) only those entries are probed and a
    1-D array of their derivatives is returned.
    """
    flat = arr.reshape(-1)
    probe = np.arange(flat.size) if indices is None else np.asarray(indices)
    dflat = np.zeros(len(probe), dtype=np.float64)
    for j, i in enumerate(probe):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        dflat[j] = (fp - fm) / (2 * step)
    return dflat.reshape(arr.shape) if indices is None else dflat
