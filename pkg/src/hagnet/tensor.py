"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the operations the graph models need are provided. Every op is a plain
function that computes its forward value with numpy and, when a tape is
active and some input requires a gradient, records a closure mapping the
output gradient to input gradients.

    >>> x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_all(x)
    >>> tape.backward(loss)
    >>> x.grad
    array([1., 1., 1.])
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DimensionError",
    "Tensor",
    "Tape",
    "BatchNormStats",
    "backward",
    "emit",
    "no_grad_active",
    "matmul",
    "add",
    "sub",
    "mul",
    "relu",
    "sigmoid",
    "tanh",
    "maximum",
    "scale",
    "elementwise",
    "concat",
    "embedding_lookup",
    "gather_rows",
    "sum_all",
    "batch_norm_1d",
    "segment_sum",
    "segment_mean",
    "segment_max",
    "segment_softmax",
    "head_dot",
    "head_weight",
    "scatter_add_rows",
]


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """A float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of differentiable operations.

    Used as a context manager; ops executed inside the block are appended
    in execution order, which is a topological order by construction.
    """

    _stack: list = []

    def __init__(self):
        self.nodes: list = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, inputs: Sequence[Tensor], rule: Callable) -> None:
        self.nodes.append((out, tuple(inputs), rule))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it.

        The tape is left intact, so it can be replayed after zeroing grads.
        """
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        produced = set()
        for out, inputs, rule in reversed(self.nodes):
            produced.add(id(out))
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, rule(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        leaves = {}
        for _, inputs, _ in self.nodes:
            for inp in inputs:
                if inp.requires_grad and id(inp) not in produced:
                    leaves[id(inp)] = inp
        if id(loss) not in produced and loss.requires_grad:
            leaves[id(loss)] = loss
        for key, leaf in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def backward(loss: Tensor, tape: Tape) -> None:
    tape.backward(loss)


def no_grad_active() -> bool:
    return not Tape._stack


def emit(data: np.ndarray, inputs: Sequence[Tensor], rule: Callable) -> Tensor:
    """Wrap ``data`` as an op output; ``rule(g)`` returns one gradient per input."""
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs and bool(Tape._stack))
    if out.requires_grad:
        Tape._stack[-1].record(out, inputs, rule)
    return out


# ---------------------------------------------------------------------------
# dense algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    A, B = a.data, b.data

    def rule(g):
        return g @ B.T, A.T @ g

    return emit(A @ B, (a, b), rule)


def _check_binary(a: Tensor, b: Tensor, opname: str) -> bool:
    """Return True when ``b`` is a trailing row vector broadcast over ``a``."""
    if a.shape == b.shape:
        return False
    if a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]:
        return True
    raise DimensionError(f"{opname}: incompatible shapes {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    bc = _check_binary(a, b, "add")

    def rule(g):
        return g, (g.sum(axis=0) if bc else g)

    return emit(a.data + b.data, (a, b), rule)


def sub(a: Tensor, b: Tensor) -> Tensor:
    bc = _check_binary(a, b, "sub")

    def rule(g):
        return g, -(g.sum(axis=0) if bc else g)

    return emit(a.data - b.data, (a, b), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    bc = _check_binary(a, b, "mul")
    A, B = a.data, b.data

    def rule(g):
        gb = g * A
        return g * B, (gb.sum(axis=0) if bc else gb)

    return emit(A * B, (a, b), rule)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    if a.shape != b.shape:
        raise DimensionError(f"maximum: incompatible shapes {a.shape} and {b.shape}")
    pick_a = a.data >= b.data

    def rule(g):
        return np.where(pick_a, g, 0.0), np.where(pick_a, 0.0, g)

    return emit(np.where(pick_a, a.data, b.data), (a, b), rule)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return emit(a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return emit(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign to avoid overflow in exp
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return emit(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return emit(t, (a,), lambda g: (g * (1.0 - t * t),))


_UNARY = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Dispatch one of add, sub, mul, relu, sigmoid, tanh by name."""
    if op in _UNARY:
        if b is not None:
            raise TypeError(f"{op} is unary")
        return _UNARY[op](a)
    if op in _BINARY:
        if b is None:
            raise TypeError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat of an empty list")
    if len(tensors) == 1:
        return tensors[0]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise DimensionError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=ax))

    return emit(np.concatenate([t.data for t in tensors], axis=ax), tensors, rule)


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return emit(np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, g.item()),))


# ---------------------------------------------------------------------------
# row gather / scatter


def _summing_matrix(index: np.ndarray, num_rows: int) -> sp.csr_matrix:
    """CSR operator S with (S @ v)[r] = sum of v[i] for index[i] == r.

    Within a row, terms are stored (and therefore accumulated) in stable
    sorted order, which keeps results reproducible.
    """
    order = np.argsort(index, kind="stable")
    counts = np.bincount(index, minlength=num_rows)
    indptr = np.zeros(num_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return sp.csr_matrix((np.ones(index.size), order, indptr), shape=(num_rows, index.size))


def _segment_sum_array(values: np.ndarray, index: np.ndarray, num_rows: int) -> np.ndarray:
    if index.size == 0:
        return np.zeros((num_rows,) + values.shape[1:])
    flat = values.reshape(values.shape[0], -1)
    out = _summing_matrix(index, num_rows) @ flat
    return np.asarray(out).reshape((num_rows,) + values.shape[1:])


def scatter_add_rows(index, values: np.ndarray, num_rows: int) -> np.ndarray:
    """Sum rows of ``values`` into ``num_rows`` buckets given by ``index``."""
    return _segment_sum_array(values, np.asarray(index, dtype=np.int64), num_rows)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    V = table.shape[0]
    if ids.size:
        bad = ids[(ids < 0) | (ids >= V)]
        if bad.size:
            raise IndexError(f"embedding id {int(bad[0])} out of range [0, {V})")

    def rule(g):
        return (scatter_add_rows(ids, g, V),)

    return emit(table.data[ids], (table,), rule)


gather_rows = embedding_lookup


# ---------------------------------------------------------------------------
# segment reductions; ``index`` must be sorted ascending


def _require_sorted(index) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    if index.size and np.any(index[1:] < index[:-1]):
        raise ValueError("segment index must be sorted ascending")
    return index


def _bcast(v: np.ndarray, ndim: int) -> np.ndarray:
    return v.reshape((-1,) + (1,) * (ndim - 1))


def segment_sum(x: Tensor, index, num_segments: int) -> Tensor:
    """Row ``s`` of the result sums rows of ``x`` whose index equals ``s``."""
    index = _require_sorted(index)
    out = _segment_sum_array(x.data, index, num_segments)
    return emit(out, (x,), lambda g: (g[index],))


def segment_mean(x: Tensor, index, num_segments: int) -> Tensor:
    """Segment average; empty segments give zero rows."""
    index = _require_sorted(index)
    counts = np.bincount(index, minlength=num_segments).astype(np.float64)
    inv = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
    out = _segment_sum_array(x.data, index, num_segments) * _bcast(inv, x.data.ndim)
    w = _bcast(inv[index], x.data.ndim)
    return emit(out, (x,), lambda g: (g[index] * w,))


def segment_max(x: Tensor, index, num_segments: int) -> Tensor:
    """Componentwise segment max; empty segments give zero rows.

    Tied maxima share the incoming gradient equally.
    """
    index = _require_sorted(index)
    out = np.zeros((num_segments,) + x.shape[1:])
    if index.size == 0:
        return emit(out, (x,), lambda g: (np.zeros_like(x.data),))
    starts = np.flatnonzero(np.r_[True, index[1:] != index[:-1]])
    out[index[starts]] = np.maximum.reduceat(x.data, starts, axis=0)
    hit = (x.data == out[index]).astype(np.float64)
    ties = _segment_sum_array(hit, index, num_segments)
    share = hit / ties[index]

    def rule(g):
        return (g[index] * share,)

    return emit(out, (x,), rule)


def segment_softmax(scores: Tensor, index, num_segments: int) -> Tensor:
    """Softmax of ``scores`` rows within each segment, per column."""
    index = _require_sorted(index)
    s = scores.data
    if index.size == 0:
        return emit(np.zeros_like(s), (scores,), lambda g: (np.zeros_like(s),))
    starts = np.flatnonzero(np.r_[True, index[1:] != index[:-1]])
    seg_max = np.zeros((num_segments,) + s.shape[1:])
    seg_max[index[starts]] = np.maximum.reduceat(s, starts, axis=0)
    e = np.exp(s - seg_max[index])
    p = e / _segment_sum_array(e, index, num_segments)[index]

    def rule(g):
        pg = p * g
        return (pg - p * _segment_sum_array(pg, index, num_segments)[index],)

    return emit(p, (scores,), rule)


# ---------------------------------------------------------------------------
# multi-head helpers for attention


def head_dot(q: Tensor, k: Tensor, heads: int) -> Tensor:
    """Per-head dot products of matching rows: [E, H*dh] x [E, H*dh] -> [E, H]."""
    if q.shape != k.shape or q.shape[1] % heads:
        raise DimensionError(f"head_dot: shapes {q.shape}, {k.shape} with {heads} heads")
    E, D = q.shape
    Q = q.data.reshape(E, heads, D // heads)
    K = k.data.reshape(E, heads, D // heads)

    def rule(g):
        g3 = g[:, :, None]
        return (g3 * K).reshape(E, D), (g3 * Q).reshape(E, D)

    return emit((Q * K).sum(axis=2), (q, k), rule)


def head_weight(v: Tensor, w: Tensor, heads: int) -> Tensor:
    """Scale each head block of ``v`` [E, H*dh] by the matching column of ``w`` [E, H]."""
    E, D = v.shape
    if w.shape != (E, heads) or D % heads:
        raise DimensionError(f"head_weight: shapes {v.shape}, {w.shape} with {heads} heads")
    V = v.data.reshape(E, heads, D // heads)
    W = w.data

    def rule(g):
        G = g.reshape(E, heads, D // heads)
        return (G * W[:, :, None]).reshape(E, D), (G * V).sum(axis=2)

    return emit((V * W[:, :, None]).reshape(E, D), (v, w), rule)


# ---------------------------------------------------------------------------
# batch normalisation


class BatchNormStats:
    """Running mean/variance for one batch-norm site."""

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps


def batch_norm_1d(
    x: Tensor,
    stats: BatchNormStats,
    mode: str = "train",
    gamma: Optional[Tensor] = None,
    beta: Optional[Tensor] = None,
) -> Tensor:
    """Normalise columns of ``x`` [n, d].

    Train mode uses the biased batch variance and updates ``stats`` in place
    (the running variance takes the unbiased estimate); eval mode reads
    ``stats`` only.
    """
    if x.data.ndim != 2:
        raise DimensionError(f"batch_norm_1d expects [n, d], got {x.shape}")
    n, d = x.shape
    if n == 0:
        raise ValueError("batch_norm_1d: empty batch")
    if gamma is None:
        gamma = Tensor(np.ones(d))
    if beta is None:
        beta = Tensor(np.zeros(d))
    X = x.data
    if mode == "train":
        mu = X.mean(axis=0)
        xc = X - mu
        var = (xc * xc).mean(axis=0)
        m = stats.momentum
        stats.mean = (1 - m) * stats.mean + m * mu
        unbiased = var * n / (n - 1) if n > 1 else var
        stats.var = (1 - m) * stats.var + m * unbiased
    elif mode == "eval":
        xc = X - stats.mean
        var = stats.var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv = 1.0 / np.sqrt(var + stats.eps)
    xhat = xc * inv
    G = gamma.data
    train = mode == "train"

    def rule(g):
        gx_hat = g * G
        if train:
            gx = inv * (gx_hat - gx_hat.mean(axis=0) - xhat * (gx_hat * xhat).mean(axis=0))
        else:
            gx = gx_hat * inv
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return emit(xhat * G + beta.data, (x, gamma, beta), rule)
