"""Dense 2-D tensors with reverse-mode differentiation.

Every value is a float64 matrix. Ops record their parents and a backward
closure; :func:`backward` walks the graph once in reverse topological order.
Only leaves with ``requires_grad`` keep a ``.grad``; intermediate gradients
live in a scratch dict for the duration of the sweep.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DegenerateInputError, DimensionError, NumericalError

EPS = 1e-12

_grad_enabled = True


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


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op: str = ""):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got {arr.ndim}-D data")
        if not np.isfinite(arr).all():
            raise NumericalError(f"non-finite value produced by {op or 'constructor'}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar
    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    @property
    def T(self) -> Tensor:
        return transpose(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable, op: str) -> Tensor:
    track = _grad_enabled and any(p.requires_grad for p in parents)
    if track:
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, op=op)
    return Tensor(data, op=op)


# ---------------------------------------------------------------------------
# graph traversal


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Repeated calls accumulate; callers reset with ``zero_grad`` between steps.
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward() needs a scalar (1x1) loss, got {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            if not np.isfinite(g).all():
                raise NumericalError("non-finite gradient reached a leaf")
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# elementwise and linear ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.cols != b.rows:
        raise DimensionError(f"matmul inner dims differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def _bw(g):
        return (g @ bd.T if a.requires_grad else None, ad.T @ g if b.requires_grad else None)

    return _make(ad @ bd, (a, b), _bw, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum. ``b`` may be a 1 x c row, broadcast over the rows of ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")
    if b.rows == 1 and b.cols == a.cols:
        return _make(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)), "add_row")
    raise DimensionError(f"add: cannot combine {a.shape} and {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"sub: shapes differ {a.shape} vs {b.shape}")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes differ {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def mul_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Elementwise product with a constant array (masks, one-hots, weights)."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != a.shape:
        raise DimensionError(f"mul_const: shapes differ {a.shape} vs {c.shape}")
    return _make(a.data * c, (a,), lambda g: (g * c,), "mul_const")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(a.data * s, (a,), lambda g: (g * s,), "scale")


def relu(a: Tensor) -> Tensor:
    on = a.data > 0
    return _make(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,), "relu")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow surfaces as NumericalError below
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    if (a.data <= 0).any():
        raise DegenerateInputError("log of a non-positive value")
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def transpose(a: Tensor) -> Tensor:
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if len({p.rows for p in parts}) != 1:
        raise DimensionError("concat_cols: row counts differ")
    edges = np.cumsum([0] + [p.cols for p in parts])

    def _bw(g):
        return tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=1), tuple(parts), _bw, "concat_cols")


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if len({p.cols for p in parts}) != 1:
        raise DimensionError("concat_rows: column counts differ")
    edges = np.cumsum([0] + [p.rows for p in parts])

    def _bw(g):
        return tuple(g[edges[i]:edges[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=0), tuple(parts), _bw, "concat_rows")


def take_rows(a: Tensor, idx) -> Tensor:
    """Gather rows by index (repeats allowed); backward scatter-adds."""
    idx = np.asarray(idx, dtype=np.intp).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= a.rows):
        raise DimensionError(f"take_rows: index out of range for {a.rows} rows")
    n = a.rows

    def _bw(g):
        out = np.zeros((n, g.shape[1]))
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), _bw, "take_rows")


def total(a: Tensor) -> Tensor:
    """Sum of all entries, as a 1 x 1 tensor."""
    shape = a.shape
    return _make(np.array([[a.data.sum()]]), (a,), lambda g: (np.full(shape, g[0, 0]),), "sum")


def mean(a: Tensor) -> Tensor:
    return scale(total(a), 1.0 / a.data.size)


def row_sum(a: Tensor) -> Tensor:
    """r x c -> r x 1."""
    c = a.cols
    return _make(a.data.sum(axis=1, keepdims=True), (a,), lambda g: (np.repeat(g, c, axis=1),), "row_sum")


# ---------------------------------------------------------------------------
# reductions and normalisations


def row_softmax(a: Tensor, scale: float = 1.0, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over each row of ``scale * a``.

    ``mask`` (bool, same shape) marks admissible entries; masked entries get
    probability exactly 0. Every row needs at least one admissible entry.
    """
    if a.cols < 1 or a.rows < 1:
        raise DimensionError(f"row_softmax on empty tensor {a.shape}")
    z = a.data * scale
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape:
            raise DimensionError("row_softmax: mask shape mismatch")
        if not mask.any(axis=1).all():
            raise DimensionError("row_softmax: a row has no admissible entries")
        z = np.where(mask, z, -np.inf)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)
    s = float(scale)

    def _bw(g):
        return (s * y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _make(y, (a,), _bw, "row_softmax")


def l2_normalize_rows(a: Tensor, eps: float = EPS) -> Tensor:
    norms = np.sqrt((a.data ** 2).sum(axis=1, keepdims=True))
    if (norms < eps).any():
        raise DegenerateInputError("l2_normalize_rows: row norm below epsilon")
    y = a.data / norms

    def _bw(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norms,)

    return _make(y, (a,), _bw, "l2_normalize_rows")


def mean_pool_rows(a: Tensor) -> Tensor:
    """Column-wise mean over rows: r x c -> 1 x c."""
    r = a.rows
    if r == 0:
        raise DimensionError("mean_pool_rows on zero rows")
    return _make(a.data.mean(axis=0, keepdims=True), (a,), lambda g: (np.repeat(g / r, r, axis=0),), "mean_pool_rows")


def mean_pool_row_groups(a: Tensor, group: int) -> Tensor:
    """Mean over consecutive blocks of ``group`` rows: (B*group) x c -> B x c."""
    if group < 1 or a.rows % group:
        raise DimensionError(f"mean_pool_row_groups: {a.rows} rows not divisible by {group}")
    b, c = a.rows // group, a.cols
    out = a.data.reshape(b, group, c).mean(axis=1)
    return _make(out, (a,), lambda g: (np.repeat(g / group, group, axis=0),), "mean_pool_row_groups")


def logsumexp_rows(a: Tensor, weights: np.ndarray | None = None, add_one: bool = False) -> Tensor:
    """Row-wise ``log(add_one + sum_j w_ij exp(a_ij))`` -> r x 1.

    ``weights`` are non-negative constants (default all ones); zero weights
    drop the entry. With ``add_one`` an implicit exp(0) term joins the sum, so
    empty rows are allowed and give 0.
    """
    ad = a.data
    w = np.ones_like(ad) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != ad.shape:
        raise DimensionError("logsumexp_rows: weight shape mismatch")
    if (w < 0).any():
        raise DegenerateInputError("logsumexp_rows: negative weight")
    active = w > 0
    has = active.any(axis=1)
    if not add_one and not has.all():
        raise DegenerateInputError("logsumexp_rows: a row has no positive weight")
    m = np.where(active, ad, -np.inf).max(axis=1, keepdims=True)
    if add_one:
        m = np.maximum(m, 0.0)
    # weighted sum of shifted exponentials; inactive entries contribute 0
    s = (w * np.exp(np.where(active, ad - m, -np.inf))).sum(axis=1, keepdims=True)
    if add_one:
        zero_shift = m == 0.0
        out = np.where(zero_shift, np.log1p(s), m + np.log(np.exp(-m) + s))
    else:
        out = m + np.log(s)

    def _bw(g):
        p = w * np.exp(np.where(active, ad - out, -np.inf))
        return (g * p,)

    return _make(out, (a,), _bw, "logsumexp_rows")


# ---------------------------------------------------------------------------
# segment ops used by the batched attention path


def _segment_starts(bounds: np.ndarray, width: int) -> np.ndarray:
    bounds = np.asarray(bounds, dtype=np.intp)
    if bounds[0] != 0 or bounds[-1] != width:
        raise DimensionError("segment bounds must start at 0 and end at the column count")
    if (np.diff(bounds) <= 0).any():
        raise DimensionError("empty segment: every sequence needs at least one time step")
    return bounds


def segment_row_softmax(a: Tensor, bounds, scale: float = 1.0) -> Tensor:
    """Row softmax restricted to each column segment ``[bounds[s], bounds[s+1])``."""
    b = _segment_starts(bounds, a.cols)
    starts, lengths = b[:-1], np.diff(b)
    z = a.data * scale
    mx = np.maximum.reduceat(z, starts, axis=1)
    e = np.exp(z - np.repeat(mx, lengths, axis=1))
    y = e / np.repeat(np.add.reduceat(e, starts, axis=1), lengths, axis=1)
    s = float(scale)

    def _bw(g):
        dot = np.repeat(np.add.reduceat(g * y, starts, axis=1), lengths, axis=1)
        return (s * y * (g - dot),)

    return _make(y, (a,), _bw, "segment_row_softmax")


def segment_matmul(a: Tensor, v: Tensor, bounds) -> Tensor:
    """Stack ``a[:, seg_s] @ v[seg_s]`` vertically over segments s.

    ``a`` is q x T_total, ``v`` is T_total x d; the result is (S*q) x d.
    """
    if a.cols != v.rows:
        raise DimensionError(f"segment_matmul: {a.shape} x {v.shape}")
    b = _segment_starts(bounds, a.cols)
    q = a.rows
    ad, vd = a.data, v.data
    n = len(b) - 1
    out = np.empty((n * q, v.cols))
    for s in range(n):
        out[s * q:(s + 1) * q] = ad[:, b[s]:b[s + 1]] @ vd[b[s]:b[s + 1]]

    def _bw(g):
        ga = np.zeros_like(ad) if a.requires_grad else None
        gv = np.zeros_like(vd) if v.requires_grad else None
        for s in range(n):
            gs = g[s * q:(s + 1) * q]
            lo, hi = b[s], b[s + 1]
            if ga is not None:
                ga[:, lo:hi] = gs @ vd[lo:hi].T
            if gv is not None:
                gv[lo:hi] = ad[:, lo:hi].T @ gs
        return ga, gv

    return _make(out, (a, v), _bw, "segment_matmul")


# ---------------------------------------------------------------------------
# finite-difference checking


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` rebuilds the scalar from the current values of ``params``; entries
    are perturbed in place and restored. The error per entry is
    ``|a - cd| / max(|a|, |cd|, 1e-8)``.
    """
    if h <= 0:
        raise ContractError("grad_check step must be positive")
    zero_grad(params)
    for p in params:
        p.requires_grad = True
    loss = f()
    _check_scalar(loss)
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            with no_grad():
                fp = _check_scalar(f())
            flat[k] = orig - h
            with no_grad():
                fm = _check_scalar(f())
            flat[k] = orig
            cd = (fp - fm) / (2 * h)
            a = analytic.reshape(-1)[k]
            err = abs(a - cd) / max(abs(a), abs(cd), 1e-8)
            worst = max(worst, err)
    zero_grad(params)
    return worst


def _check_scalar(t: Tensor) -> float:
    if t.shape != (1, 1):
        raise ContractError("grad_check: function must return a 1x1 tensor")
    v = float(t.data[0, 0])
    if math.isnan(v) or math.isinf(v):
        raise NumericalError("grad_check: non-finite function value")
    return v
