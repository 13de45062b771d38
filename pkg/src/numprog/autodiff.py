"""Reverse-mode automatic differentiation on numpy arrays.

Ops build a graph of Tensor nodes as they run; ``backward(loss)`` walks the
graph once in reverse topological order (iterative DFS, creation order ties
resolved by the traversal) and accumulates gradients into ``.grad``.
Running backward twice through the same nodes raises StaleGraphError --
re-run the forward pass instead.

Design notes:

* float32 by default; float64 available for gradient checking.
* ``no_grad()`` disables graph recording for inference.
* dropout is counter-based: the mask is a pure function of an integer key
  triple, so training is bitwise reproducible regardless of call order.
* the GRU cell is a single fused op with a hand-derived backward pass; it
  is the hot path, and fusing keeps the per-step node count small.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class StaleGraphError(RuntimeError):
    """backward() was called twice over the same recorded graph."""


class MaskError(ValueError):
    """A softmax/log-softmax was asked to normalize over an empty set."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_done")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True, name=name)


def _tracing(*tensors: Tensor) -> bool:
    return _grad_enabled and any(t.requires_grad for t in tensors)


def _record(out: Tensor, parents: tuple[Tensor, ...], backward: Callable[[np.ndarray], None]) -> Tensor:
    out.requires_grad = True
    out._parents = parents
    out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into every reachable node's .grad."""
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ValueError("backward() needs a scalar loss")
    if loss._done:
        raise StaleGraphError("this graph was already consumed; re-run the forward pass")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p._backward is not None:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None:
            continue
        if node._done:
            raise StaleGraphError("this graph was already consumed; re-run the forward pass")
        node._backward(node.grad if node.grad is not None else np.zeros_like(node.data))
        node._done = True
        node._backward = None
        node._parents = ()


# --------------------------------------------------------------------------
# elementwise and linear ops


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    if _tracing(a, b):

        def bw(g):
            _accum(a, g)
            _accum(b, g)

        _record(out, (a, b), bw)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)
    if _tracing(a, b):

        def bw(g):
            _accum(a, g)
            _accum(b, -g)

        _record(out, (a, b), bw)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)
    if _tracing(a, b):

        def bw(g):
            _accum(a, g * b.data)
            _accum(b, g * a.data)

        _record(out, (a, b), bw)
    return out


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s)
    if _tracing(a):
        _record(out, (a,), lambda g: _accum(a, g * s))
    return out


def add_n(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ValueError("add_n needs at least one tensor")
    total = parts[0].data.copy()
    for p in parts[1:]:
        total += p.data
    out = Tensor(total)
    if _tracing(*parts):

        def bw(g):
            for p in parts:
                _accum(p, g)

        _record(out, tuple(parts), bw)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data @ b.data)
    if _tracing(a, b):
        an, bn = a.data.ndim, b.data.ndim

        def bw(g):
            if an == 2 and bn == 1:
                _accum(a, np.outer(g, b.data))
                _accum(b, a.data.T @ g)
            elif an == 1 and bn == 2:
                _accum(a, b.data @ g)
                _accum(b, np.outer(a.data, g))
            elif an == 2 and bn == 2:
                _accum(a, g @ b.data.T)
                _accum(b, a.data.T @ g)
            else:  # 1-D @ 1-D -> scalar
                _accum(a, g * b.data)
                _accum(b, g * a.data)

        _record(out, (a, b), bw)
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T)
    if _tracing(a):
        _record(out, (a,), lambda g: _accum(a, g.T))
    return out


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 1-D tensors."""
    out = Tensor(np.concatenate([p.data for p in parts]))
    if _tracing(*parts):
        sizes = [p.data.shape[0] for p in parts]

        def bw(g):
            start = 0
            for p, n in zip(parts, sizes):
                _accum(p, g[start : start + n])
                start += n

        _record(out, tuple(parts), bw)
    return out


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack 1-D tensors into a matrix, one per row."""
    out = Tensor(np.stack([r.data for r in rows]))
    if _tracing(*rows):

        def bw(g):
            for i, r in enumerate(rows):
                _accum(r, g[i])

        _record(out, tuple(rows), bw)
    return out


def _accum_into(t: Tensor, rows, g) -> None:
    """Scatter-add ``g`` into t.grad at ``rows`` without materializing a
    full-size temporary (the embedding/slice hot path)."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    if isinstance(rows, np.ndarray):
        np.add.at(t.grad, rows, g)
    else:
        t.grad[rows] += g


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.data[start:stop])
    if _tracing(a):
        _record(out, (a,), lambda g: _accum_into(a, slice(start, stop), g))
    return out


def embedding_gather(table: Tensor, index: int) -> Tensor:
    """Pick one row of an embedding table (gradients scatter back)."""
    out = Tensor(table.data[index].copy())
    if _tracing(table):
        _record(out, (table,), lambda g: _accum_into(table, index, g))
    return out


def embedding_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather many rows at once: table (V, h), ids (s,) -> (s, h).
    Repeated ids accumulate their gradients."""
    idx = np.asarray(ids, dtype=np.int64)
    out = Tensor(table.data[idx])
    if _tracing(table):
        _record(out, (table,), lambda g: _accum_into(table, idx, g))
    return out


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two matrices side by side: (s, p) + (s, q) -> (s, p+q)."""
    out = Tensor(np.concatenate([a.data, b.data], axis=1))
    split = a.data.shape[1]
    if _tracing(a, b):

        def bw(g):
            _accum(a, g[:, :split])
            _accum(b, g[:, split:])

        _record(out, (a, b), bw)
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))
    if _tracing(a):
        mask = a.data > 0
        _record(out, (a,), lambda g: _accum(a, g * mask))
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(y)
    if _tracing(a):
        _record(out, (a,), lambda g: _accum(a, g * y * (1.0 - y)))
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)
    if _tracing(a):
        _record(out, (a,), lambda g: _accum(a, g * (1.0 - y * y)))
    return out


# --------------------------------------------------------------------------
# normalization and loss


def _masked_shift(x: np.ndarray, mask: np.ndarray | None):
    if mask is None:
        return x - x.max()
    if not mask.any():
        raise MaskError("all candidates are masked")
    shifted = np.where(mask, x, -np.inf)
    return shifted - shifted[mask].max()


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over a 1-D tensor; ``mask`` marks allowed entries (True).
    Masked entries get probability exactly 0."""
    z = _masked_shift(a.data, mask)
    e = np.exp(z)
    y = e / e.sum()
    out = Tensor(y)
    if _tracing(a):

        def bw(g):
            if mask is not None:
                g = np.where(mask, g, 0.0)
            _accum(a, y * (g - np.dot(g, y)))

        _record(out, (a,), bw)
    return out


def log_softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable log-softmax; masked entries come out as -inf."""
    z = _masked_shift(a.data, mask)
    lse = np.log(np.exp(z[mask] if mask is not None else z).sum())
    y = z - lse
    out = Tensor(y)
    if _tracing(a):
        p = np.exp(y)  # masked entries: exp(-inf) == 0

        def bw(g):
            if mask is not None:
                g = np.where(mask, g, 0.0)
            _accum(a, g - p * g.sum())

        _record(out, (a,), bw)
    return out


def nll(log_probs: Tensor, target: int) -> Tensor:
    """Negative log-likelihood of one target index under log-probabilities."""
    out = Tensor(np.asarray(-log_probs.data[target]))
    if _tracing(log_probs):

        def bw(g):
            full = np.zeros_like(log_probs.data)
            full[target] = -g
            _accum(log_probs, full)

        _record(out, (log_probs,), bw)
    return out


# --------------------------------------------------------------------------
# dropout


def dropout_mask(shape, rate: float, key: tuple[int, int, int], dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Deterministic inverted-dropout mask for a (seed, step, op) key."""
    seed, step, op = key
    words = np.array([np.uint64(seed), (np.uint64(step) << np.uint64(20)) + np.uint64(op)], dtype=np.uint64)
    bits = np.random.Generator(np.random.Philox(key=words))
    keep = bits.random(shape) >= rate
    return keep.astype(dtype) / (1.0 - rate)


def dropout(a: Tensor, rate: float, key: tuple[int, int, int]) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if rate <= 0.0:
        return a
    m = dropout_mask(a.data.shape, rate, key, a.data.dtype)
    out = Tensor(a.data * m)
    if _tracing(a):
        _record(out, (a,), lambda g: _accum(a, g * m))
    return out


# --------------------------------------------------------------------------
# fused GRU cell

# Gate layout along the first axis of W, U, b: update z, reset r, candidate n.
# n uses U_n @ (r * h): the reset gate applies before the recurrent matmul.


def gru_cell(x: Tensor, h: Tensor, W: Tensor, U: Tensor, b: Tensor) -> Tensor:
    """One GRU step.  x: (in,), h: (d,), W: (3d, in), U: (3d, d), b: (3d,).

    z = sigmoid(Wz x + Uz h + bz)
    r = sigmoid(Wr x + Ur h + br)
    n = tanh(Wn x + Un (r*h) + bn)
    h' = (1 - z) * n + z * h
    """
    d = h.data.shape[0]
    wx = W.data @ x.data + b.data
    uzr = U.data[: 2 * d] @ h.data
    z = 1.0 / (1.0 + np.exp(-(wx[:d] + uzr[:d])))
    r = 1.0 / (1.0 + np.exp(-(wx[d : 2 * d] + uzr[d:])))
    rh = r * h.data
    n = np.tanh(wx[2 * d :] + U.data[2 * d :] @ rh)
    out = Tensor((1.0 - z) * n + z * h.data)
    if _tracing(x, h, W, U, b):

        def bw(g):
            dn = g * (1.0 - z)
            dz = g * (h.data - n)
            dh = g * z
            dan = dn * (1.0 - n * n)
            daz = dz * z * (1.0 - z)
            drh = U.data[2 * d :].T @ dan
            dr = drh * h.data
            dh += drh * r
            dar = dr * r * (1.0 - r)
            da = np.concatenate([daz, dar, dan])
            dh += U.data[: 2 * d].T @ np.concatenate([daz, dar])
            _accum(x, W.data.T @ da)
            _accum(h, dh)
            if W.requires_grad:
                _accum(W, np.outer(da, x.data))
            if U.requires_grad:
                dU = np.empty_like(U.data)
                dU[:d] = np.outer(daz, h.data)
                dU[d : 2 * d] = np.outer(dar, h.data)
                dU[2 * d :] = np.outer(dan, rh)
                _accum(U, dU)
            if b.requires_grad:
                _accum(b, da)

        _record(out, (x, h, W, U, b), bw)
    return out


def gru_input_projection(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """Precompute W @ x_t + b for a whole sequence at once: x is (s, in),
    result (s, 3d).  Feed rows to gru_cell_prewired."""
    out = Tensor(x.data @ W.data.T + b.data)
    if _tracing(x, W, b):

        def bw(g):
            _accum(x, g @ W.data)
            if W.requires_grad:
                _accum(W, g.T @ x.data)
            if b.requires_grad:
                _accum(b, g.sum(axis=0))

        _record(out, (x, W, b), bw)
    return out


def gru_cell_prewired(wx: Tensor, t: int, h: Tensor, U: Tensor) -> Tensor:
    """GRU step reading row ``t`` of a precomputed input projection
    (sequence-wide W x + b, shape (s, 3d))."""
    d = h.data.shape[0]
    row = wx.data[t]
    uzr = U.data[: 2 * d] @ h.data
    z = 1.0 / (1.0 + np.exp(-(row[:d] + uzr[:d])))
    r = 1.0 / (1.0 + np.exp(-(row[d : 2 * d] + uzr[d:])))
    rh = r * h.data
    n = np.tanh(row[2 * d :] + U.data[2 * d :] @ rh)
    out = Tensor((1.0 - z) * n + z * h.data)
    if _tracing(wx, h, U):

        def bw(g):
            dn = g * (1.0 - z)
            dz = g * (h.data - n)
            dh = g * z
            dan = dn * (1.0 - n * n)
            daz = dz * z * (1.0 - z)
            drh = U.data[2 * d :].T @ dan
            dr = drh * h.data
            dh += drh * r
            dar = dr * r * (1.0 - r)
            da = np.concatenate([daz, dar, dan])
            dh += U.data[: 2 * d].T @ np.concatenate([daz, dar])
            _accum_into(wx, t, da)
            _accum(h, dh)
            if U.requires_grad:
                dU = np.empty_like(U.data)
                dU[:d] = np.outer(daz, h.data)
                dU[d : 2 * d] = np.outer(dar, h.data)
                dU[2 * d :] = np.outer(dan, rh)
                _accum(U, dU)

        _record(out, (wx, h, U), bw)
    return out


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray | None],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One Adam update with decoupled weight decay.

    A missing/None gradient counts as zero -- the weight-decay term still
    applies, so unused parameters decay deterministically.
    """
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        if weight_decay:
            update = update + weight_decay * p.data
        p.data -= lr * update


# --------------------------------------------------------------------------
# gradient checking


def _central_difference(f: Callable[[], float], flat: np.ndarray, i: int, eps: float) -> float:
    keep = flat[i]
    flat[i] = keep + eps
    hi = f()
    flat[i] = keep - eps
    lo = f()
    flat[i] = keep
    return (hi - lo) / (2.0 * eps)


def numeric_gradient(f: Callable[[], float], tensor: Tensor, eps: float = 1e-4) -> np.ndarray:
    """Central finite differences of f with respect to one tensor."""
    grad = np.zeros_like(tensor.data, dtype=np.float64)
    flat = tensor.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        gflat[i] = _central_difference(f, flat, i, eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-4,
    floor: float = 1e-4,
    refine_above: float = 1e-6,
) -> dict[str, float]:
    """Compare backward() gradients against central finite differences.

    ``loss_fn`` must rebuild the graph on every call (dropout off or keyed
    identically).  Returns the max relative error per parameter.

    Entries whose first estimate disagrees worse than ``refine_above`` are
    re-probed at eps/10 and eps/100 and the median of the three estimates
    kept.  A difference quotient whose step straddles a relu corner is
    biased regardless of arithmetic precision, while steps inside the
    corner distance are exact; shrinking the step instead amplifies
    cancellation noise.  Whichever end of the scale is corrupted, the two
    healthy estimates agree and the median discards the outlier.
    """
    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    backward(loss)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}

    def value() -> float:
        with no_grad():
            return float(loss_fn().data)

    errors = {}
    for name, p in params.items():
        numeric = numeric_gradient(value, p, eps)
        a = analytic[name].reshape(-1)
        n = numeric.reshape(-1)
        if a.size:
            flat = p.data.reshape(-1)
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
            for i in np.nonzero(np.abs(a - n) / denom > refine_above)[0]:
                n[i] = np.median(
                    [n[i], _central_difference(value, flat, i, eps / 10.0), _central_difference(value, flat, i, eps / 100.0)]
                )
        errors[name] = relative_error(analytic[name], numeric, floor)
    return errors
