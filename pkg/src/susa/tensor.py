"""Minimal dense-tensor engine with reverse-mode autodiff.

Everything is float64. A Tape records operations in creation order, which
is already a topological order, so backward() is a single reverse sweep.
Broadcasting is limited to what numpy does naturally; gradients of
broadcast operands are summed back down to the operand's shape.
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when an operation receives incompatible shapes."""


_ACTIVE_TAPE: "Tape | None" = None


class Tape:
    """Ordered record of differentiable operations.

    Creation order is topological order: every tensor's parents were
    created (and therefore recorded) before it.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        global _ACTIVE_TAPE
        self._prev = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._prev
        return False


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd", "op_name")

    def __init__(self, data, requires_grad=False, _parents=(), _bwd=None, op_name="leaf"):
        if type(data) is np.ndarray and data.dtype == np.float64:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._bwd = _bwd
        self.op_name = op_name
        if _parents and _ACTIVE_TAPE is not None:
            _ACTIVE_TAPE.nodes.append(self)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op_name}, shape={self.data.shape})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            g = np.asarray(g, dtype=np.float64)
            if g.shape == self.data.shape:
                self.grad = g.copy()
            else:
                self.grad = np.zeros_like(self.data)
                self.grad += g
        else:
            self.grad += g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def param(data) -> Tensor:
    """A learnable leaf (gradient accumulates across backward calls)."""
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _record(data, parents, bwd, name) -> Tensor:
    req = any(p.requires_grad for p in parents)
    t = Tensor(data, requires_grad=req, _parents=parents, _bwd=bwd if req else None,
               op_name=name)
    return t


def _check_broadcast(a, b, name):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(f"{name}: incompatible shapes {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _record(out_data, (a, b), bwd, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    out_data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _record(out_data, (a, b), bwd, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _record(out_data, (a, b), bwd, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "div")
    out_data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _record(out_data, (a, b), bwd, "div")


def scalar_mul(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    out_data = a.data * c

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * c)

    return _record(out_data, (a,), bwd, "scalar_mul")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _record(out_data, (a, b), bwd, "matmul")


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d tensor, got {a.data.shape}")
    out_data = a.data.T.copy()

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return _record(out_data, (a,), bwd, "transpose")


def concat(tensors, axis=0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out_data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: incompatible shapes {[t.data.shape for t in tensors]} on axis {axis}")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _record(out_data, tuple(tensors), bwd, "concat")


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _record(out_data, (a,), bwd, "reshape")


def take_rows(a, indices) -> Tensor:
    """Row gather; backward scatter-adds (also serves as embedding lookup)."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if a.data.ndim != 2:
        raise ShapeError(f"take_rows: expected 2-d tensor, got {a.data.shape}")
    out_data = a.data[idx]

    def bwd(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.add.at(acc, idx, g)
            a._accumulate(acc)

    return _record(out_data, (a,), bwd, "take_rows")


# --------------------------------------------------------------- reductions

def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if a.requires_grad:
            if axis is None:
                a._accumulate(np.full_like(a.data, float(g)))
            else:
                ge = g if keepdims else np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(ge, a.data.shape).copy())

    return _record(out_data, (a,), bwd, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return scalar_mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def max_(a, axis, keepdims=False) -> Tensor:
    """Max along axis; gradient routed to the first argmax on ties."""
    a = _as_tensor(a)
    out_data = a.data.max(axis=axis, keepdims=keepdims)
    argm = a.data.argmax(axis=axis)

    def bwd(g):
        if not a.requires_grad:
            return
        acc = np.zeros_like(a.data)
        ge = g if keepdims else np.expand_dims(g, axis)
        idx = list(np.indices(argm.shape))
        idx.insert(axis if axis >= 0 else a.data.ndim + axis, argm)
        acc[tuple(idx)] = np.squeeze(ge, axis=axis)
        a._accumulate(acc)

    return _record(out_data, (a,), bwd, "max")


# ------------------------------------------------------------- nonlinearity

def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - out_data * out_data))

    return _record(out_data, (a,), bwd, "tanh")


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * out_data * (1.0 - out_data))

    return _record(out_data, (a,), bwd, "sigmoid")


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0.0))

    return _record(out_data, (a,), bwd, "relu")


def log(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.log(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _record(out_data, (a,), bwd, "log")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * out_data)

    return _record(out_data, (a,), bwd, "exp")


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / out_data)

    return _record(out_data, (a,), bwd, "sqrt")


def softmax(a, axis=-1) -> Tensor:
    """Row-stable softmax (max subtraction)."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            a._accumulate(out_data * (g - dot))

    return _record(out_data, (a,), bwd, "softmax")


def layer_norm(a, gamma, beta, eps=1e-5) -> Tensor:
    """Normalize over the last axis, then affine with gamma/beta."""
    a, gamma, beta = _as_tensor(a), _as_tensor(gamma), _as_tensor(beta)
    d = a.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(
            f"layer_norm: affine shapes {gamma.data.shape}/{beta.data.shape} "
            f"do not match feature dim {d}")
    out_data, xhat, inv = _ln_forward(a.data, gamma.data, beta.data, eps)

    def bwd(g):
        ds = _ln_backward(g, xhat, inv, gamma, beta)
        if a.requires_grad:
            a._accumulate(ds)

    return _record(out_data, (a, gamma, beta), bwd, "layer_norm")


def cosine_matrix(a, b) -> Tensor:
    """Pairwise cosine similarities between rows of a (m×d) and b (n×d).

    Zero rows get similarity 0 by convention (and zero gradient).
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[1]:
        raise ShapeError(f"cosine_matrix: incompatible shapes {a.data.shape}, {b.data.shape}")
    na = np.linalg.norm(a.data, axis=1)
    nb = np.linalg.norm(b.data, axis=1)
    za = na == 0.0
    zb = nb == 0.0
    na_safe = np.where(za, 1.0, na)
    nb_safe = np.where(zb, 1.0, nb)
    ah = a.data / na_safe[:, None]
    bh = b.data / nb_safe[:, None]
    out_data = ah @ bh.T

    def bwd(g):
        if a.requires_grad:
            gah = g @ bh
            proj = (gah * ah).sum(axis=1, keepdims=True)
            ga = (gah - proj * ah) / na_safe[:, None]
            ga[za] = 0.0
            a._accumulate(ga)
        if b.requires_grad:
            gbh = g.T @ ah
            proj = (gbh * bh).sum(axis=1, keepdims=True)
            gb = (gbh - proj * bh) / nb_safe[:, None]
            gb[zb] = 0.0
            b._accumulate(gb)

    return _record(out_data, (a, b), bwd, "cosine_matrix")


def cosine_similarity(a, b) -> Tensor:
    """Row-wise cosine similarity between matching rows of a and b (m×d → m)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape or a.data.ndim != 2:
        raise ShapeError(f"cosine_similarity: incompatible shapes {a.data.shape}, {b.data.shape}")
    na = np.linalg.norm(a.data, axis=1)
    nb = np.linalg.norm(b.data, axis=1)
    za, zb = na == 0.0, nb == 0.0
    na_s = np.where(za, 1.0, na)
    nb_s = np.where(zb, 1.0, nb)
    ah = a.data / na_s[:, None]
    bh = b.data / nb_s[:, None]
    out_data = (ah * bh).sum(axis=1)
    out_data[za | zb] = 0.0

    def bwd(g):
        gc = g.copy()
        gc[za | zb] = 0.0
        if a.requires_grad:
            ga = (bh - out_data[:, None] * ah) / na_s[:, None] * gc[:, None]
            ga[za] = 0.0
            a._accumulate(ga)
        if b.requires_grad:
            gb = (ah - out_data[:, None] * bh) / nb_s[:, None] * gc[:, None]
            gb[zb] = 0.0
            b._accumulate(gb)

    return _record(out_data, (a, b), bwd, "cosine_similarity")


def cross_entropy(logits, target_index: int) -> Tensor:
    """-log softmax(logits)[target] for a 1-d logit vector."""
    logits = _as_tensor(logits)
    if logits.data.ndim != 1:
        raise ShapeError(f"cross_entropy: expected 1-d logits, got {logits.data.shape}")
    k = int(target_index)
    if not 0 <= k < logits.data.shape[0]:
        raise ShapeError(f"cross_entropy: target {k} out of range for {logits.data.shape}")
    shifted = logits.data - logits.data.max()
    e = np.exp(shifted)
    p = e / e.sum()
    out_data = -np.log(p[k])

    def bwd(g):
        if logits.requires_grad:
            grad = p.copy()
            grad[k] -= 1.0
            logits._accumulate(g * grad)

    return _record(out_data, (logits,), bwd, "cross_entropy")


# ------------------------------------------------------------- fused kernels
# Single tape nodes for the pipeline's hottest compositions. Each is
# numerically identical to the primitive chain it replaces.

def linear(x, w, b) -> Tensor:
    """x @ w + b with a row-broadcast bias."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 2 or x.data.shape[1] != w.data.shape[0] or \
            b.data.shape != (w.data.shape[1],):
        raise ShapeError(f"linear: shapes {x.data.shape} @ {w.data.shape} + {b.data.shape}")
    out_data = x.data @ w.data + b.data

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            w._accumulate(x.data.T @ g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))

    return _record(out_data, (x, w, b), bwd, "linear")


def attention_core(q, k, v, bias=None, scale: float = 1.0) -> Tensor:
    """softmax(q k^T * scale + bias) v as one recorded operation."""
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    parents = [q, k, v]
    if q.data.shape[1] != k.data.shape[1] or k.data.shape[0] != v.data.shape[0]:
        raise ShapeError(
            f"attention_core: shapes q{q.data.shape} k{k.data.shape} v{v.data.shape}")
    logits = (q.data @ k.data.T) * scale
    if bias is not None:
        bias = _as_tensor(bias)
        parents.append(bias)
        logits = logits + bias.data
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    attn = e / e.sum(axis=1, keepdims=True)
    out_data = attn @ v.data

    def bwd(g):
        dattn = g @ v.data.T
        dlogits = attn * (dattn - (dattn * attn).sum(axis=1, keepdims=True))
        if v.requires_grad:
            v._accumulate(attn.T @ g)
        if q.requires_grad:
            q._accumulate((dlogits @ k.data) * scale)
        if k.requires_grad:
            k._accumulate((dlogits.T @ q.data) * scale)
        if bias is not None and bias.requires_grad:
            bias._accumulate(_unbroadcast(dlogits, bias.data.shape))

    return _record(out_data, tuple(parents), bwd, "attention_core")


def ffn(x, w1, b1, w2, b2) -> Tensor:
    """relu(x @ w1 + b1) @ w2 + b2 as one recorded operation."""
    x, w1, b1, w2, b2 = (_as_tensor(t) for t in (x, w1, b1, w2, b2))
    if x.data.ndim != 2 or x.data.shape[1] != w1.data.shape[0] or \
            w1.data.shape[1] != w2.data.shape[0]:
        raise ShapeError(f"ffn: shapes {x.data.shape} @ {w1.data.shape} @ {w2.data.shape}")
    pre = x.data @ w1.data + b1.data
    h = np.maximum(pre, 0.0)
    out_data = h @ w2.data + b2.data

    def bwd(g):
        if w2.requires_grad:
            w2._accumulate(h.T @ g)
        if b2.requires_grad:
            b2._accumulate(g.sum(axis=0))
        dpre = (g @ w2.data.T) * (pre > 0.0)
        if w1.requires_grad:
            w1._accumulate(x.data.T @ dpre)
        if b1.requires_grad:
            b1._accumulate(dpre.sum(axis=0))
        if x.requires_grad:
            x._accumulate(dpre @ w1.data.T)

    return _record(out_data, (x, w1, b1, w2, b2), bwd, "ffn")


def add_layer_norm(a, b, gamma, beta, eps=1e-5) -> Tensor:
    """layer_norm(a + b, gamma, beta) — the residual block's tail, fused."""
    a, b, gamma, beta = (_as_tensor(t) for t in (a, b, gamma, beta))
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add_layer_norm: residual shapes {a.data.shape} vs {b.data.shape}")
    d = a.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(
            f"add_layer_norm: affine shapes {gamma.data.shape}/{beta.data.shape} "
            f"do not match feature dim {d}")
    out_data, xhat, inv = _ln_forward(a.data + b.data, gamma.data, beta.data, eps)

    def bwd(g):
        ds = _ln_backward(g, xhat, inv, gamma, beta)
        if a.requires_grad:
            a._accumulate(ds)
        if b.requires_grad:
            b._accumulate(ds)

    return _record(out_data, (a, b, gamma, beta), bwd, "add_layer_norm")


def attention_proj(x, wq, bq, k, v, bias=None, scale: float = 1.0) -> Tensor:
    """attention_core with the query projection (x @ wq + bq) folded in."""
    x, wq, bq, k, v = (_as_tensor(t) for t in (x, wq, bq, k, v))
    parents = [x, wq, bq, k, v]
    if x.data.ndim != 2 or x.data.shape[1] != wq.data.shape[0] or \
            wq.data.shape[1] != k.data.shape[1] or k.data.shape[0] != v.data.shape[0]:
        raise ShapeError(
            f"attention_proj: shapes x{x.data.shape} wq{wq.data.shape} "
            f"k{k.data.shape} v{v.data.shape}")
    q = x.data @ wq.data + bq.data
    logits = (q @ k.data.T) * scale
    if bias is not None:
        bias = _as_tensor(bias)
        parents.append(bias)
        logits = logits + bias.data
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    attn = e / e.sum(axis=1, keepdims=True)
    out_data = attn @ v.data

    def bwd(g):
        dattn = g @ v.data.T
        dlogits = attn * (dattn - (dattn * attn).sum(axis=1, keepdims=True))
        if v.requires_grad:
            v._accumulate(attn.T @ g)
        if k.requires_grad:
            k._accumulate((dlogits.T @ q) * scale)
        dq = (dlogits @ k.data) * scale
        if x.requires_grad:
            x._accumulate(dq @ wq.data.T)
        if wq.requires_grad:
            wq._accumulate(x.data.T @ dq)
        if bq.requires_grad:
            bq._accumulate(dq.sum(axis=0))
        if bias is not None and bias.requires_grad:
            bias._accumulate(_unbroadcast(dlogits, bias.data.shape))

    return _record(out_data, tuple(parents), bwd, "attention_proj")


def _ln_forward(s: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float):
    d = s.shape[-1]
    mu = s.sum(axis=-1, keepdims=True) * (1.0 / d)
    xc = s - mu
    var = (xc * xc).sum(axis=-1, keepdims=True) * (1.0 / d)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gamma + beta, xhat, inv


def _ln_backward(g, xhat, inv, gamma_t: Tensor, beta_t: Tensor):
    """Accumulate affine grads; return the gradient wrt the normalized input."""
    d = xhat.shape[-1]
    if gamma_t.requires_grad:
        gamma_t._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
    if beta_t.requires_grad:
        beta_t._accumulate(g.reshape(-1, d).sum(axis=0))
    gx = g * gamma_t.data
    t1 = gx.sum(axis=-1, keepdims=True)
    t2 = (gx * xhat).sum(axis=-1, keepdims=True)
    return inv * (gx - t1 / d - xhat * t2 / d)


def attention_residual_ln(x, wq, bq, k, v, gamma, beta, bias=None,
                          scale: float = 1.0, eps: float = 1e-5) -> Tensor:
    """layer_norm(x + attention_proj(x, ...)) as one recorded operation."""
    x, wq, bq, k, v, gamma, beta = (_as_tensor(t) for t in (x, wq, bq, k, v, gamma, beta))
    parents = [x, wq, bq, k, v, gamma, beta]
    if x.data.ndim != 2 or x.data.shape[1] != wq.data.shape[0] or \
            wq.data.shape[1] != k.data.shape[1] or k.data.shape[0] != v.data.shape[0] or \
            v.data.shape[1] != x.data.shape[1]:
        raise ShapeError(
            f"attention_residual_ln: shapes x{x.data.shape} wq{wq.data.shape} "
            f"k{k.data.shape} v{v.data.shape}")
    q = x.data @ wq.data + bq.data
    logits = (q @ k.data.T) * scale
    if bias is not None:
        bias = _as_tensor(bias)
        parents.append(bias)
        logits = logits + bias.data
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    attn = e / e.sum(axis=1, keepdims=True)
    out_data, xhat, inv = _ln_forward(x.data + attn @ v.data, gamma.data, beta.data, eps)

    def bwd(g):
        ds = _ln_backward(g, xhat, inv, gamma, beta)
        dattn = ds @ v.data.T
        dlogits = attn * (dattn - (dattn * attn).sum(axis=1, keepdims=True))
        if v.requires_grad:
            v._accumulate(attn.T @ ds)
        if k.requires_grad:
            k._accumulate((dlogits.T @ q) * scale)
        dq = (dlogits @ k.data) * scale
        if x.requires_grad:
            x._accumulate(ds + dq @ wq.data.T)
        if wq.requires_grad:
            wq._accumulate(x.data.T @ dq)
        if bq.requires_grad:
            bq._accumulate(dq.sum(axis=0))
        if bias is not None and bias.requires_grad:
            bias._accumulate(_unbroadcast(dlogits, bias.data.shape))

    return _record(out_data, tuple(parents), bwd, "attention_residual_ln")


def ffn_residual_ln(x, w1, b1, w2, b2, gamma, beta, eps: float = 1e-5) -> Tensor:
    """layer_norm(x + ffn(x, ...)) as one recorded operation."""
    x, w1, b1, w2, b2, gamma, beta = (_as_tensor(t) for t in (x, w1, b1, w2, b2, gamma, beta))
    if x.data.ndim != 2 or x.data.shape[1] != w1.data.shape[0] or \
            w1.data.shape[1] != w2.data.shape[0] or w2.data.shape[1] != x.data.shape[1]:
        raise ShapeError(f"ffn_residual_ln: shapes {x.data.shape} @ {w1.data.shape} "
                         f"@ {w2.data.shape}")
    pre = x.data @ w1.data + b1.data
    h = np.maximum(pre, 0.0)
    out_data, xhat, inv = _ln_forward(x.data + h @ w2.data + b2.data,
                                      gamma.data, beta.data, eps)

    def bwd(g):
        ds = _ln_backward(g, xhat, inv, gamma, beta)
        if w2.requires_grad:
            w2._accumulate(h.T @ ds)
        if b2.requires_grad:
            b2._accumulate(ds.sum(axis=0))
        dpre = (ds @ w2.data.T) * (pre > 0.0)
        if w1.requires_grad:
            w1._accumulate(x.data.T @ dpre)
        if b1.requires_grad:
            b1._accumulate(dpre.sum(axis=0))
        if x.requires_grad:
            x._accumulate(ds + dpre @ w1.data.T)

    return _record(out_data, (x, w1, b1, w2, b2, gamma, beta), bwd, "ffn_residual_ln")


def bucket_bias(table, buckets: np.ndarray) -> Tensor:
    """Per-pair additive bias: table[buckets] for an integer bucket matrix."""
    table = _as_tensor(table)
    idx = np.asarray(buckets, dtype=np.intp)
    if idx.max(initial=0) >= table.data.shape[0]:
        raise ShapeError(f"bucket_bias: bucket {idx.max()} out of range "
                         f"for table of {table.data.shape[0]}")
    out_data = table.data[idx]

    def bwd(g):
        if table.requires_grad:
            acc = np.zeros_like(table.data)
            np.add.at(acc, idx, g)
            table._accumulate(acc)

    return _record(out_data, (table,), bwd, "bucket_bias")


# ----------------------------------------------------------------- backward

def backward(loss: Tensor):
    """Reverse sweep from a scalar loss; populates .grad on reachable leaves."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    tape = _ACTIVE_TAPE
    if tape is None:
        raise RuntimeError("backward: no active tape")
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(tape.nodes):
        if node.grad is not None and node._bwd is not None:
            node._bwd(node.grad)


# --------------------------------------------------------------- grad check

def grad_check(f, inputs, eps=1e-5, tol=1e-4):
    """Compare analytic gradients of scalar-valued f against central differences.

    f takes the list of input Tensors and returns a scalar Tensor. Returns a
    report dict with per-input max relative error and an overall pass flag.
    """
    analytic = []
    with Tape():
        loss = f(inputs)
        backward(loss)
        for x in inputs:
            analytic.append(np.zeros_like(x.data) if x.grad is None else x.grad.copy())
    for x in inputs:
        x.zero_grad()

    report = {"per_input": [], "passed": True, "tol": tol}
    for x, ga in zip(inputs, analytic):
        flat = x.data.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with Tape():
                fp = float(f(inputs).data)
            flat[i] = orig - eps
            with Tape():
                fm = float(f(inputs).data)
            flat[i] = orig
            num[i] = (fp - fm) / (2 * eps)
        num = num.reshape(x.data.shape)
        # scaled error: relative where the gradient is O(1), absolute where
        # it is tiny (central differences bottom out around eps^2 there)
        denom = np.maximum(np.abs(ga) + np.abs(num), 1.0)
        rel = np.abs(ga - num) / denom
        max_rel = float(rel.max()) if rel.size else 0.0
        report["per_input"].append({"max_rel_err": max_rel,
                                    "analytic_norm": float(np.abs(ga).max(initial=0.0)),
                                    "numeric_norm": float(np.abs(num).max(initial=0.0))})
        if max_rel > tol:
            report["passed"] = False
    report["max_rel_err"] = max((r["max_rel_err"] for r in report["per_input"]), default=0.0)
    return report
