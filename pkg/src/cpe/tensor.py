"""Minimal dense tensors with reverse-mode automatic differentiation.

Values are numpy arrays (float32 by default, float64 for gradient
checking). Every operation that touches a gradient-tracked tensor records
a node on a dynamic tape; `backward` replays the tape in reverse
topological order.
"""

from __future__ import annotations

import numpy as np

_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """Enable NaN/Inf checks on every produced tensor (slow)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = enabled


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        if not isinstance(data, np.ndarray):
            if isinstance(data, np.generic):
                data = np.asarray(data)  # keep numpy scalar dtype
            else:
                data = np.asarray(data, dtype=np.float32)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.name = name
        if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
            raise FloatingPointError(f"non-finite values produced (name={name})")

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None


def parameter(data, name=None):
    return Tensor(np.asarray(data), requires_grad=True, name=name)


def constant(data, dtype=np.float32):
    return Tensor(np.asarray(data, dtype=dtype))


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _node(data, parents, backward, name=None):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, parents=tuple(parents) if req else (),
                  backward=backward if req else None, name=name)


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data, dtype=g.dtype) + g
    else:
        t.grad = t.grad + g


# ---------------------------------------------------------------------------
# elementwise / arithmetic

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _node(out, (a, b), bwd)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    out = a.data - b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _node(out, (a, b), bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _node(out, (a, b), bwd)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    out = a.data / b.data

    def bwd(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node(out, (a, b), bwd)


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)

    def bwd(g):
        _accum(a, g * c)

    return _node(a.data * c, (a,), bwd)


def exp(a):
    a = _as_tensor(a)
    out = np.exp(a.data)

    def bwd(g):
        _accum(a, g * out)

    return _node(out, (a,), bwd)


def log(a):
    a = _as_tensor(a)
    out = np.log(a.data)

    def bwd(g):
        _accum(a, g / a.data)

    return _node(out, (a,), bwd)


def sqrt(a):
    a = _as_tensor(a)
    out = np.sqrt(a.data)

    def bwd(g):
        _accum(a, g * 0.5 / out)

    return _node(out, (a,), bwd)


def relu(a):
    a = _as_tensor(a)
    out = np.maximum(a.data, 0)

    def bwd(g):
        _accum(a, g * (a.data > 0))

    return _node(out, (a,), bwd)


def tanh(a):
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - out * out))

    return _node(out, (a,), bwd)


def sigmoid(a):
    a = _as_tensor(a)
    # stable: avoid exp overflow on large negatives
    out = np.where(a.data >= 0,
                   1.0 / (1.0 + np.exp(-np.abs(a.data))),
                   np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def bwd(g):
        _accum(a, g * out * (1.0 - out))

    return _node(out, (a,), bwd)


# ---------------------------------------------------------------------------
# structural

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")

    def bwd(g):
        if a.ndim == 1 and b.ndim == 1:
            _accum(a, g * b.data)
            _accum(b, g * a.data)
            return
        ad = a.data if a.ndim > 1 else a.data[None, :]
        bd = b.data if b.ndim > 1 else b.data[:, None]
        gg = g
        if a.ndim == 1:
            gg = gg[..., None, :]
        if b.ndim == 1:
            gg = gg[..., :, None]
        ga = np.matmul(gg, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), gg)
        if a.ndim == 1:
            ga = ga.reshape(ga.shape[:-2] + (ga.shape[-1],))
        if b.ndim == 1:
            gb = gb.reshape(gb.shape[:-1])
        _accum(a, _unbroadcast(ga, a.shape))
        _accum(b, _unbroadcast(gb, b.shape))

    return _node(out, (a, b), bwd)


def reshape(a, shape):
    a = _as_tensor(a)
    out = a.data.reshape(shape)

    def bwd(g):
        _accum(a, g.reshape(a.shape))

    return _node(out, (a,), bwd)


def transpose(a, axes):
    a = _as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def bwd(g):
        _accum(a, np.transpose(g, inv))

    return _node(out, (a,), bwd)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _node(out, tuple(tensors), bwd)


def slice_(a, key):
    a = _as_tensor(a)
    out = a.data[key]

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        _accum(a, full)

    return _node(out, (a,), bwd)


def index_select(a, axis, indices):
    """Gather along `axis` with an integer index array (duplicate-safe backward)."""
    a = _as_tensor(a)
    indices = np.asarray(indices)
    out = np.take(a.data, indices, axis=axis)

    def bwd(g):
        # collapse the index dimensions gathered at `axis` to one
        flat_idx = indices.reshape(-1)
        gm = np.moveaxis(g, tuple(range(axis, axis + indices.ndim)), tuple(range(indices.ndim)))
        gm = gm.reshape((flat_idx.size,) + gm.shape[indices.ndim:])
        full = np.zeros(np.moveaxis(a.data, axis, 0).shape, dtype=g.dtype)
        np.add.at(full, flat_idx, gm)
        _accum(a, np.moveaxis(full, 0, axis))

    return _node(out, (a,), bwd)


def embedding(table, ids):
    """Look up rows of `table` (V, D) for an integer id array."""
    return index_select(table, 0, np.asarray(ids))


# ---------------------------------------------------------------------------
# reductions

def sum_(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape).copy())
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        _accum(a, np.broadcast_to(gg, a.shape).copy())

    return _node(out, (a,), bwd)


def mean_(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def masked_mean(a, mask, axis):
    """Mean over `axis` counting only positions where `mask` is true."""
    a = _as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    m = np.broadcast_to(np.expand_dims(mask, -1) if mask.ndim < a.ndim else mask, a.shape)
    cnt = m.sum(axis=axis, keepdims=True)
    if np.any(cnt == 0):
        raise ValueError("masked_mean: a reduction slice has zero unmasked entries")
    out = (a.data * m).sum(axis=axis) / np.squeeze(cnt, axis=axis)

    def bwd(g):
        gg = np.expand_dims(g, axis) / cnt
        _accum(a, np.broadcast_to(gg, a.shape) * m)

    return _node(out, (a,), bwd)


def masked_max(a, mask, axis):
    """Elementwise max over `axis`, ignoring masked positions."""
    a = _as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    m = np.broadcast_to(np.expand_dims(mask, -1) if mask.ndim < a.ndim else mask, a.shape)
    if not m.any(axis=axis).all():
        raise ValueError("masked_max: a reduction slice has zero unmasked entries")
    neg = np.where(m, a.data, -np.inf)
    idx = np.argmax(neg, axis=axis)
    out = np.take_along_axis(neg, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def bwd(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        _accum(a, full)

    return _node(out, (a,), bwd)


# ---------------------------------------------------------------------------
# NN primitives

def softmax(a, mask=None, axis=-1):
    """Row-wise softmax; masked positions get exactly zero probability.

    Rows with every position masked produce all-zero rows (no NaN).
    """
    a = _as_tensor(a)
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, -np.inf)
    mx = np.max(x, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(x - mx)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    denom = e.sum(axis=axis, keepdims=True)
    out = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accum(a, out * (g - dot))

    return _node(out, (a,), bwd)


def log_softmax(a, axis=-1):
    a = _as_tensor(a)
    mx = np.max(a.data, axis=axis, keepdims=True)
    z = a.data - mx
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bwd(g):
        _accum(a, g - p * g.sum(axis=axis, keepdims=True))

    return _node(out, (a,), bwd)


def layer_norm(a, gamma, beta, eps=1e-5):
    """Normalize the last axis, then apply learned scale/shift."""
    a, gamma, beta = _as_tensor(a), _as_tensor(gamma), _as_tensor(beta)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    d = a.shape[-1]

    def bwd(g):
        _accum(gamma, _unbroadcast(g * xhat, gamma.shape))
        _accum(beta, _unbroadcast(g, beta.shape))
        dxhat = g * gamma.data
        ga = inv * (dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True) / d)
        _accum(a, ga)

    return _node(out, (a, gamma, beta), bwd)


def dropout(a, rate, rng, train):
    """Inverted dropout: identity in eval mode."""
    a = _as_tensor(a)
    if not train or rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate)
    factor = 1.0 / (1.0 - rate)
    k = keep.astype(a.data.dtype) * factor

    def bwd(g):
        _accum(a, g * k)

    return _node(a.data * k, (a,), bwd)


def normalize_rows(a, eps=0.0):
    """Divide each row (last axis) by its L2 norm; zero-norm rows are an error."""
    a = _as_tensor(a)
    norms = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    if np.any(norms <= eps):
        raise ValueError("normalize_rows: zero-norm row")
    n = sqrt(sum_(mul(a, a), axis=-1, keepdims=True))
    return div(a, n)


def cosine_similarity(a, b):
    """Cosine similarity matrix between rows of a (N,d) and b (M,d)."""
    an = normalize_rows(a)
    bn = normalize_rows(b)
    if an.ndim == 1 and bn.ndim == 1:
        return sum_(mul(an, bn))
    return matmul(an, transpose(bn, (1, 0)))


# ---------------------------------------------------------------------------
# backward pass and gradient checking

def backward(loss):
    """Reverse-mode accumulation from a scalar loss to all tracked leaves."""
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    topo, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


def collect_gradients(params):
    """Gradients for a name->Tensor map; untouched parameters get zeros."""
    return {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for k, p in params.items()}


def zero_gradients(params):
    for p in params.values():
        p.grad = None


def grad_check(fn, params, eps=1e-5, num_samples=8, rng=None):
    """Max relative error between analytic and central-difference gradients.

    `fn` maps a name->Tensor dict to a scalar Tensor. The check runs in
    float64 regardless of the incoming dtype.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    p64 = {k: Tensor(v.data.astype(np.float64), requires_grad=True, name=k)
           for k, v in params.items()}
    loss = fn(p64)
    backward(loss)
    analytic = collect_gradients(p64)

    worst = 0.0
    for name, t in p64.items():
        flat = t.data.reshape(-1)
        n = flat.size
        coords = rng.choice(n, size=min(num_samples, n), replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            lp = fn(p64).item()
            flat[c] = orig - eps
            lm = fn(p64).item()
            flat[c] = orig
            numeric = (lp - lm) / (2 * eps)
            ana = analytic[name].reshape(-1)[c]
            err = abs(ana - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
