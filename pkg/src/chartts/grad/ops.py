"""Differentiable primitives.

Every function takes and returns :class:`Tensor`. Backward rules are closures
recorded on the active tape; when nothing needs a gradient the closure is
never built.
"""

from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor, as_tensor, is_recording, record

logger = logging.getLogger(__name__)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _wrap(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    out = Tensor(a.data + b.data)
    if is_recording(a, b):
        sa, sb = a.shape, b.shape

        def bw(g):
            return _unbroadcast(g[0], sa), _unbroadcast(g[0], sb)

        record(out, (a, b), bw)
    return out


def sub(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    out = Tensor(a.data - b.data)
    if is_recording(a, b):
        sa, sb = a.shape, b.shape

        def bw(g):
            return _unbroadcast(g[0], sa), _unbroadcast(-g[0], sb)

        record(out, (a, b), bw)
    return out


def mul(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    out = Tensor(a.data * b.data)
    if is_recording(a, b):
        ad, bd = a.data, b.data

        def bw(g):
            return _unbroadcast(g[0] * bd, ad.shape), _unbroadcast(g[0] * ad, bd.shape)

        record(out, (a, b), bw)
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    if is_recording(a):
        record(out, (a,), lambda g: (-g[0],))
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * a.data.dtype.type(c))
    if is_recording(a):
        record(out, (a,), lambda g: (g[0] * c,))
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0).astype(x.dtype, copy=False))
    if is_recording(x):
        record(out, (x,), lambda g: (g[0] * mask,))
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    out = Tensor(y)
    if is_recording(x):
        record(out, (x,), lambda g: (g[0] * y * (1 - y),))
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)
    if is_recording(x):
        record(out, (x,), lambda g: (g[0] * (1 - y * y),))
    return out


def identity(x: Tensor) -> Tensor:
    return x


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh, "linear": identity, None: identity}


def activation(kind: Optional[str], x: Tensor) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form never overflows and costs a single ufunc pass
    return 0.5 + 0.5 * np.tanh(0.5 * z)


# ---------------------------------------------------------------- reductions

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = Tensor(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)))
    if is_recording(x):
        shape = x.shape

        def bw(g):
            gg = g[0]
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            return (np.broadcast_to(gg, shape).copy(),)

        record(out, (x,), bw)
    return out


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum(x, axis=axis), 1.0 / float(n))


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` with ``a`` of shape (..., k) and ``b`` of shape (k, n)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    if is_recording(a, b):
        ad, bd = a.data, b.data

        def bw(g):
            gd = g[0]
            ga = gd @ bd.T if a.requires_grad else None
            gb = None
            if b.requires_grad:
                gb = ad.reshape(-1, ad.shape[-1]).T @ gd.reshape(-1, gd.shape[-1])
            return ga, gb

        record(out, (a, b), bw)
    return out


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Fully connected layer ``x @ w + b`` over the last axis."""
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear dimension mismatch: {x.shape} @ {w.shape}")
    y = x.data @ w.data
    if b is not None:
        y = y + b.data
    out = Tensor(y)
    inputs = (x, w) if b is None else (x, w, b)
    if is_recording(*inputs):
        xd, wd = x.data, w.data

        def bw(g):
            gd = g[0]
            g2 = gd.reshape(-1, gd.shape[-1])
            gx = gd @ wd.T if x.requires_grad else None
            gw = xd.reshape(-1, xd.shape[-1]).T @ g2 if w.requires_grad else None
            if b is None:
                return gx, gw
            return gx, gw, g2.sum(axis=0)

        record(out, inputs, bw)
    return out


# ---------------------------------------------------------------- shape plumbing

def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    if is_recording(x):
        orig = x.shape
        record(out, (x,), lambda g: (g[0].reshape(orig),))
    return out


def transpose(x: Tensor, axes) -> Tensor:
    out = Tensor(np.transpose(x.data, axes))
    if is_recording(x):
        inv = np.argsort(axes)
        record(out, (x,), lambda g: (np.transpose(g[0], inv),))
    return out


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = Tensor(np.concatenate([x.data for x in xs], axis=axis))
    if is_recording(*xs):
        sizes = [x.shape[axis] for x in xs]
        splits = np.cumsum(sizes)[:-1]

        def bw(g):
            return tuple(np.split(g[0], splits, axis=axis))

        record(out, tuple(xs), bw)
    return out


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = Tensor(np.stack([x.data for x in xs], axis=axis))
    if is_recording(*xs):
        def bw(g):
            return tuple(np.moveaxis(g[0], axis, 0))

        record(out, tuple(xs), bw)
    return out


def unstack(x: Tensor, axis: int = 0) -> list[Tensor]:
    """Split along ``axis`` into views; one tape entry for all pieces."""
    pieces = [Tensor(p) for p in np.moveaxis(x.data, axis, 0)]
    if is_recording(x):
        def bw(gs):
            return (np.stack(gs, axis=axis),)

        record(tuple(pieces), (x,), bw)
    return pieces


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = Tensor(x.data[idx])
    if is_recording(x):
        def bw(g):
            full = np.zeros_like(x.data)
            full[idx] = g[0]
            return (full,)

        record(out, (x,), bw)
    return out


# ---------------------------------------------------------------- layers

def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout. Identity when not training or ``rate == 0``."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = rng.random(x.shape) >= rate
    m = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
    out = Tensor(x.data * m)
    if is_recording(x):
        record(out, (x,), lambda g: (g[0] * m,))
    return out


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table``; gradients scatter-add back."""
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise TypeError("embedding ids must be integers")
    vocab = table.shape[0]
    bad = np.argwhere((ids < 0) | (ids >= vocab))
    if bad.size:
        pos = tuple(int(i) for i in bad[0])
        raise IndexError(f"id {int(ids[pos])} at position {pos} outside vocabulary of {vocab}")
    out = Tensor(table.data[ids])
    if is_recording(table):
        def bw(g):
            full = np.zeros_like(table.data)
            np.add.at(full, ids.reshape(-1), g[0].reshape(-1, table.shape[1]))
            return (full,)

        record(out, (table,), bw)
    return out


def _same_pad(k: int) -> tuple[int, int]:
    left = (k - 1) // 2
    return left, k - 1 - left


def conv1d(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Non-causal 'same' 1-D convolution (cross-correlation).

    x: (T, Cin) or (B, T, Cin); w: (k, Cin, Cout). Padding puts
    ``(k-1)//2`` zeros on the left and the remainder on the right, so the
    output keeps the input length even when ``k > T``.
    """
    if w.ndim != 3:
        raise ValueError(f"conv weight must be (k, Cin, Cout), got {w.shape}")
    k, cin, cout = w.shape
    if k < 1:
        raise ValueError("kernel width must be >= 1")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.shape[-1] != cin:
        raise ValueError(f"conv1d channel mismatch: input {x.shape}, weight {w.shape}")
    B, T, _ = xd.shape
    left, right = _same_pad(k)
    xp = np.pad(xd, ((0, 0), (left, right), (0, 0)))
    # cols[b, t, j, c] = xp[b, t + j, c]
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)  # (B, T, Cin, k)
    cols = np.ascontiguousarray(cols.transpose(0, 1, 3, 2)).reshape(B * T, k * cin)
    wmat = w.data.reshape(k * cin, cout)
    y = cols @ wmat
    if b is not None:
        y = y + b.data
    y = y.reshape(B, T, cout)
    out = Tensor(y[0] if squeeze else y)
    inputs = (x, w) if b is None else (x, w, b)
    if is_recording(*inputs):
        def bw(g):
            gd = g[0].reshape(B * T, cout)
            gw = (cols.T @ gd).reshape(k, cin, cout) if w.requires_grad else None
            gx = None
            if x.requires_grad:
                gcols = (gd @ wmat.T).reshape(B, T, k, cin)
                gxp = np.zeros_like(xp)
                for j in range(k):
                    gxp[:, j:j + T, :] += gcols[:, :, j, :]
                gx = gxp[:, left:left + T, :]
                if squeeze:
                    gx = gx[0]
            if b is None:
                return gx, gw
            return gx, gw, gd.sum(axis=0)

        record(out, inputs, bw)
    return out


def maxpool1d(x: Tensor) -> Tensor:
    """Width-2, stride-1 max pooling along time with one zero frame on the right.

    Works on (T, C) or (B, T, C); output length equals input length.
    """
    if x.shape[-2] < 1:
        raise ValueError("maxpool1d needs at least one frame")
    xd = x.data
    pad = [(0, 0)] * xd.ndim
    pad[-2] = (0, 1)
    xp = np.pad(xd, pad)
    a = xp[..., :-1, :]
    nxt = xp[..., 1:, :]
    take_next = nxt > a
    out = Tensor(np.where(take_next, nxt, a))
    if is_recording(x):
        def bw(g):
            gd = g[0]
            gx = np.where(take_next, 0, gd).astype(gd.dtype)
            shifted = np.where(take_next, gd, 0).astype(gd.dtype)
            # shifted[..., t, :] belongs to frame t + 1; the last one hits the pad
            gx[..., 1:, :] += shifted[..., :-1, :]
            return (gx,)

        record(out, (x,), bw)
    return out


def batchnorm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.99,
    eps: float = 1e-5,
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    """Per-channel batch norm over every axis but the last.

    In training mode the statistics come from the (optionally masked)
    batch and the running estimates are updated in place with
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    xd = x.data
    C = xd.shape[-1]
    if training:
        if mask is None:
            m = None
            n = xd.size // C
            axes = tuple(range(xd.ndim - 1))
            mu = xd.mean(axis=axes)
            xc = xd - mu
            var = (xc * xc).mean(axis=axes)
        else:
            m = mask.astype(xd.dtype)[..., None]
            n = float(m.sum())
            axes = tuple(range(xd.ndim - 1))
            mu = (xd * m).sum(axis=axes) / n
            xc = xd - mu
            var = (xc * xc * m).sum(axis=axes) / n
        running_mean *= momentum
        running_mean += (1 - momentum) * mu
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mu, var = running_mean.astype(xd.dtype), running_var.astype(xd.dtype)
        xc = xd - mu
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data)
    if is_recording(x, gamma, beta):
        axes = tuple(range(xd.ndim - 1))

        def bw(g):
            gd = g[0]
            ggamma = (gd * xhat).sum(axis=axes)
            gbeta = gd.sum(axis=axes)
            gh = gd * gamma.data
            if not training:
                return gh * inv, ggamma, gbeta
            dvar = -0.5 * inv ** 3 * (gh * xc).sum(axis=axes)
            dmu = -inv * gh.sum(axis=axes)
            if m is None:
                gx = gh * inv + dmu / n + dvar * 2.0 * xc / n
            else:
                gx = gh * inv + m * (dmu / n + dvar * 2.0 * xc / n)
            return gx.astype(xd.dtype, copy=False), ggamma, gbeta

        record(out, (x, gamma, beta), bw)
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)
    if is_recording(x):
        def bw(g):
            gd = g[0]
            return (y * (gd - (gd * y).sum(axis=axis, keepdims=True)),)

        record(out, (x,), bw)
    return out


# ---------------------------------------------------------------- recurrent

def _gru_step(xw: np.ndarray, h: np.ndarray, u: np.ndarray):
    """One GRU update given the input projection ``xw = x @ W + b``."""
    H = h.shape[-1]
    hu = h @ u[:, :2 * H]
    z = _sigmoid(xw[:, :H] + hu[:, :H])
    r = _sigmoid(xw[:, H:2 * H] + hu[:, H:])
    rh = r * h
    c = np.tanh(xw[:, 2 * H:] + rh @ u[:, 2 * H:])
    h_new = h + z * (c - h)
    return h_new, (h, z, r, rh, c)


def _gru_step_backward(g: np.ndarray, cache, u: np.ndarray):
    h, z, r, rh, c = cache
    H = h.shape[-1]
    dz = g * (c - h)
    dc_pre = g * z * (1 - c * c)
    dh = g * (1 - z)
    drh = dc_pre @ u[:, 2 * H:].T
    dr_pre = drh * h * r * (1 - r)
    dh += drh * r
    dz_pre = dz * z * (1 - z)
    dzr = np.concatenate([dz_pre, dr_pre], axis=1)
    dh += dzr @ u[:, :2 * H].T
    dxw = np.concatenate([dzr, dc_pre], axis=1)
    du = np.concatenate([h.T @ dzr, rh.T @ dc_pre], axis=1)
    return dxw, dh, du


def gru_cell_projected(xw: Tensor, h: Tensor, u: Tensor) -> Tensor:
    """GRU update from a precomputed input projection.

    Gate layout along the last axis is ``[update, reset, candidate]``:
    ``z = sig(.)``, ``r = sig(.)``, ``c = tanh(xw_c + (r*h) @ U_c)``,
    ``h' = (1 - z) * h + z * c``.
    """
    if xw.shape[-1] != 3 * h.shape[-1] or u.shape != (h.shape[-1], 3 * h.shape[-1]):
        raise ValueError(f"gru shape mismatch: xw {xw.shape}, h {h.shape}, U {u.shape}")
    h_new, cache = _gru_step(xw.data, h.data, u.data)
    out = Tensor(h_new)
    if is_recording(xw, h, u):
        ud = u.data

        def bw(g):
            return _gru_step_backward(g[0], cache, ud)

        record(out, (xw, h, u), bw)
    return out


def gru_cell(x: Tensor, h: Tensor, w: Tensor, u: Tensor, b: Tensor) -> Tensor:
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"gru input mismatch: x {x.shape}, W {w.shape}")
    return gru_cell_projected(linear(x, w, b), h, u)


def gru_sequence(
    xw: Tensor,
    h0: Tensor,
    u: Tensor,
    mask: Optional[np.ndarray] = None,
    reverse: bool = False,
) -> Tensor:
    """Run a GRU over (B, T, 3H) input projections; returns (B, T, H).

    Where ``mask[b, t]`` is false the state is carried unchanged, so a
    reversed pass over a right-padded batch starts cleanly at each
    sequence's true end.
    """
    xd, ud = xw.data, u.data
    B, T, _ = xd.shape
    H = ud.shape[0]
    order = range(T - 1, -1, -1) if reverse else range(T)
    hs = np.empty((B, T, H), dtype=xd.dtype)
    caches = [None] * T
    h = h0.data
    for t in order:
        h_new, cache = _gru_step(xd[:, t], h, ud)
        if mask is not None:
            mt = mask[:, t:t + 1]
            h_new = np.where(mt, h_new, h)
        caches[t] = cache
        h = h_new
        hs[:, t] = h
    out = Tensor(hs)
    if is_recording(xw, h0, u):
        def bw(g):
            gd = g[0]
            dxw = np.zeros_like(xd)
            du = np.zeros_like(ud)
            dh = np.zeros((B, H), dtype=xd.dtype)
            for t in reversed(list(order)):
                dh = dh + gd[:, t]
                if mask is None:
                    dxw_t, dh_prev, du_t = _gru_step_backward(dh, caches[t], ud)
                else:
                    mt = mask[:, t:t + 1]
                    dxw_t, dh_prev, du_t = _gru_step_backward(dh * mt, caches[t], ud)
                    dh_prev = dh_prev + dh * ~mt
                dxw[:, t] = dxw_t
                du += du_t
                dh = dh_prev
            return dxw, dh, du

        record(out, (xw, h0, u), bw)
    return out


# ---------------------------------------------------------------- attention

def content_attention(
    keys: Tensor,
    query: Tensor,
    v: Tensor,
    values: Tensor,
    mask: Optional[np.ndarray] = None,
) -> tuple[Tensor, Tensor]:
    """Additive (tanh) attention.

    keys: (B, L, A) projected memory incl. bias; query: (B, A) projected
    query; v: (A,); values: (B, L, D). Returns ``(context (B, D),
    weights (B, L))``. Positions with ``mask == False`` get zero weight.
    """
    u = np.tanh(keys.data + query.data[:, None, :])
    e = u @ v.data
    if mask is not None:
        e = np.where(mask, e, -np.inf)
    e = e - e.max(axis=1, keepdims=True)
    ex = np.exp(e)
    w = ex / ex.sum(axis=1, keepdims=True)
    ctx = np.einsum("bl,bld->bd", w, values.data)
    ctx_t, w_t = Tensor(ctx), Tensor(w)
    if is_recording(keys, query, v, values):
        vd, vals = v.data, values.data

        def bw(gs):
            gctx, gw = gs
            gw_total = gw + np.einsum("bd,bld->bl", gctx, vals)
            de = w * (gw_total - (w * gw_total).sum(axis=1, keepdims=True))
            gvals = w[:, :, None] * gctx[:, None, :]
            gv = np.einsum("bla,bl->a", u, de)
            dpre = de[:, :, None] * vd * (1 - u * u)
            return dpre, dpre.sum(axis=1), gv, gvals

        record((ctx_t, w_t), (keys, query, v, values), bw)
    return ctx_t, w_t


# ---------------------------------------------------------------- losses

def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error; subgradient ``sign(pred - target) / n`` (0 at ties)."""
    target = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"l1_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target
    n = diff.size
    out = Tensor(np.asarray(np.abs(diff).sum() / n, dtype=pred.dtype))
    if is_recording(pred):
        sgn = np.sign(diff)
        record(out, (pred,), lambda g: ((g[0] * sgn / n).astype(pred.dtype, copy=False),))
    return out
