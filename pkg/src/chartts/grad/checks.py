"""Finite-difference checks for every differentiable primitive in :mod:`ops`.

Each case reduces the op output to a scalar through a fixed random weighting
so that every output element contributes a distinct gradient.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import ops
from .gradcheck import GradcheckReport, gradcheck
from .tensor import Tensor


def _leaf(rng, *shape, scale=1.0, positive=False):
    a = rng.normal(size=shape) * scale
    return Tensor(np.abs(a) + 0.5 if positive else a, requires_grad=True)


def _weighted(y: Tensor, seed: int = 99) -> Tensor:
    w = np.random.default_rng(seed).normal(size=y.shape)
    return ops.sum(ops.mul(y, Tensor(w)))


def primitive_cases(seed: int = 0) -> dict:
    """name -> (fn, leaves) for every primitive op."""
    rng = np.random.default_rng(seed)
    c = {}

    a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    c["add"] = (lambda: _weighted(ops.add(a, b)), {"a": a, "b": b})
    c["sub"] = (lambda: _weighted(ops.sub(a, b)), {"a": a, "b": b})
    bb = _leaf(rng, 4)
    c["mul"] = (lambda: _weighted(ops.mul(a, bb)), {"a": a, "b": bb})
    c["neg"] = (lambda: _weighted(ops.neg(a)), {"a": a})
    c["scale"] = (lambda: _weighted(ops.scale(a, 2.5)), {"a": a})

    x = _leaf(rng, 2, 5, 3)
    c["relu"] = (lambda: _weighted(ops.relu(x)), {"x": x})
    c["sigmoid"] = (lambda: _weighted(ops.sigmoid(x)), {"x": x})
    c["tanh"] = (lambda: _weighted(ops.tanh(x)), {"x": x})
    c["identity"] = (lambda: _weighted(ops.identity(x)), {"x": x})
    c["sum"] = (lambda: _weighted(ops.sum(x, axis=1)), {"x": x})
    c["mean"] = (lambda: _weighted(ops.mean(x, axis=-1)), {"x": x})
    c["softmax"] = (lambda: _weighted(ops.softmax(x)), {"x": x})

    m, w, bias = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5), _leaf(rng, 5)
    c["matmul"] = (lambda: _weighted(ops.matmul(m, w)), {"a": m, "b": w})
    c["linear"] = (lambda: _weighted(ops.linear(m, w, bias)), {"x": m, "w": w, "b": bias})

    c["reshape"] = (lambda: _weighted(ops.reshape(m, (6, 4))), {"x": m})
    c["transpose"] = (lambda: _weighted(ops.transpose(m, (2, 0, 1))), {"x": m})
    m2 = _leaf(rng, 2, 3, 2)
    c["concat"] = (lambda: _weighted(ops.concat([m, m2], axis=-1)), {"a": m, "b": m2})
    s1, s2 = _leaf(rng, 2, 3), _leaf(rng, 2, 3)
    c["stack"] = (lambda: _weighted(ops.stack([s1, s2], axis=1)), {"a": s1, "b": s2})
    c["unstack"] = (lambda: ops.add(_weighted(ops.unstack(m, axis=1)[0], 1),
                                    _weighted(ops.unstack(m, axis=1)[2], 2)), {"x": m})
    c["slice_axis"] = (lambda: _weighted(ops.slice_axis(m, 2, 1, 3)), {"x": m})

    d = _leaf(rng, 3, 6)
    c["dropout"] = (lambda: _weighted(ops.dropout(d, 0.5, np.random.default_rng(3), True)), {"x": d})
    table = _leaf(rng, 5, 3)
    ids = np.array([[0, 2, 2], [4, 1, 0]])
    c["embedding"] = (lambda: _weighted(ops.embedding(table, ids)), {"table": table})

    cx, cw, cb = _leaf(rng, 2, 7, 3), _leaf(rng, 4, 3, 2), _leaf(rng, 2)
    c["conv1d"] = (lambda: _weighted(ops.conv1d(cx, cw, cb)), {"x": cx, "w": cw, "b": cb})
    px = _leaf(rng, 2, 6, 3)
    c["maxpool1d"] = (lambda: _weighted(ops.maxpool1d(px)), {"x": px})

    bx, gamma, beta = _leaf(rng, 3, 5, 4), _leaf(rng, 4, positive=True), _leaf(rng, 4)
    mask = np.ones((3, 5), dtype=bool)
    mask[1, 3:] = False

    def bn():
        rm, rv = np.zeros(4), np.ones(4)
        return _weighted(ops.batchnorm1d(bx, gamma, beta, rm, rv, True, mask=mask))
    c["batchnorm1d"] = (bn, {"x": bx, "gamma": gamma, "beta": beta})

    H = 3
    gx, gh = _leaf(rng, 2, 4), _leaf(rng, 2, H)
    gw, gu, gb = _leaf(rng, 4, 3 * H, scale=0.5), _leaf(rng, H, 3 * H, scale=0.5), _leaf(rng, 3 * H)
    c["gru_cell"] = (lambda: _weighted(ops.gru_cell(gx, gh, gw, gu, gb)),
                     {"x": gx, "h": gh, "w": gw, "u": gu, "b": gb})
    gxw = _leaf(rng, 2, 3 * H)
    c["gru_cell_projected"] = (lambda: _weighted(ops.gru_cell_projected(gxw, gh, gu)),
                               {"xw": gxw, "h": gh, "u": gu})
    sxw = _leaf(rng, 2, 5, 3 * H)
    smask = np.ones((2, 5), dtype=bool)
    smask[0, 3:] = False
    c["gru_sequence"] = (lambda: _weighted(ops.add(ops.gru_sequence(sxw, gh, gu, smask),
                                                   ops.gru_sequence(sxw, gh, gu, smask, reverse=True))),
                         {"xw": sxw, "h0": gh, "u": gu})

    keys, q, v, vals = _leaf(rng, 2, 5, 4), _leaf(rng, 2, 4), _leaf(rng, 4), _leaf(rng, 2, 5, 3)
    amask = np.ones((2, 5), dtype=bool)
    amask[1, 4:] = False

    def attention():
        ctx, wts = ops.content_attention(keys, q, v, vals, amask)
        return ops.add(_weighted(ctx, 1), _weighted(wts, 2))
    c["content_attention"] = (attention, {"keys": keys, "query": q, "v": v, "values": vals})

    p, t = _leaf(rng, 3, 4), rng.normal(size=(3, 4))
    c["l1_loss"] = (lambda: ops.l1_loss(p, t), {"pred": p})
    return c


def run_primitive_suite(tolerance: float = 1e-5, seed: int = 0,
                        progress: Callable[[str, GradcheckReport], None] = None) -> dict:
    """name -> GradcheckReport for each primitive."""
    out = {}
    for name, (fn, leaves) in primitive_cases(seed).items():
        out[name] = gradcheck(fn, leaves, tolerance=tolerance)
        if progress is not None:
            progress(name, out[name])
    return out
