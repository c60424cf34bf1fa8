"""Adam with bias correction, plus global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], state: AdamState, lr: float) -> None:
    """Apply one Adam update in place to every parameter with a gradient.

    Parameters without a ``.grad`` are treated as having a zero gradient,
    which still advances their moment estimates.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        update = (lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p.data -= update.astype(p.data.dtype, copy=False)


class Adam:
    """Thin stateful wrapper around :func:`adam_step`."""

    def __init__(self, params: Mapping[str, Tensor], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.state = AdamState(beta1=beta1, beta2=beta2, eps=eps)

    def step(self, lr: float) -> None:
        adam_step(self.params, self.state, lr)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def global_grad_norm(params: Mapping[str, Tensor]) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def clip_grad_norm(params: Mapping[str, Tensor], max_norm: float) -> float:
    """Rescale gradients so their global L2 norm is at most ``max_norm``.

    Returns the norm measured before clipping.
    """
    norm = global_grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * p.grad.dtype.type(factor)
    return norm
