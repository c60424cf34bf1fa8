"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .tensor import Tape, Tensor, backward


@dataclass
class GradcheckReport:
    errors: dict = field(default_factory=dict)
    tolerance: float = 1e-5

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def failures(self) -> dict:
        return {k: e for k, e in self.errors.items() if not e < self.tolerance}


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error ``max|a - n| / max(max|a|, max|n|)``."""
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0))
    if scale < 1e-300:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


def gradcheck(
    fn: Callable[[], Tensor],
    leaves: Mapping[str, Tensor],
    tolerance: float = 1e-5,
    h: float = 1e-5,
    max_elements: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradcheckReport:
    """Compare tape gradients of ``fn()`` against central differences.

    ``fn`` must rebuild the graph from the current leaf values each call and
    return a scalar. Leaves should be float64. With ``max_elements`` set,
    only that many randomly chosen entries per leaf are perturbed.
    """
    for t in leaves.values():
        t.grad = None
        t.requires_grad = True
    with Tape() as tape:
        loss = fn()
    backward(loss, tape)
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in leaves.items()}

    report = GradcheckReport(tolerance=tolerance)
    rng = rng if rng is not None else np.random.default_rng(0)
    for name, t in leaves.items():
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn().data)
            flat[i] = orig - h
            fm = float(fn().data)
            flat[i] = orig
            numeric[j] = (fp - fm) / (2 * h)
        report.errors[name] = relative_error(analytic[name].reshape(-1)[idx], numeric)
    return report
