"""Griffin-Lim phase reconstruction.

Iterations run on the uncropped, boundary-padded signal so that the
overlap-add step is the exact least-squares inverse of the analysis step.
That makes the spectral distance non-increasing from one iteration to the
next. The boundary padding is cropped once at the very end.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .spectral import SpectralConfig, analysis, synthesis


def _bin_weights(n_bins: int) -> np.ndarray:
    # each interior bin stands for itself and its mirror image
    w = np.full(n_bins, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    return w


def spectral_convergence(estimate: np.ndarray, target: np.ndarray) -> float:
    """``|| |estimate| - target ||_F / || target ||_F`` over the two-sided spectrum."""
    w = _bin_weights(target.shape[-1])
    num = np.sqrt(np.sum(w * (np.abs(estimate) - target) ** 2))
    den = np.sqrt(np.sum(w * target ** 2))
    return float(num / den) if den > 0 else float(num)


@dataclass
class GriffinLimResult:
    samples: np.ndarray
    errors: list = field(default_factory=list)


def griffin_lim(
    mag: np.ndarray,
    cfg: SpectralConfig,
    iters: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    init: str = "zeros",
    length: Optional[int] = None,
) -> GriffinLimResult:
    """Estimate a signal whose STFT magnitude matches ``mag`` (T x bins).

    ``errors[k]`` is the spectral convergence after ``k`` iterations, so the
    list has ``iters + 1`` entries. With ``iters=0`` the result is the plain
    inverse STFT of ``mag`` with the initial phase.
    """
    iters = cfg.griffin_lim_iters if iters is None else iters
    if iters < 0:
        raise ValueError("iters must be >= 0")
    mag = np.asarray(mag, dtype=np.float64)
    if np.any(mag < 0):
        raise ValueError("magnitudes must be nonnegative")
    if init == "zeros":
        spec = mag.astype(np.complex128)
    elif init == "random":
        if rng is None:
            raise ValueError("random phase init needs an rng")
        spec = mag * np.exp(2j * np.pi * rng.random(mag.shape))
    else:
        raise ValueError(f"unknown phase init {init!r}")

    z = synthesis(spec, cfg)
    errors = []
    for _ in range(iters):
        est = analysis(z, cfg)
        errors.append(spectral_convergence(est, mag))
        spec = mag * np.exp(1j * np.angle(est))
        z = synthesis(spec, cfg)
    errors.append(spectral_convergence(analysis(z, cfg), mag))

    p = cfg.frame_length // 2
    n = (mag.shape[0] - 1) * cfg.hop if length is None else length
    out = z[p:p + n]
    if out.size < n:
        out = np.pad(out, (0, n - out.size))
    return GriffinLimResult(samples=out, errors=errors)
