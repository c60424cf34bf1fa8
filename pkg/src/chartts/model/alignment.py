"""Scalar summaries of attention alignments."""

from __future__ import annotations

import numpy as np


def monotonicity_score(alignment: np.ndarray, max_backtrack: int = 2) -> float:
    """Fraction of consecutive decoder steps whose attention peak does not jump back.

    A step counts as a violation only when the argmax input position moves
    backwards by more than ``max_backtrack`` positions.
    """
    a = np.asarray(alignment)
    if a.ndim != 2:
        raise ValueError(f"alignment must be (decoder_steps, L), got {a.shape}")
    if a.shape[0] < 2:
        return 1.0
    peaks = a.argmax(axis=1)
    back = peaks[:-1] - peaks[1:]
    return float(np.mean(back <= max_backtrack))


def check_rows(alignment: np.ndarray, atol: float = 1e-5) -> bool:
    a = np.asarray(alignment)
    return bool(np.all(a >= 0) and np.allclose(a.sum(axis=-1), 1.0, atol=atol))
