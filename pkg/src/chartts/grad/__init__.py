"""Reverse-mode autodiff on numpy arrays, plus Adam."""

from . import ops
from .gradcheck import GradcheckReport, gradcheck, relative_error
from .optim import Adam, AdamState, adam_step, clip_grad_norm, global_grad_norm
from .tensor import Tape, Tensor, active_tape, as_tensor, backward

__all__ = [
    "Adam",
    "AdamState",
    "GradcheckReport",
    "Tape",
    "Tensor",
    "active_tape",
    "adam_step",
    "as_tensor",
    "backward",
    "clip_grad_norm",
    "global_grad_norm",
    "gradcheck",
    "ops",
    "relative_error",
]
