"""Dense tensors and the reverse-mode tape.

Operations record themselves on the innermost active :class:`Tape`. Outside
of a tape nothing is recorded, which keeps inference cheap.
"""

from __future__ import annotations

import logging
from typing import Callable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

_ACTIVE_TAPES: list["Tape"] = []


class Tensor:
    """A numpy array plus gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_produced")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "fc":
            arr = arr.astype(np.float64 if dtype is None else dtype)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._produced = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar; the real work lives in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


BackwardFn = Callable[[list], Sequence[Optional[np.ndarray]]]


class _Entry:
    __slots__ = ("outputs", "inputs", "backward")

    def __init__(self, outputs, inputs, backward):
        self.outputs = outputs
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Entries are appended in execution order, so the list is already a
    topological order of the graph. ``backward`` walks it once in reverse.
    """

    def __init__(self):
        self.entries: list[_Entry] = []
        self._leaves: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _ACTIVE_TAPES.pop()
        assert popped is self, "tapes must be exited in LIFO order"

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, outputs: tuple, inputs: tuple, backward: BackwardFn) -> None:
        for t in inputs:
            if t.requires_grad and not t._produced:
                self._leaves.setdefault(id(t), t)
        for o in outputs:
            o._produced = True
        self.entries.append(_Entry(outputs, inputs, backward))

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def record(outputs, inputs, backward: BackwardFn) -> None:
    """Attach ``outputs`` to the active tape if any input needs a gradient."""
    tape = active_tape()
    if tape is None:
        return
    if not any(t.requires_grad for t in inputs):
        return
    if isinstance(outputs, Tensor):
        outputs = (outputs,)
    for o in outputs:
        o.requires_grad = True
    tape.record(tuple(outputs), tuple(inputs), backward)


def is_recording(*inputs: Tensor) -> bool:
    return bool(_ACTIVE_TAPES) and any(t.requires_grad for t in inputs)


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` on every leaf reachable from ``loss``.

    Gradients accumulate onto existing ``.grad`` arrays, so callers zero them
    between optimizer steps. Leaves seen by the tape but not reachable from
    the loss end up with an all-zero gradient.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for entry in reversed(tape.entries):
        out_grads = [o.grad for o in entry.outputs]
        if all(g is None for g in out_grads):
            continue
        if len(entry.outputs) > 1:
            out_grads = [
                np.zeros_like(o.data) if g is None else g
                for o, g in zip(entry.outputs, out_grads)
            ]
        in_grads = entry.backward(out_grads)
        for inp, g in zip(entry.inputs, in_grads):
            if g is None or not inp.requires_grad:
                continue
            if g.shape != inp.data.shape:
                raise RuntimeError(
                    f"backward produced grad of shape {g.shape} for input {inp.shape}"
                )
            inp.grad = g if inp.grad is None else inp.grad + g
        # intermediates are not needed after their rule has run
        for o in entry.outputs:
            if o is not loss:
                o.grad = None
    for leaf in tape._leaves.values():
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)
