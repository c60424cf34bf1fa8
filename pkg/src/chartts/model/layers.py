"""Parameterised building blocks: dense, conv+BN, highway, GRU, pre-net, CBHG."""

from __future__ import annotations

import logging
from typing import Iterator, Optional

import numpy as np

from ..grad import Tensor, ops

logger = logging.getLogger(__name__)


class Module:
    """Parameter container with recursive, insertion-ordered naming."""

    _buffer_names: tuple = ()

    def __init__(self):
        self.training = True

    def _children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffer_names:
            yield prefix + name, getattr(self, name)
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameters(self) -> dict:
        return dict(self.named_parameters())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.grad = None


def _param(arr: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


def xavier(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return _param(rng.uniform(-bound, bound, size=shape), dtype)


def orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


class Linear(Module):
    def __init__(self, din, dout, rng, dtype=np.float32, bias=True, bias_init=0.0):
        super().__init__()
        self.w = xavier(rng, (din, dout), din, dout, dtype)
        self.b = _param(np.full(dout, bias_init), dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.w, self.b)


class Embedding(Module):
    def __init__(self, vocab, dim, rng, dtype=np.float32):
        super().__init__()
        self.table = xavier(rng, (vocab, dim), vocab, dim, dtype)

    def __call__(self, ids) -> Tensor:
        return ops.embedding(self.table, ids)


class BatchNorm(Module):
    _buffer_names = ("running_mean", "running_var", "updates")

    def __init__(self, channels, dtype=np.float32, momentum=0.99, eps=1e-5):
        super().__init__()
        self.gamma = _param(np.ones(channels), dtype)
        self.beta = _param(np.zeros(channels), dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.updates = np.zeros(1, dtype=np.int64)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        if self.training:
            self.updates += 1
        elif self.updates[0] == 0:
            logger.warning("batch norm used for inference before any training step; "
                           "falling back to initial statistics")
        return ops.batchnorm1d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                               self.training, self.momentum, self.eps, mask)


class ConvBN(Module):
    """conv -> batch norm -> activation, with padded frames forced to zero."""

    def __init__(self, cin, cout, k, activation, rng, dtype=np.float32):
        super().__init__()
        self.k = k
        self.activation = activation
        self.w = xavier(rng, (k, cin, cout), k * cin, k * cout, dtype)
        self.bn = BatchNorm(cout, dtype)

    def __call__(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        y = ops.activation(self.activation, self.bn(ops.conv1d(x, self.w), mask))
        return apply_mask(y, mask)


def apply_mask(x: Tensor, mask: Optional[np.ndarray]) -> Tensor:
    if mask is None or mask.all():
        return x
    return ops.mul(x, Tensor(mask[..., None].astype(x.dtype)))


class Highway(Module):
    def __init__(self, units, layers, rng, dtype=np.float32):
        super().__init__()
        self.h = [Linear(units, units, rng, dtype) for _ in range(layers)]
        # negative gate bias starts every layer close to a pass-through
        self.t = [Linear(units, units, rng, dtype, bias_init=-1.0) for _ in range(layers)]

    def __call__(self, x: Tensor) -> Tensor:
        for h_layer, t_layer in zip(self.h, self.t):
            h = ops.relu(h_layer(x))
            t = ops.sigmoid(t_layer(x))
            x = ops.add(x, ops.mul(t, ops.sub(h, x)))
        return x


class GRU(Module):
    """Gated recurrent unit; gate blocks along the last axis are [z, r, candidate]."""

    def __init__(self, din, units, rng, dtype=np.float32):
        super().__init__()
        self.units = units
        bound = np.sqrt(6.0 / (din + units))
        self.w = _param(rng.uniform(-bound, bound, size=(din, 3 * units)), dtype)
        self.u = _param(np.concatenate([orthogonal(rng, units) for _ in range(3)], axis=1), dtype)
        self.b = _param(np.zeros(3 * units), dtype)

    def zero_state(self, batch: int, dtype) -> Tensor:
        return Tensor(np.zeros((batch, self.units), dtype=dtype))

    def cell(self, x: Tensor, h: Tensor) -> Tensor:
        return ops.gru_cell(x, h, self.w, self.u, self.b)

    def sequence(self, x: Tensor, mask=None, reverse=False) -> Tensor:
        xw = ops.linear(x, self.w, self.b)
        h0 = self.zero_state(x.shape[0], x.dtype)
        return ops.gru_sequence(xw, h0, self.u, mask, reverse)


class BiGRU(Module):
    def __init__(self, din, units, rng, dtype=np.float32):
        super().__init__()
        self.fwd = GRU(din, units, rng, dtype)
        self.bwd = GRU(din, units, rng, dtype)

    def __call__(self, x: Tensor, mask=None) -> Tensor:
        return ops.concat([self.fwd.sequence(x, mask), self.bwd.sequence(x, mask, reverse=True)], axis=-1)


class ResidualGRUStack(Module):
    """Unidirectional GRU layers whose outputs are added to their inputs."""

    def __init__(self, din, units, layers, rng, dtype=np.float32):
        super().__init__()
        self.proj = Linear(din, units, rng, dtype) if din != units else None
        self.layers = [GRU(units, units, rng, dtype) for _ in range(layers)]

    def __call__(self, x: Tensor, mask=None) -> Tensor:
        if self.proj is not None:
            x = self.proj(x)
        for layer in self.layers:
            x = ops.add(layer.sequence(x, mask), x)
        return x


class Prenet(Module):
    """FC-ReLU-Dropout stack acting as an information bottleneck."""

    def __init__(self, din, sizes, rate, rng, dtype=np.float32):
        super().__init__()
        dims = [din, *sizes]
        self.layers = [Linear(a, b, rng, dtype) for a, b in zip(dims[:-1], dims[1:])]
        self.rate = rate

    @property
    def out_dim(self) -> int:
        return self.layers[-1].w.shape[1]

    def __call__(self, x: Tensor, rng, dropout: bool) -> Tensor:
        for layer in self.layers:
            x = ops.dropout(ops.relu(layer(x)), self.rate, rng, dropout)
        return x


class CBHG(Module):
    """Conv bank, max-pool, conv projections + residual, highway, BiGRU."""

    def __init__(self, din, bank_k, bank_channels, proj, highway_units, highway_layers,
                 gru_units, rng, dtype=np.float32):
        super().__init__()
        if proj[-1] != din:
            raise ValueError(f"CBHG residual needs projection width {proj[-1]} == input width {din}")
        self.bank = [ConvBN(din, bank_channels, k, "relu", rng, dtype) for k in range(1, bank_k + 1)]
        widths = [bank_k * bank_channels, *proj]
        acts = ["relu"] * (len(proj) - 1) + ["linear"]
        self.proj = [ConvBN(a, b, 3, act, rng, dtype)
                     for a, b, act in zip(widths[:-1], widths[1:], acts)]
        self.pre_highway = Linear(din, highway_units, rng, dtype, bias=False) if din != highway_units else None
        self.highway = Highway(highway_units, highway_layers, rng, dtype)
        self.gru = BiGRU(highway_units, gru_units, rng, dtype)

    @property
    def out_dim(self) -> int:
        return 2 * self.gru.fwd.units

    def __call__(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        y = ops.concat([conv(x, mask) for conv in self.bank], axis=-1)
        y = apply_mask(ops.maxpool1d(y), mask)
        for conv in self.proj:
            y = conv(y, mask)
        y = ops.add(y, x)
        if self.pre_highway is not None:
            y = self.pre_highway(y)
        return self.gru(self.highway(y), mask)
