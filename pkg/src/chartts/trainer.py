"""Training loop: l1 losses, step schedule, Adam updates, metrics, checkpoints."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import struct
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import dsp
from .corpus import Batch, FeatureRecord, iterate_batches
from .dsp import SpectralConfig
from .grad import AdamState, Tape, Tensor, adam_step, backward, clip_grad_norm, global_grad_norm, ops
from .model import ModelConfig, SpeechModel
from .text import Charset

logger = logging.getLogger(__name__)

CKPT_MAGIC = b"TACOFRG1"
CKPT_VERSION = 1
METRICS_HEADER = "step,lr,mel_loss,linear_loss,grad_norm,wall_ms"


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, utterance_ids: Sequence[str], what: str):
        self.step = step
        self.utterance_ids = list(utterance_ids)
        super().__init__(f"non-finite {what} at step {step}; batch: {', '.join(self.utterance_ids)}")


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    base_lr: float = 1e-3
    lr_milestones: tuple = ((500000, 5e-4), (1000000, 3e-4), (2000000, 1e-4))
    # multiplies milestone steps; small corpora reach their plateaus far sooner
    milestone_scale: float = 1.0
    max_steps: int = 1000
    seed: int = 0
    grad_clip: float = 1.0  # global-norm clip; 0 disables
    scheduled_sampling_rate: float = 0.5  # vanilla variant only
    checkpoint_every: int = 1000
    alignment_every: int = 100
    log_wall_time: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lr_milestones", tuple(tuple(m) for m in self.lr_milestones))
        self.validate()

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.milestone_scale <= 0:
            raise ValueError("milestone_scale must be positive")
        prev_step, prev_lr = -1, self.base_lr
        for step, lr in self.lr_milestones:
            if step <= prev_step:
                raise ValueError("lr milestones must be strictly increasing in step")
            if not 0 < lr < prev_lr:
                raise ValueError("lr milestones must be strictly decreasing and positive")
            prev_step, prev_lr = step, lr
        if not 0 <= self.scheduled_sampling_rate <= 1:
            raise ValueError("scheduled_sampling_rate must be in [0, 1]")
        if self.max_steps < 0 or self.grad_clip < 0:
            raise ValueError("max_steps and grad_clip must be non-negative")


def lr_at_step(step: int, cfg: TrainConfig) -> float:
    if step < 0:
        raise ValueError("step must be >= 0")
    lr = cfg.base_lr
    for boundary, value in cfg.lr_milestones:
        if step >= int(round(boundary * cfg.milestone_scale)):
            lr = value
    return lr


@dataclass
class Loss:
    total: Tensor
    mel: Optional[float]
    linear: float


def compute_loss(pred_mel, target_mel, pred_linear, target_linear) -> Loss:
    """Equal-weight l1 on both outputs; the mel term is dropped when ``pred_mel`` is None."""
    lin = ops.l1_loss(pred_linear, target_linear)
    if pred_mel is None:
        return Loss(lin, None, float(lin.data))
    mel = ops.l1_loss(pred_mel, target_mel)
    return Loss(ops.add(mel, lin), float(mel.data), float(lin.data))


@dataclass
class StepMetrics:
    step: int
    lr: float
    mel_loss: Optional[float]
    linear_loss: float
    grad_norm: float
    wall_ms: Optional[float] = None

    def csv_row(self) -> str:
        fmt = lambda v: "" if v is None else f"{v:.8g}"  # noqa: E731
        return ",".join([str(self.step), fmt(self.lr), fmt(self.mel_loss), fmt(self.linear_loss),
                         fmt(self.grad_norm), fmt(self.wall_ms)])


@dataclass
class TrainState:
    step: int = 0
    mel_avg: Optional[float] = None
    linear_avg: Optional[float] = None
    last_alignment: Optional[np.ndarray] = None
    history: list = field(default_factory=list)

    def update(self, m: StepMetrics, decay: float = 0.98) -> None:
        def ema(old, new):
            if new is None:
                return old
            return new if old is None else decay * old + (1 - decay) * new
        self.mel_avg = ema(self.mel_avg, m.mel_loss)
        self.linear_avg = ema(self.linear_avg, m.linear_loss)
        self.history.append(m)


class Trainer:
    """Owns the optimizer state and the step counter for one model."""

    def __init__(self, model: SpeechModel, cfg: TrainConfig, spectral: Optional[SpectralConfig] = None,
                 charset: Optional[Charset] = None, run_dir=None, adam: Optional[AdamState] = None,
                 step: int = 0):
        self.model = model
        self.cfg = cfg
        self.spectral = spectral or SpectralConfig()
        self.charset = charset or Charset.default()
        self.params = model.parameters()
        self.adam = adam or AdamState()
        self.state = TrainState(step=step)
        self.run_dir = Path(run_dir) if run_dir is not None else None
        if cfg.grad_clip > 0:
            logger.info("gradient clipping active at global norm %g", cfg.grad_clip)

    @property
    def uses_scheduled_sampling(self) -> bool:
        return self.model.variant == "vanilla"

    def _step_rngs(self, step: int):
        # one stream per step keeps resumed runs on the same trajectory
        seq = np.random.SeedSequence([self.cfg.seed, step])
        dropout_seed, sampling_seed = seq.spawn(2)
        return np.random.default_rng(dropout_seed), np.random.default_rng(sampling_seed)

    def train_step(self, batch: Batch) -> StepMetrics:
        model, step = self.model, self.state.step
        if batch.mel.shape[1] % model.r:
            raise ValueError(f"batch length {batch.mel.shape[1]} is not a multiple of model r={model.r}")
        t0 = time.perf_counter()
        model.train()
        rng, sampling_rng = self._step_rngs(step)
        rate = self.cfg.scheduled_sampling_rate if self.uses_scheduled_sampling else None
        for p in self.params.values():
            p.grad = None
        with Tape() as tape:
            out = model.forward(batch.text_ids, batch.text_lengths, batch.mel, batch.linear, rng,
                                sampling_rate=rate, sampling_rng=sampling_rng)
            loss = compute_loss(out.mel, batch.mel, out.linear, batch.linear)
        if not np.isfinite(loss.total.data):
            self._dump_divergence(step, batch, "loss")
            raise TrainingDiverged(step, batch.utterance_ids, "loss")
        backward(loss.total, tape)
        if self.cfg.grad_clip > 0:
            norm = clip_grad_norm(self.params, self.cfg.grad_clip)
        else:
            norm = global_grad_norm(self.params)
        if not np.isfinite(norm):
            self._dump_divergence(step, batch, "gradient norm")
            raise TrainingDiverged(step, batch.utterance_ids, "gradient norm")
        lr = lr_at_step(step, self.cfg)
        adam_step(self.params, self.adam, lr)
        wall = (time.perf_counter() - t0) * 1000.0 if self.cfg.log_wall_time else None
        metrics = StepMetrics(step, lr, loss.mel, loss.linear, norm, wall)
        self.state.step += 1
        self.state.last_alignment = out.alignment[0]
        self.state.update(metrics)
        return metrics

    def _dump_divergence(self, step: int, batch: Batch, what: str) -> None:
        if self.run_dir is None:
            return
        self.run_dir.mkdir(parents=True, exist_ok=True)
        with open(self.run_dir / "divergence.txt", "w", encoding="utf-8") as f:
            f.write(f"non-finite {what}\nstep={step}\nutterances={','.join(batch.utterance_ids)}\n")

    def fit(self, records: Sequence[FeatureRecord], max_steps: Optional[int] = None,
            callback: Optional[Callable[[StepMetrics], None]] = None) -> TrainState:
        """Train until ``max_steps`` global steps; resumes the batch stream at the current step."""
        max_steps = self.cfg.max_steps if max_steps is None else max_steps
        stream = iterate_batches(records, self.cfg.batch_size, self.model.r,
                                 np.random.default_rng(self.cfg.seed))
        for _ in range(self.state.step):
            next(stream)
        metrics_file = None
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            path = self.run_dir / "metrics.csv"
            fresh = not path.exists() or self.state.step == 0
            metrics_file = open(path, "w" if fresh else "a", encoding="utf-8")
            if fresh:
                metrics_file.write(METRICS_HEADER + "\n")
        try:
            while self.state.step < max_steps:
                batch = next(stream)
                m = self.train_step(batch)
                if metrics_file is not None:
                    metrics_file.write(m.csv_row() + "\n")
                    metrics_file.flush()
                done = self.state.step
                if self.run_dir is not None:
                    if self.cfg.alignment_every and done % self.cfg.alignment_every == 0:
                        self.write_alignment_snapshot(batch)
                    if self.cfg.checkpoint_every and done % self.cfg.checkpoint_every == 0:
                        self.save(self.run_dir / "checkpoints" / f"step_{done:07d}.ckpt")
                if callback is not None:
                    callback(m)
            if self.run_dir is not None:
                self.save(self.run_dir / "checkpoints" / "latest.ckpt")
        finally:
            if metrics_file is not None:
                metrics_file.close()
        return self.state

    def write_alignment_snapshot(self, batch: Batch) -> Path:
        align = self.state.last_alignment[:, :int(batch.text_lengths[0])]
        out = self.run_dir / "alignments"
        out.mkdir(parents=True, exist_ok=True)
        stem = out / f"step_{self.state.step:07d}"
        dsp.write_csv(stem.with_suffix(".csv"), align)
        dsp.write_pgm(stem.with_suffix(".pgm"), align)
        return stem

    def save(self, path) -> None:
        save_checkpoint(path, self.model, self.adam, self.state.step, self.spectral, self.charset)

    @classmethod
    def from_checkpoint(cls, path, cfg: TrainConfig, run_dir=None) -> "Trainer":
        ck = load_checkpoint(path)
        return cls(ck.model, cfg, ck.spectral, ck.charset, run_dir, ck.adam, ck.step)


# ---------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    model: SpeechModel
    adam: AdamState
    step: int
    model_config: ModelConfig
    spectral: SpectralConfig
    charset: Charset


def _write_table(f, table: dict) -> None:
    f.write(struct.pack("<I", len(table)))
    for name, arr in table.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError("checkpoint truncated")
    return data


def _read_table(f) -> dict:
    (count,) = struct.unpack("<I", _read_exact(f, 4))
    table = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", _read_exact(f, 4))
        name = _read_exact(f, n).decode("utf-8")
        (rank,) = struct.unpack("<I", _read_exact(f, 4))
        shape = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank))
        size = int(np.prod(shape, dtype=np.int64))
        table[name] = np.frombuffer(_read_exact(f, 4 * size), "<f4").reshape(shape).astype(np.float32)
    return table


def _config_block(model_cfg: ModelConfig, spectral: SpectralConfig, charset: Charset) -> bytes:
    lines = [f"model.{k}={json.dumps(v)}" for k, v in dataclasses.asdict(model_cfg).items()]
    lines += [f"dsp.{k}={json.dumps(v)}" for k, v in dataclasses.asdict(spectral).items()]
    lines.append(f"charset={json.dumps(charset.symbols)}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _parse_config_block(text: str):
    model_kw, dsp_kw, symbols = {}, {}, None
    for line in text.splitlines():
        if not line:
            continue
        key, _, value = line.partition("=")
        value = json.loads(value)
        if key.startswith("model."):
            model_kw[key[6:]] = tuple(value) if isinstance(value, list) else value
        elif key.startswith("dsp."):
            dsp_kw[key[4:]] = value
        elif key == "charset":
            symbols = value
        else:
            raise CheckpointError(f"unknown checkpoint config key {key!r}")
    try:
        return ModelConfig(**model_kw), SpectralConfig(**dsp_kw), Charset(symbols)
    except (TypeError, ValueError) as e:
        raise CheckpointError(f"checkpoint config is invalid: {e}") from e


def model_state(model: SpeechModel) -> dict:
    state = {name: p.data for name, p in model.named_parameters()}
    for name, buf in model.named_buffers():
        state[name] = buf
    return state


def save_checkpoint(path, model: SpeechModel, adam: AdamState, step: int,
                    spectral: SpectralConfig, charset: Charset) -> None:
    if model.dtype != np.float32:
        raise CheckpointError(f"checkpoints store float32 tensors; model is {model.dtype}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(CKPT_MAGIC)
            f.write(struct.pack("<I", CKPT_VERSION))
            _write_table(f, model_state(model))
            f.write(struct.pack("<Q3d", adam.step, adam.beta1, adam.beta2, adam.eps))
            _write_table(f, adam.m)
            _write_table(f, adam.v)
            f.write(struct.pack("<Q", step))
            block = _config_block(model.cfg, spectral, charset)
            f.write(struct.pack("<I", len(block)))
            f.write(block)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_state(model: SpeechModel, tensors: dict) -> None:
    """Copy tensors into ``model``; names and shapes must match exactly."""
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    expected = set(params) | set(buffers)
    if set(tensors) != expected:
        missing = sorted(expected - set(tensors))
        extra = sorted(set(tensors) - expected)
        raise CheckpointError(f"checkpoint tensors do not match model: missing {missing[:5]}, extra {extra[:5]}")
    for name, arr in tensors.items():
        target = params[name].data if name in params else buffers[name]
        if target.shape != arr.shape:
            raise CheckpointError(f"shape mismatch for {name}: model {target.shape}, checkpoint {arr.shape}")
        target[...] = arr.astype(target.dtype)


def load_checkpoint(path, expect_model: Optional[ModelConfig] = None,
                    expect_spectral: Optional[SpectralConfig] = None) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as f:
        if f.read(8) != CKPT_MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != CKPT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        tensors = _read_table(f)
        a_step, b1, b2, eps = struct.unpack("<Q3d", _read_exact(f, 32))
        m, v = _read_table(f), _read_table(f)
        (step,) = struct.unpack("<Q", _read_exact(f, 8))
        (n,) = struct.unpack("<I", _read_exact(f, 4))
        model_cfg, spectral, charset = _parse_config_block(_read_exact(f, n).decode("utf-8"))
    if expect_model is not None and expect_model != model_cfg:
        raise CheckpointError(f"{path}: model config mismatch")
    if expect_spectral is not None and expect_spectral != spectral:
        raise CheckpointError(f"{path}: spectral config mismatch")
    model = SpeechModel(model_cfg, len(charset), seed=0, dtype=np.float32)
    load_state(model, tensors)
    adam = AdamState(beta1=b1, beta2=b2, eps=eps, step=a_step, m=m, v=v)
    return Checkpoint(model, adam, step, model_cfg, spectral, charset)


def read_metrics(path) -> list:
    rows = []
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip().split(",")
        for line in f:
            vals = line.rstrip("\n").split(",")
            rows.append({k: (float(v) if v else None) for k, v in zip(header, vals)})
    return rows
