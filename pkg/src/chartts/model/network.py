"""Encoder, attention decoder, post-net, and the assembled model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..grad import Tensor, ops
from .config import ModelConfig
from .layers import (
    CBHG,
    GRU,
    Embedding,
    Linear,
    Module,
    Prenet,
    ResidualGRUStack,
    apply_mask,
    xavier,
)


class DecoderNotInitializedError(RuntimeError):
    pass


# ---------------------------------------------------------------- encoders

class CBHGEncoder(Module):
    """embedding -> pre-net -> CBHG."""

    def __init__(self, cfg: ModelConfig, vocab: int, rng, dtype):
        super().__init__()
        self.embedding = Embedding(vocab, cfg.embed_dim, rng, dtype)
        self.prenet = Prenet(cfg.embed_dim, cfg.encoder_prenet, cfg.prenet_dropout, rng, dtype)
        self.cbhg = CBHG(cfg.encoder_prenet[-1], cfg.encoder_bank_k, cfg.encoder_bank_channels,
                         cfg.encoder_proj, cfg.encoder_highway_units, cfg.encoder_highway_layers,
                         cfg.encoder_gru_units, rng, dtype)

    def __call__(self, ids, mask, rng) -> Tensor:
        x = self.prenet(self.embedding(ids), rng, self.training)
        return self.cbhg(apply_mask(x, mask), mask)


class RNNEncoder(Module):
    """embedding -> [pre-net] -> residual GRU stack (the ablation encoders)."""

    def __init__(self, cfg: ModelConfig, vocab: int, rng, dtype, use_prenet: bool):
        super().__init__()
        self.embedding = Embedding(vocab, cfg.embed_dim, rng, dtype)
        if use_prenet:
            self.prenet = Prenet(cfg.embed_dim, cfg.encoder_prenet, cfg.prenet_dropout, rng, dtype)
            din = cfg.encoder_prenet[-1]
        else:
            self.prenet = None
            din = cfg.embed_dim
        self.rnn = ResidualGRUStack(din, cfg.memory_dim, cfg.rnn_encoder_layers, rng, dtype)

    def __call__(self, ids, mask, rng) -> Tensor:
        x = self.embedding(ids)
        if self.prenet is not None:
            x = self.prenet(x, rng, self.training)
        return self.rnn(x, mask)


# ---------------------------------------------------------------- decoder

@dataclass
class DecoderState:
    attention_h: Tensor
    context: Tensor
    decoder_h: list
    memory: Tensor
    keys: Tensor
    mask: Optional[np.ndarray]
    last_frame: Optional[np.ndarray] = None
    step: int = 0


class AttentionDecoder(Module):
    """Attention RNN + content-based tanh attention + residual GRU stack."""

    def __init__(self, cfg: ModelConfig, frame_dim: int, rng, dtype, use_prenet: bool, rnn_units: int):
        super().__init__()
        self.r = cfg.effective_r
        self.frame_dim = frame_dim
        mem = cfg.memory_dim
        if use_prenet:
            self.prenet = Prenet(frame_dim, cfg.decoder_prenet, cfg.prenet_dropout, rng, dtype)
            din = cfg.decoder_prenet[-1]
        else:
            self.prenet = None
            din = frame_dim
        self.attention_rnn = GRU(din + mem, cfg.attention_rnn_units, rng, dtype)
        self.memory_layer = Linear(mem, cfg.attention_units, rng, dtype)
        self.query_layer = Linear(cfg.attention_rnn_units, cfg.attention_units, rng, dtype, bias=False)
        self.v = xavier(rng, (cfg.attention_units,), cfg.attention_units, 1, dtype)
        self.project = Linear(mem + cfg.attention_rnn_units, rnn_units, rng, dtype)
        self.rnns = [GRU(rnn_units, rnn_units, rng, dtype) for _ in range(cfg.decoder_rnn_layers)]
        self.out = Linear(rnn_units, self.r * frame_dim, rng, dtype)

    def init_state(self, memory: Tensor, mask: Optional[np.ndarray]) -> DecoderState:
        B, dtype = memory.shape[0], memory.dtype
        return DecoderState(
            attention_h=self.attention_rnn.zero_state(B, dtype),
            context=Tensor(np.zeros((B, memory.shape[-1]), dtype=dtype)),
            decoder_h=[rnn.zero_state(B, dtype) for rnn in self.rnns],
            memory=memory,
            keys=self.memory_layer(memory),
            mask=mask,
            last_frame=np.zeros((B, self.frame_dim), dtype=dtype),
        )

    def attend(self, state: DecoderState, query: Tensor):
        return ops.content_attention(state.keys, self.query_layer(query), self.v, state.memory, state.mask)

    def step(self, state: DecoderState, frame, rng, prenet_dropout: bool):
        """Consume one input frame; emit ``r`` frames as a (B, r * frame_dim) tensor."""
        if state is None:
            raise DecoderNotInitializedError("decoder_step called before init_state")
        x = frame if isinstance(frame, Tensor) else Tensor(np.asarray(frame, dtype=state.memory.dtype))
        if self.prenet is not None:
            x = self.prenet(x, rng, prenet_dropout)
        att_h = self.attention_rnn.cell(ops.concat([x, state.context], axis=-1), state.attention_h)
        context, weights = self.attend(state, att_h)
        d = self.project(ops.concat([context, att_h], axis=-1))
        new_h = []
        for rnn, h in zip(self.rnns, state.decoder_h):
            h = rnn.cell(d, h)
            new_h.append(h)
            d = ops.add(h, d)
        out = self.out(d)
        new_state = DecoderState(att_h, context, new_h, state.memory, state.keys, state.mask,
                                 out.data[:, -self.frame_dim:], state.step + 1)
        return out, new_state, weights


def scheduled_sampling_choose(rate: float, rng: np.random.Generator) -> bool:
    """True means feed the ground-truth frame at this step."""
    if rate >= 1.0:
        return True
    if rate <= 0.0:
        return False
    return bool(rng.random() < rate)


# ---------------------------------------------------------------- model

@dataclass
class ModelOutput:
    mel: Optional[Tensor]
    linear: Tensor
    alignment: np.ndarray  # (B, decoder_steps, L)
    decoder_inputs: int = 0


@dataclass
class InferenceOutput:
    mel: Optional[np.ndarray]
    linear: np.ndarray
    alignment: np.ndarray  # (decoder_steps, L)
    stop_reason: str
    decoder_frames: np.ndarray = field(default=None)


class SpeechModel(Module):
    """Character sequence in, mel and linear spectrogram frames out.

    ``variant`` selects the full model, the GRU-encoder ablation, or the
    vanilla seq2seq baseline (no pre-nets, no post-net, linear targets
    straight from the decoder).
    """

    def __init__(self, cfg: ModelConfig, vocab_size: int, seed: int = 0, dtype=np.float32):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        if cfg.variant == "full":
            self.encoder = CBHGEncoder(cfg, vocab_size, rng, dtype)
        else:
            self.encoder = RNNEncoder(cfg, vocab_size, rng, dtype, use_prenet=cfg.variant == "gru_encoder")
        if cfg.variant == "vanilla":
            self.decoder = AttentionDecoder(cfg, cfg.linear_bins, rng, dtype, use_prenet=False,
                                            rnn_units=cfg.vanilla_rnn_units)
            self.postnet = None
        else:
            self.decoder = AttentionDecoder(cfg, cfg.mel_bands, rng, dtype, use_prenet=True,
                                            rnn_units=cfg.decoder_rnn_units)
            self.postnet = Postnet(cfg, rng, dtype)

    @property
    def r(self) -> int:
        return self.decoder.r

    @property
    def variant(self) -> str:
        return self.cfg.variant

    # -- encoder
    def encode_text(self, ids, lengths=None, rng=None):
        """Return ``(memory (B, L, D), mask (B, L) or None)``."""
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        if ids.shape[1] == 0:
            raise ValueError("cannot encode an empty character sequence")
        mask = None
        if lengths is not None:
            lengths = np.asarray(lengths)
            mask = np.arange(ids.shape[1])[None, :] < lengths[:, None]
            if mask.all():
                mask = None
        return self.encoder(ids, mask, rng), mask

    # -- decoder, training path
    def decode_teacher_forced(self, memory, mask, targets: np.ndarray, rng,
                              sampling_rate: Optional[float] = None, sampling_rng=None):
        """Feed every r-th ground-truth frame (GO frame first).

        With ``sampling_rate`` set, each step feeds the ground truth with
        that probability and the model's own last frame otherwise.
        """
        r = self.r
        B, T, F = targets.shape
        if T % r:
            raise ValueError(f"target length {T} is not a multiple of r={r}; pad it first")
        state = self.decoder.init_state(memory, mask)
        targets = targets.astype(self.dtype, copy=False)
        frame = np.zeros((B, F), dtype=self.dtype)
        outs, weights = [], []
        for t in range(T // r):
            if t > 0:
                use_truth = True
                if sampling_rate is not None:
                    use_truth = scheduled_sampling_choose(sampling_rate, sampling_rng)
                # a fed-back prediction stays on the tape, so gradients flow through it
                frame = targets[:, t * r - 1] if use_truth else ops.slice_axis(outs[-1], 1, (r - 1) * F, r * F)
            out, state, w = self.decoder.step(state, frame, rng, prenet_dropout=True)
            outs.append(out)
            weights.append(w.data)
        pred = ops.reshape(ops.stack(outs, axis=1), (B, T, F))
        return pred, np.stack(weights, axis=1)

    def forward(self, ids, lengths, mel_targets, linear_targets, rng,
                sampling_rate: Optional[float] = None, sampling_rng=None) -> ModelOutput:
        if sampling_rate is not None and self.variant != "vanilla":
            raise ValueError(f"scheduled sampling is reserved for the vanilla variant, not {self.variant!r}")
        memory, mask = self.encode_text(ids, lengths, rng)
        if self.postnet is None:
            linear, align = self.decode_teacher_forced(memory, mask, linear_targets, rng,
                                                       sampling_rate, sampling_rng)
            return ModelOutput(None, linear, align, linear_targets.shape[1] // self.r)
        mel, align = self.decode_teacher_forced(memory, mask, mel_targets, rng)
        return ModelOutput(mel, self.postnet(mel), align, mel_targets.shape[1] // self.r)

    # -- decoder, inference path
    def decode_free_running(self, memory, mask, max_steps: int, rng,
                            stop: Optional[Callable[[np.ndarray], bool]] = None,
                            prenet_dropout: bool = True):
        """Autoregressive decoding feeding back the last of each r-frame group.

        Returns ``(frames (steps * r, F), alignment (steps, L), reason)``
        for batch element 0; ``reason`` is "silence" or "max_steps".
        """
        if max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        state = self.decoder.init_state(memory, mask)
        F = self.decoder.frame_dim
        groups, weights = [], []
        reason = "max_steps"
        for _ in range(max_steps):
            frame = np.clip(state.last_frame, 0.0, 1.0)
            out, state, w = self.decoder.step(state, frame, rng, prenet_dropout)
            groups.append(np.clip(out.data[0].reshape(self.r, F), 0.0, 1.0))
            weights.append(w.data[0])
            if stop is not None and stop(np.concatenate(groups, axis=0)):
                reason = "silence"
                break
        return np.concatenate(groups, axis=0), np.stack(weights), reason

    def infer(self, ids, max_steps: int, rng, stop=None, prenet_dropout: bool = True) -> InferenceOutput:
        was_training = self.training
        self.eval()
        try:
            memory, mask = self.encode_text(ids, None, rng)
            frames, align, reason = self.decode_free_running(memory, mask, max_steps, rng, stop, prenet_dropout)
            if self.postnet is None:
                return InferenceOutput(None, frames, align, reason, frames)
            linear = self.postnet(Tensor(frames[None].astype(self.dtype))).data[0]
            return InferenceOutput(frames, np.clip(linear, 0.0, 1.0), align, reason, frames)
        finally:
            self.train(was_training)


class Postnet(Module):
    """CBHG over the whole mel sequence, then a dense layer to linear bins."""

    def __init__(self, cfg: ModelConfig, rng, dtype):
        super().__init__()
        self.cbhg = CBHG(cfg.mel_bands, cfg.postnet_bank_k, cfg.postnet_bank_channels, cfg.postnet_proj,
                         cfg.postnet_highway_units, cfg.postnet_highway_layers, cfg.postnet_gru_units,
                         rng, dtype)
        self.out = Linear(self.cbhg.out_dim, cfg.linear_bins, rng, dtype)

    def __call__(self, mel: Tensor) -> Tensor:
        if mel.shape[-2] == 0:
            raise ValueError("postnet needs a nonempty mel sequence")
        return self.out(self.cbhg(mel))


def build_model(cfg: ModelConfig, vocab_size: int, seed: int = 0, dtype=np.float32) -> SpeechModel:
    return SpeechModel(cfg, vocab_size, seed, dtype)


def build_ablation_variant(kind: str, cfg: ModelConfig, vocab_size: int, seed: int = 0,
                           dtype=np.float32) -> SpeechModel:
    kind = kind.replace("-", "_")
    return SpeechModel(cfg.with_variant(kind), vocab_size, seed, dtype)


def max_decoder_steps(text_length: int, r: int, per_char: int = 30, cap: int = 2000) -> int:
    return min(int(math.ceil(per_char * text_length / r)), cap)
