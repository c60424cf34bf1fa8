"""Text to waveform: free-running decode, post-net, magnitude sharpening, Griffin-Lim."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import dsp
from .dsp import SpectralConfig
from .model import SpeechModel, max_decoder_steps
from .text import Charset, encode, normalize_text


class SynthesisError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    """Inference knobs. Griffin-Lim iterations and the magnitude power live in SpectralConfig."""

    stop_threshold: float = 0.02
    stop_patience: int = 5
    steps_per_char: int = 30
    max_steps_cap: int = 2000
    inference_prenet_dropout: bool = True
    peak: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.stop_threshold < 1:
            raise ValueError("stop_threshold must be in [0, 1)")
        if self.stop_patience < 1:
            raise ValueError("stop_patience must be >= 1")
        if self.steps_per_char < 1 or self.max_steps_cap < 1:
            raise ValueError("decoder step limits must be positive")
        if not 0 < self.peak <= 1:
            raise ValueError("peak must be in (0, 1]")


@dataclass
class SynthResult:
    text: str
    waveform: np.ndarray
    mel: Optional[np.ndarray]
    linear: np.ndarray
    alignment: np.ndarray  # (decoder_steps, L)
    stop_reason: str
    griffin_lim_errors: list

    @property
    def n_frames(self) -> int:
        return self.linear.shape[0]


def stop_decision(frames: np.ndarray, cfg: SynthConfig) -> bool:
    """True once the last ``stop_patience`` frames all peak below ``stop_threshold``."""
    if cfg.stop_threshold <= 0:
        return False
    frames = np.asarray(frames)
    if frames.shape[0] < cfg.stop_patience:
        return False
    return bool(np.all(frames[-cfg.stop_patience:].max(axis=1) < cfg.stop_threshold))


def spectrogram_to_audio(linear: np.ndarray, spectral: SpectralConfig, iters: Optional[int] = None,
                         rng=None, peak: float = 0.95):
    """Normalized log linear spectrogram to a peak-normalized waveform."""
    mag = dsp.exp_expand(linear) ** spectral.magnitude_power
    gl = dsp.griffin_lim(mag, spectral, iters=iters, rng=rng, length=mag.shape[0] * spectral.hop)
    y = dsp.de_emphasis(gl.samples, spectral.preemphasis)
    top = np.max(np.abs(y)) if y.size else 0.0
    if top > 0:
        y = y * (peak / top)
    return np.clip(y, -1.0, 1.0), gl.errors


def synthesize(text: str, model: SpeechModel, spectral: Optional[SpectralConfig] = None,
               cfg: Optional[SynthConfig] = None, charset: Optional[Charset] = None,
               rng: Optional[np.random.Generator] = None) -> SynthResult:
    spectral = spectral or SpectralConfig()
    cfg = cfg or SynthConfig()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    clean = normalize_text(text, charset)
    ids = np.asarray(encode(clean, charset).ids, dtype=np.int64)[None]
    limit = max_decoder_steps(ids.shape[1], model.r, cfg.steps_per_char, cfg.max_steps_cap)
    out = model.infer(ids, limit, rng, stop=lambda frames: stop_decision(frames, cfg),
                      prenet_dropout=cfg.inference_prenet_dropout)
    if not (np.all(np.isfinite(out.linear)) and (out.mel is None or np.all(np.isfinite(out.mel)))):
        raise SynthesisError(f"non-finite frames while synthesizing {clean!r} "
                             f"after {out.alignment.shape[0]} decoder steps")
    wave, errors = spectrogram_to_audio(out.linear, spectral, rng=rng, peak=cfg.peak)
    return SynthResult(clean, wave, out.mel, out.linear, out.alignment, out.stop_reason, errors)


def export_diagnostics(result: SynthResult, out_dir, name: str, sample_rate_hz: int = 24000) -> dict:
    """Write ``<name>.<kind>.<ext>`` files and return them keyed by kind.

    The mel CSV is skipped for models without a mel output.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out_dir}: {e}") from e
    paths = {
        "alignment_csv": out_dir / f"{name}.alignment.csv",
        "alignment_pgm": out_dir / f"{name}.alignment.pgm",
        "mel_csv": out_dir / f"{name}.mel.csv",
        "linear_csv": out_dir / f"{name}.linear.csv",
        "linear_pgm": out_dir / f"{name}.linear.pgm",
        "wav": out_dir / f"{name}.audio.wav",
    }
    if result.mel is None:
        # the vanilla decoder predicts linear frames directly
        del paths["mel_csv"]
    else:
        dsp.write_csv(paths["mel_csv"], result.mel)
    dsp.write_csv(paths["alignment_csv"], result.alignment)
    dsp.write_pgm(paths["alignment_pgm"], result.alignment)
    dsp.write_csv(paths["linear_csv"], result.linear)
    dsp.write_pgm(paths["linear_pgm"], result.linear)
    dsp.write_wav(paths["wav"], dsp.Waveform(result.waveform, sample_rate_hz))
    return paths
