"""PCM16 mono WAV reading and writing."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class WavFormatError(ValueError):
    """Raised for files that are not 16-bit PCM mono RIFF/WAVE."""


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("waveform must be a nonempty 1-D array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


def read_wav(path) -> Waveform:
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as f:
            channels = f.getnchannels()
            width = f.getsampwidth()
            rate = f.getframerate()
            n = f.getnframes()
            raw = f.readframes(n)
    except wave.Error as e:
        raise WavFormatError(f"{path}: not a PCM RIFF/WAVE file ({e})") from e
    except EOFError as e:
        raise WavFormatError(f"{path}: truncated WAV header") from e
    if channels != 1:
        raise WavFormatError(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise WavFormatError(f"{path}: expected 16-bit samples, got {8 * width}-bit")
    if n == 0 or not raw:
        raise WavFormatError(f"{path}: data chunk is empty")
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    scaled = np.round(np.clip(samples, -1.0, 1.0) * 32768.0)
    return np.clip(scaled, -32768, 32767).astype("<i2")


def write_wav(path, wav: Waveform) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(int(wav.sample_rate_hz))
        f.writeframes(to_pcm16(wav.samples).tobytes())
