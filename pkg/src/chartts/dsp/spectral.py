"""Spectral analysis: pre-emphasis, STFT/ISTFT, mel filterbank, log scaling.

All routines work on float64 numpy arrays and are pure.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

MIN_MAGNITUDE = 1e-5
DB_FLOOR = -100.0


@dataclass(frozen=True)
class SpectralConfig:
    sample_rate_hz: int = 24000
    frame_length_ms: float = 50.0
    frame_shift_ms: float = 12.5
    fft_size: int = 2048
    preemphasis: float = 0.97
    mel_bands: int = 80
    fmin_hz: float = 0.0
    fmax_hz: Optional[float] = None
    griffin_lim_iters: int = 50
    magnitude_power: float = 1.2

    def __post_init__(self):
        if self.frame_length > self.fft_size:
            raise ValueError(
                f"frame length {self.frame_length} samples exceeds fft_size {self.fft_size}"
            )
        if self.hop < 1:
            raise ValueError("frame shift must be at least one sample")

    @property
    def frame_length(self) -> int:
        return int(round(self.sample_rate_hz * self.frame_length_ms / 1000.0))

    @property
    def hop(self) -> int:
        return int(round(self.sample_rate_hz * self.frame_shift_ms / 1000.0))

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def fmax(self) -> float:
        return self.sample_rate_hz / 2.0 if self.fmax_hz is None else float(self.fmax_hz)

    def feature_hash(self) -> str:
        """Digest of the fields that influence extracted features."""
        d = asdict(self)
        d.pop("griffin_lim_iters")
        d.pop("magnitude_power")
        text = ";".join(f"{k}={d[k]!r}" for k in sorted(d))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------- emphasis

def pre_emphasis(x: np.ndarray, coef: float = 0.97) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = x.copy()
    y[1:] -= coef * x[:-1]
    return y


def de_emphasis(y: np.ndarray, coef: float = 0.97) -> np.ndarray:
    """Inverse of :func:`pre_emphasis`: ``x[n] = y[n] + coef * x[n-1]``."""
    from scipy.signal import lfilter

    y = np.asarray(y, dtype=np.float64)
    return lfilter([1.0], [1.0, -coef], y)


# ---------------------------------------------------------------- STFT

def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def num_frames(n_samples: int, cfg: SpectralConfig) -> int:
    """Frame count for a signal of ``n_samples`` after half-frame padding."""
    padded = n_samples + 2 * (cfg.frame_length // 2)
    return 1 + (padded - cfg.frame_length) // cfg.hop


def _pad_center(x: np.ndarray, cfg: SpectralConfig) -> np.ndarray:
    p = cfg.frame_length // 2
    mode = "reflect" if x.size > 1 else "constant"
    return np.pad(x, (p, p), mode=mode)


def analysis(z: np.ndarray, cfg: SpectralConfig) -> np.ndarray:
    """Frame ``z`` (no boundary padding), window, zero-pad and FFT."""
    L, hop = cfg.frame_length, cfg.hop
    if z.size < L:
        z = np.pad(z, (0, L - z.size))
    frames = np.lib.stride_tricks.sliding_window_view(z, L)[::hop]
    return np.fft.rfft(frames * hann_window(L), n=cfg.fft_size, axis=1)


def synthesis(spec: np.ndarray, cfg: SpectralConfig, n_out: Optional[int] = None) -> np.ndarray:
    """Least-squares overlap-add inverse of :func:`analysis`.

    Each frame's inverse FFT is truncated to the frame length, weighted by
    the window and summed; the sum is divided by the overlapped squared
    window. This is the minimiser of the squared distance between the
    frames of the output and ``spec``.
    """
    L, hop = cfg.frame_length, cfg.hop
    T = spec.shape[0]
    total = (T - 1) * hop + L
    w = hann_window(L)
    frames = np.fft.irfft(spec, n=cfg.fft_size, axis=1)[:, :L] * w
    out = np.zeros(total)
    wsum = np.zeros(total)
    w2 = w * w
    for t in range(T):
        s = t * hop
        out[s:s + L] += frames[t]
        wsum[s:s + L] += w2
    nz = wsum > 1e-10
    out[nz] /= wsum[nz]
    if n_out is not None:
        out = out[:n_out] if out.size >= n_out else np.pad(out, (0, n_out - out.size))
    return out


def stft(x: np.ndarray, cfg: SpectralConfig) -> np.ndarray:
    """Complex STFT of shape (T, fft_size // 2 + 1).

    The signal is reflect-padded by half a frame on both sides so frame
    ``t`` is centred on sample ``t * hop``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot take the STFT of an empty signal")
    return analysis(_pad_center(x, cfg), cfg)


def istft(spec: np.ndarray, cfg: SpectralConfig, length: Optional[int] = None) -> np.ndarray:
    """Inverse of :func:`stft`; defaults to ``(T - 1) * hop`` samples."""
    T = spec.shape[0]
    if length is None:
        length = (T - 1) * cfg.hop
    p = cfg.frame_length // 2
    z = synthesis(spec, cfg)
    out = z[p:p + length]
    if out.size < length:
        out = np.pad(out, (0, length - out.size))
    return out


def magnitude(x: np.ndarray, cfg: SpectralConfig) -> np.ndarray:
    return np.abs(stft(x, cfg))


# ---------------------------------------------------------------- mel

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass
class MelFilterbank:
    weights: np.ndarray  # (mel_bands, n_bins)
    fmin: float
    fmax: float
    centers_hz: np.ndarray

    @property
    def n_bands(self) -> int:
        return self.weights.shape[0]


def build_mel_filterbank(cfg: SpectralConfig) -> MelFilterbank:
    """Triangular filters with peaks equally spaced on the HTK mel scale."""
    if cfg.mel_bands < 1:
        raise ValueError("mel_bands must be at least 1")
    fmin, fmax = float(cfg.fmin_hz), cfg.fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), cfg.mel_bands + 2))
    freqs = np.arange(cfg.n_bins) * cfg.sample_rate_hz / cfg.fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    return MelFilterbank(weights=weights, fmin=fmin, fmax=fmax, centers_hz=edges[1:-1].copy())


def linear_to_mel(mag: np.ndarray, fb: MelFilterbank) -> np.ndarray:
    if mag.shape[-1] != fb.weights.shape[1]:
        raise ValueError(
            f"magnitude has {mag.shape[-1]} bins but filterbank expects {fb.weights.shape[1]}"
        )
    return mag @ fb.weights.T


# ---------------------------------------------------------------- log scaling

def amp_to_db(m: np.ndarray) -> np.ndarray:
    return 20.0 * np.log10(np.maximum(m, MIN_MAGNITUDE))


def log_compress(m: np.ndarray) -> np.ndarray:
    """Magnitudes to dB, floored at -100 dB, mapped linearly onto [0, 1]."""
    return np.clip((amp_to_db(m) - DB_FLOOR) / -DB_FLOOR, 0.0, 1.0)


def exp_expand(features: np.ndarray) -> np.ndarray:
    """Inverse of :func:`log_compress` on its unclipped range."""
    db = np.asarray(features, dtype=np.float64) * -DB_FLOOR + DB_FLOOR
    return 10.0 ** (db / 20.0)
