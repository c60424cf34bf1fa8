from .export import read_csv, read_pgm, write_csv, write_pgm
from .griffin_lim import GriffinLimResult, griffin_lim, spectral_convergence
from .spectral import (
    MelFilterbank,
    SpectralConfig,
    analysis,
    build_mel_filterbank,
    de_emphasis,
    exp_expand,
    hann_window,
    hz_to_mel,
    istft,
    linear_to_mel,
    log_compress,
    magnitude,
    mel_to_hz,
    num_frames,
    pre_emphasis,
    stft,
    synthesis,
)
from .wav import Waveform, WavFormatError, read_wav, write_wav

__all__ = [
    "GriffinLimResult",
    "MelFilterbank",
    "SpectralConfig",
    "WavFormatError",
    "Waveform",
    "analysis",
    "build_mel_filterbank",
    "de_emphasis",
    "exp_expand",
    "griffin_lim",
    "hann_window",
    "hz_to_mel",
    "istft",
    "linear_to_mel",
    "log_compress",
    "magnitude",
    "mel_to_hz",
    "num_frames",
    "pre_emphasis",
    "read_csv",
    "read_pgm",
    "read_wav",
    "spectral_convergence",
    "stft",
    "synthesis",
    "write_csv",
    "write_pgm",
    "write_wav",
]
