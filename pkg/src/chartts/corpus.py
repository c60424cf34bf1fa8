"""Manifests, feature extraction with an on-disk cache, the synthetic tone corpus,
and padded batching."""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from . import dsp
from .dsp import SpectralConfig
from .text import Charset, encode, normalize_text

FEAT_MAGIC = b"CHFEAT01"
FEAT_VERSION = 1


class ManifestError(ValueError):
    pass


class SampleRateMismatch(ValueError):
    pass


@dataclass
class Utterance:
    utterance_id: str
    wav_path: Path
    text: str


@dataclass
class Manifest:
    records: list = field(default_factory=list)
    path: Optional[Path] = None

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def load_manifest(path, charset: Optional[Charset] = None) -> Manifest:
    """Parse ``id|wav_path|text`` lines. Relative wav paths resolve against the manifest."""
    path = Path(path)
    base = path.parent
    records, seen = [], set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("|", 2)
            if len(parts) != 3 or not parts[0] or not parts[1]:
                raise ManifestError(f"{path}:{lineno}: expected 'id|wav_path|text'")
            uid, wav, raw = parts
            if uid in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate utterance id {uid!r}")
            seen.add(uid)
            try:
                text = normalize_text(raw, charset)
            except ValueError as e:
                raise ManifestError(f"{path}:{lineno}: {e}") from e
            wav_path = Path(wav)
            if not wav_path.is_absolute():
                wav_path = base / wav_path
            records.append(Utterance(uid, wav_path, text))
    return Manifest(records, path)


def write_manifest(path, records: Sequence[Utterance]) -> None:
    path = Path(path)
    lines = []
    for u in records:
        wav = Path(u.wav_path)
        try:
            wav = wav.relative_to(path.parent)
        except ValueError:
            pass
        lines.append(f"{u.utterance_id}|{wav.as_posix()}|{u.text}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- features

@dataclass
class FeatureRecord:
    utterance_id: str
    ids: np.ndarray
    mel: np.ndarray  # (T, mel_bands) in [0, 1]
    linear: np.ndarray  # (T, n_bins) in [0, 1]
    text: str = ""

    @property
    def n_frames(self) -> int:
        return self.mel.shape[0]


def extract_features(samples: np.ndarray, cfg: SpectralConfig, fb=None) -> tuple[np.ndarray, np.ndarray]:
    """``(mel, linear)`` normalized log magnitudes, float32."""
    fb = fb if fb is not None else dsp.build_mel_filterbank(cfg)
    mag = dsp.magnitude(dsp.pre_emphasis(samples, cfg.preemphasis), cfg)
    linear = dsp.log_compress(mag)
    mel = dsp.log_compress(dsp.linear_to_mel(mag, fb))
    return mel.astype(np.float32), linear.astype(np.float32)


def cache_path(cache_dir, utterance_id: str, cfg: SpectralConfig) -> Path:
    return Path(cache_dir) / cfg.feature_hash() / f"{utterance_id}.feat"


def write_feature_file(path, rec: FeatureRecord) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ids = np.asarray(rec.ids, dtype="<i4")
    header = FEAT_MAGIC + struct.pack("<5I", FEAT_VERSION, rec.mel.shape[0], rec.mel.shape[1],
                                      rec.linear.shape[1], ids.size)
    text = rec.text.encode("utf-8")
    payload = b"".join([
        header,
        struct.pack("<I", len(text)), text,
        ids.tobytes(),
        np.ascontiguousarray(rec.mel, dtype="<f4").tobytes(),
        np.ascontiguousarray(rec.linear, dtype="<f4").tobytes(),
    ])
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_feature_file(path, utterance_id: Optional[str] = None) -> FeatureRecord:
    path = Path(path)
    data = path.read_bytes()
    if data[:8] != FEAT_MAGIC:
        raise ValueError(f"{path}: not a feature file")
    version, T, n_mel, n_lin, n_ids = struct.unpack_from("<5I", data, 8)
    if version != FEAT_VERSION:
        raise ValueError(f"{path}: unsupported feature version {version}")
    pos = 8 + 20
    (tlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    text = data[pos:pos + tlen].decode("utf-8")
    pos += tlen
    ids = np.frombuffer(data, "<i4", n_ids, pos).astype(np.int64)
    pos += 4 * n_ids
    mel = np.frombuffer(data, "<f4", T * n_mel, pos).reshape(T, n_mel).astype(np.float32)
    pos += 4 * T * n_mel
    linear = np.frombuffer(data, "<f4", T * n_lin, pos).reshape(T, n_lin).astype(np.float32)
    return FeatureRecord(utterance_id or path.stem, ids, mel, linear, text)


def featurize(utt: Utterance, cfg: SpectralConfig, charset: Optional[Charset] = None,
              cache_dir=None, fb=None) -> FeatureRecord:
    """Load audio, compute features, and cache them keyed by (id, config hash)."""
    if cache_dir is not None:
        cp = cache_path(cache_dir, utt.utterance_id, cfg)
        if cp.exists():
            return read_feature_file(cp, utt.utterance_id)
    wav = dsp.read_wav(utt.wav_path)
    if wav.sample_rate_hz != cfg.sample_rate_hz:
        raise SampleRateMismatch(
            f"{utt.wav_path}: expected {cfg.sample_rate_hz} Hz, got {wav.sample_rate_hz} Hz"
        )
    mel, linear = extract_features(wav.samples, cfg, fb)
    ids = np.asarray(encode(utt.text, charset).ids, dtype=np.int64)
    rec = FeatureRecord(utt.utterance_id, ids, mel, linear, utt.text)
    if cache_dir is not None:
        write_feature_file(cp, rec)
    return rec


def featurize_all(manifest: Manifest, cfg: SpectralConfig, charset=None, cache_dir=None) -> list:
    fb = dsp.build_mel_filterbank(cfg)
    return [featurize(u, cfg, charset, cache_dir, fb) for u in manifest]


# ---------------------------------------------------------------- synthetic corpus

@dataclass(frozen=True)
class ToysetSpec:
    """Each character becomes a fixed-length pure tone at its own frequency."""

    alphabet: str = "abcdef"
    tone_base_hz: float = 200.0
    tone_step_hz: float = 40.0
    char_duration_ms: float = 100.0
    crossfade_ms: float = 5.0
    amplitude: float = 0.02
    n_utterances: int = 10
    min_chars: int = 3
    max_chars: int = 6
    seed: int = 0
    sample_rate_hz: int = 24000

    def validate(self) -> None:
        if not self.alphabet:
            raise ValueError("toyset alphabet is empty")
        if len(set(self.alphabet)) != len(self.alphabet):
            raise ValueError("toyset alphabet has repeated characters")
        top = self.tone_base_hz + self.tone_step_hz * (len(self.alphabet) - 1)
        if not (0 < self.tone_base_hz and top < self.sample_rate_hz / 2):
            raise ValueError("toyset tone frequencies must lie in (0, Nyquist)")
        if self.char_duration_ms <= 0 or self.crossfade_ms < 0:
            raise ValueError("toyset durations must be positive")
        if not 1 <= self.min_chars <= self.max_chars:
            raise ValueError("need 1 <= min_chars <= max_chars")
        if self.n_utterances < 1:
            raise ValueError("n_utterances must be >= 1")

    def frequency(self, ch: str) -> float:
        return self.tone_base_hz + self.tone_step_hz * self.alphabet.index(ch)

    @property
    def char_samples(self) -> int:
        return int(round(self.sample_rate_hz * self.char_duration_ms / 1000.0))


def tone_audio(text: str, spec: ToysetSpec) -> np.ndarray:
    """Concatenated tones with linear crossfades centred on each boundary."""
    n = spec.char_samples
    total = n * len(text)
    t = np.arange(total) / spec.sample_rate_hz
    fade = int(round(spec.sample_rate_hz * spec.crossfade_ms / 1000.0))
    half = fade // 2
    out = np.zeros(total)
    idx = np.arange(total)
    for i, ch in enumerate(text):
        start, stop = i * n, (i + 1) * n
        env = np.clip(np.minimum(idx - (start - half), (stop + half) - idx) / max(fade, 1) + 0.0, 0.0, 1.0) \
            if fade else ((idx >= start) & (idx < stop)).astype(float)
        out += env * np.sin(2 * np.pi * spec.frequency(ch) * t)
    # fade the outer edges in and out too
    if fade:
        ramp = np.linspace(0.0, 1.0, half + 1)[1:] if half else np.ones(0)
        out[:half] *= ramp
        out[total - half:] *= ramp[::-1]
    return spec.amplitude * out


def toyset_texts(spec: ToysetSpec) -> list:
    rng = np.random.default_rng(spec.seed)
    texts = []
    for _ in range(spec.n_utterances):
        n = int(rng.integers(spec.min_chars, spec.max_chars + 1))
        texts.append("".join(spec.alphabet[i] for i in rng.integers(0, len(spec.alphabet), size=n)))
    return texts


def generate_toyset(spec: ToysetSpec, out_dir) -> Manifest:
    """Write WAV files and ``manifest.txt`` under ``out_dir``; pure function of ``spec``."""
    spec.validate()
    out_dir = Path(out_dir)
    (out_dir / "wavs").mkdir(parents=True, exist_ok=True)
    records = []
    for i, text in enumerate(toyset_texts(spec)):
        uid = f"toy{i:04d}"
        path = out_dir / "wavs" / f"{uid}.wav"
        dsp.write_wav(path, dsp.Waveform(tone_audio(text, spec), spec.sample_rate_hz))
        records.append(Utterance(uid, path, text))
    manifest_path = out_dir / "manifest.txt"
    write_manifest(manifest_path, records)
    return Manifest(records, manifest_path)


# ---------------------------------------------------------------- batching

@dataclass
class Batch:
    utterance_ids: list
    text_ids: np.ndarray  # (B, L) int64, pad id 0
    text_lengths: np.ndarray
    mel: np.ndarray  # (B, T, mel_bands)
    linear: np.ndarray  # (B, T, n_bins)
    frame_lengths: np.ndarray

    @property
    def size(self) -> int:
        return len(self.utterance_ids)


def pad_batch(records: Sequence[FeatureRecord], r: int, pad_id: int = 0) -> Batch:
    """Right-pad text with ``pad_id`` and targets with zeros to a multiple of ``r``.

    No loss mask is produced; the padded frames are part of the target.
    """
    if not records:
        raise ValueError("cannot pad an empty batch")
    B = len(records)
    L = max(len(rec.ids) for rec in records)
    T = max(rec.n_frames for rec in records)
    T = -(-T // r) * r
    n_mel, n_lin = records[0].mel.shape[1], records[0].linear.shape[1]
    ids = np.full((B, L), pad_id, dtype=np.int64)
    mel = np.zeros((B, T, n_mel), dtype=np.float32)
    lin = np.zeros((B, T, n_lin), dtype=np.float32)
    for i, rec in enumerate(records):
        ids[i, :len(rec.ids)] = rec.ids
        mel[i, :rec.n_frames] = rec.mel
        lin[i, :rec.n_frames] = rec.linear
    return Batch(
        utterance_ids=[rec.utterance_id for rec in records],
        text_ids=ids,
        text_lengths=np.array([len(rec.ids) for rec in records]),
        mel=mel,
        linear=lin,
        frame_lengths=np.array([rec.n_frames for rec in records]),
    )


def iterate_batches(records: Sequence[FeatureRecord], batch_size: int, r: int,
                    rng: np.random.Generator) -> Iterator[Batch]:
    """Endless stream of length-bucketed batches; bucket order reshuffled each epoch."""
    order = sorted(range(len(records)), key=lambda i: (records[i].n_frames, records[i].utterance_id))
    buckets = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    while True:
        for j in rng.permutation(len(buckets)):
            yield pad_batch([records[i] for i in buckets[j]], r)
