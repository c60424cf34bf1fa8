import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chartts import dsp
from chartts.corpus import (
    FeatureRecord,
    ManifestError,
    SampleRateMismatch,
    ToysetSpec,
    Utterance,
    cache_path,
    featurize,
    generate_toyset,
    iterate_batches,
    load_manifest,
    pad_batch,
    tone_audio,
)
from chartts.dsp import SpectralConfig

CFG = SpectralConfig()


def write_tone(path, seconds, sr=24000, f=440.0):
    t = np.arange(int(seconds * sr)) / sr
    dsp.write_wav(path, dsp.Waveform(0.1 * np.sin(2 * np.pi * f * t), sr))
    return path


# ------------------------------------------------------------------ manifest

def test_manifest_basic(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("u1|a.wav|Hello\n", encoding="utf-8")
    m = load_manifest(p)
    assert len(m) == 1
    u = m.records[0]
    assert (u.utterance_id, u.wav_path, u.text) == ("u1", tmp_path / "a.wav", "hello")


def test_manifest_bad_line_reports_line_number(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("u1|a.wav|ok\nu2|b.wav\n", encoding="utf-8")
    with pytest.raises(ManifestError, match=":2:"):
        load_manifest(p)


def test_manifest_ten_lines(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("".join(f"u{i}|w{i}.wav|text {i}\n" for i in range(10)), encoding="utf-8")
    assert len(load_manifest(p)) == 10


def test_manifest_duplicate_id(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("u1|a.wav|x\nu1|b.wav|y\n", encoding="utf-8")
    with pytest.raises(ManifestError, match="duplicate"):
        load_manifest(p)


def test_manifest_text_may_contain_pipes(tmp_path):
    p = tmp_path / "m.txt"
    p.write_text("u1|a.wav|left | right\n", encoding="utf-8")
    assert load_manifest(p).records[0].text == "left right"


# ------------------------------------------------------------------ featurize

def test_featurize_frame_count_and_widths(tmp_path):
    wav = write_tone(tmp_path / "a.wav", 1.2)
    rec = featurize(Utterance("a", wav, "hi"), CFG)
    n = int(1.2 * 24000)
    assert rec.n_frames == 1 + n // 300  # centred frames, one per hop
    assert rec.mel.shape == (rec.n_frames, 80)
    assert rec.linear.shape == (rec.n_frames, 1025)
    assert rec.mel.dtype == np.float32
    assert rec.mel.min() >= 0 and rec.mel.max() <= 1 and rec.linear.min() >= 0 and rec.linear.max() <= 1


def test_featurize_cache_round_trip(tmp_path):
    wav = write_tone(tmp_path / "a.wav", 0.3)
    u = Utterance("a", wav, "hi there")
    first = featurize(u, CFG, cache_dir=tmp_path / "cache")
    path = cache_path(tmp_path / "cache", "a", CFG)
    assert path.exists() and path.parent.name == CFG.feature_hash()
    assert not [p for p in path.parent.iterdir() if p.name.startswith(".tmp")]
    wav.unlink()  # a cache hit must not touch the audio
    second = featurize(u, CFG, cache_dir=tmp_path / "cache")
    assert second.mel.tobytes() == first.mel.tobytes()
    assert second.linear.tobytes() == first.linear.tobytes()
    assert list(second.ids) == list(first.ids) and second.text == "hi there"


def test_featurize_is_deterministic(tmp_path):
    wav = write_tone(tmp_path / "a.wav", 0.25)
    a = featurize(Utterance("a", wav, "x"), CFG)
    b = featurize(Utterance("a", wav, "x"), CFG)
    assert a.mel.tobytes() == b.mel.tobytes()


def test_featurize_sample_rate_mismatch(tmp_path):
    wav = write_tone(tmp_path / "a.wav", 0.2, sr=16000)
    with pytest.raises(SampleRateMismatch, match="24000.*16000"):
        featurize(Utterance("a", wav, "x"), CFG)


def test_config_hash_separates_caches():
    other = SpectralConfig(mel_bands=40)
    assert CFG.feature_hash() != other.feature_hash()
    assert CFG.feature_hash() == SpectralConfig(griffin_lim_iters=5).feature_hash()


# ------------------------------------------------------------------ toyset

def _dominant_hz(x, lo, hi):
    spec = np.abs(np.fft.rfft(x[lo:hi] * np.hanning(hi - lo), 1 << 16))
    return np.fft.rfftfreq(1 << 16, 1 / 24000)[spec.argmax()]


def test_toyset_two_characters():
    spec = ToysetSpec(alphabet="ab")
    x = tone_audio("ab", spec)
    assert x.size == 4800  # 200 ms
    assert _dominant_hz(x, 200, 2200) == pytest.approx(200, abs=1)
    assert _dominant_hz(x, 2600, 4600) == pytest.approx(240, abs=1)


def test_toyset_dominant_stft_bin_per_half():
    spec = ToysetSpec(alphabet="ab")
    mag = dsp.magnitude(tone_audio("ab", spec), CFG)
    freqs = np.arange(CFG.n_bins) * 24000 / CFG.fft_size
    peaks = freqs[mag.argmax(axis=1)]
    centre = np.arange(mag.shape[0]) * CFG.hop
    first = (centre >= 600) & (centre <= 1800)
    second = (centre >= 3000) & (centre <= 4200)
    assert np.all(np.abs(peaks[first] - 200) <= 12)
    assert np.all(np.abs(peaks[second] - 240) <= 12)


def test_toyset_crossfade_is_continuous():
    x = tone_audio("ab", ToysetSpec(alphabet="ab", amplitude=1.0))
    # sample-to-sample change is bounded by the fastest tone's slope plus the 120-sample fade slope
    assert np.max(np.abs(np.diff(x))) <= 2 * np.pi * 240 / 24000 + 1 / 120


def test_toyset_deterministic(tmp_path):
    spec = ToysetSpec(n_utterances=4, seed=3)
    a = generate_toyset(spec, tmp_path / "a")
    b = generate_toyset(spec, tmp_path / "b")
    assert [u.text for u in a] == [u.text for u in b]
    for ua, ub in zip(a, b):
        assert ua.wav_path.read_bytes() == ub.wav_path.read_bytes()
    assert (tmp_path / "a" / "manifest.txt").read_bytes() == (tmp_path / "b" / "manifest.txt").read_bytes()
    m = load_manifest(tmp_path / "a" / "manifest.txt")
    assert [u.text for u in m] == [u.text for u in a]


def test_toyset_texts_use_alphabet(tmp_path):
    spec = ToysetSpec(alphabet="xyz", n_utterances=6, min_chars=2, max_chars=4)
    for u in generate_toyset(spec, tmp_path):
        assert set(u.text) <= set("xyz") and 2 <= len(u.text) <= 4


@pytest.mark.parametrize("kw", [dict(alphabet=""), dict(alphabet="aa"), dict(tone_base_hz=11900.0),
                                dict(char_duration_ms=0.0), dict(min_chars=0)])
def test_toyset_invalid(kw, tmp_path):
    with pytest.raises(ValueError):
        generate_toyset(ToysetSpec(**kw), tmp_path)


def test_toyset_features_stay_below_clipping(tmp_path):
    from chartts.corpus import featurize_all
    recs = featurize_all(generate_toyset(ToysetSpec(n_utterances=3), tmp_path), CFG)
    assert max(r.linear.max() for r in recs) < 1.0


# ------------------------------------------------------------------ batching

def rec(uid, T, L=3, n_mel=4, n_lin=5, fill=0.5):
    return FeatureRecord(uid, np.arange(2, 2 + L), np.full((T, n_mel), fill, np.float32),
                         np.full((T, n_lin), fill, np.float32))


def test_pad_single_rounds_up():
    b = pad_batch([rec("a", 7)], r=2)
    assert b.mel.shape[1] == 8 and b.frame_lengths.tolist() == [7]


def test_pad_two_records_r5():
    b = pad_batch([rec("a", 10), rec("b", 15)], r=5)
    assert b.mel.shape == (2, 15, 4) and b.linear.shape == (2, 15, 5)


def test_padded_region_is_zero_and_text_uses_pad_id():
    b = pad_batch([rec("a", 3, L=2), rec("b", 6, L=5)], r=4)
    assert b.mel.shape[1] == 8
    assert np.all(b.mel[0, 3:] == 0) and np.all(b.linear[0, 3:] == 0)
    assert np.all(b.mel[0, :3] == 0.5)
    assert b.text_ids[0].tolist() == [2, 3, 0, 0, 0]
    assert b.text_lengths.tolist() == [2, 5]


def test_pad_empty_rejected():
    with pytest.raises(ValueError):
        pad_batch([], 2)


@settings(max_examples=50, deadline=None)
@given(lengths=st.lists(st.integers(1, 30), min_size=1, max_size=6), r=st.integers(1, 6))
def test_pad_length_property(lengths, r):
    b = pad_batch([rec(str(i), T) for i, T in enumerate(lengths)], r)
    T = b.mel.shape[1]
    assert T % r == 0 and T >= max(lengths) and T - max(lengths) < r


def test_batch_stream_is_seeded_and_covers_epoch():
    records = [rec(f"u{i}", T) for i, T in enumerate([5, 9, 3, 7, 4, 8, 6])]
    take = lambda seed: [b.utterance_ids for b in itertools.islice(  # noqa: E731
        iterate_batches(records, 3, 2, np.random.default_rng(seed)), 6)]
    assert take(1) == take(1)
    epoch = take(1)[:3]
    assert sorted(u for ids in epoch for u in ids) == sorted(r.utterance_id for r in records)
    # buckets group similar lengths
    lengths = {r.utterance_id: r.n_frames for r in records}
    for ids in epoch:
        assert max(lengths[u] for u in ids) - min(lengths[u] for u in ids) <= 2
