import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from chartts import dsp
from chartts.dsp import SpectralConfig

CFG = SpectralConfig()


def harmonic(seconds=1.0, f0=200.0, n=5, sr=24000):
    t = np.arange(int(sr * seconds)) / sr
    return sum(0.3 / k * np.sin(2 * np.pi * f0 * k * t) for k in range(1, n + 1))


# ------------------------------------------------------------------ config

def test_default_config_geometry():
    assert CFG.frame_length == 1200
    assert CFG.hop == 300
    assert CFG.frame_length // CFG.hop == 4
    assert CFG.n_bins == 1025
    assert CFG.sample_rate_hz == 24000


def test_feature_hash_ignores_synthesis_knobs():
    a = SpectralConfig()
    assert a.feature_hash() == SpectralConfig(griffin_lim_iters=10).feature_hash()
    assert a.feature_hash() != SpectralConfig(mel_bands=40).feature_hash()


# ------------------------------------------------------------------ wav

def test_wav_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, 2400)
    dsp.write_wav(tmp_path / "a.wav", dsp.Waveform(x, 24000))
    w = dsp.read_wav(tmp_path / "a.wav")
    assert w.sample_rate_hz == 24000
    assert np.max(np.abs(w.samples - x)) <= 1 / 32768


def test_wav_write_is_bit_exact_inverse(tmp_path):
    pcm = np.arange(-32768, 32768, 97, dtype=np.int64)
    x = pcm / 32768.0
    dsp.write_wav(tmp_path / "b.wav", dsp.Waveform(x, 24000))
    np.testing.assert_array_equal(dsp.read_wav(tmp_path / "b.wav").samples, x)


def test_wav_clamps_out_of_range(tmp_path):
    dsp.write_wav(tmp_path / "c.wav", dsp.Waveform(np.array([2.0, -2.0]), 16000))
    np.testing.assert_allclose(dsp.read_wav(tmp_path / "c.wav").samples, [32767 / 32768, -1.0])


def test_wav_rejects_empty_data(tmp_path):
    import wave

    with wave.open(str(tmp_path / "e.wav"), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(24000)
        f.writeframes(b"")
    with pytest.raises(dsp.WavFormatError, match="empty"):
        dsp.read_wav(tmp_path / "e.wav")


def test_wav_rejects_stereo_and_8bit(tmp_path):
    import wave

    with wave.open(str(tmp_path / "s.wav"), "wb") as f:
        f.setnchannels(2)
        f.setsampwidth(2)
        f.setframerate(24000)
        f.writeframes(b"\x00" * 8)
    with pytest.raises(dsp.WavFormatError, match="mono"):
        dsp.read_wav(tmp_path / "s.wav")
    with wave.open(str(tmp_path / "u8.wav"), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(1)
        f.setframerate(24000)
        f.writeframes(b"\x80" * 8)
    with pytest.raises(dsp.WavFormatError, match="16-bit"):
        dsp.read_wav(tmp_path / "u8.wav")


def test_wav_rejects_garbage(tmp_path):
    (tmp_path / "g.wav").write_bytes(b"not a wav file at all")
    with pytest.raises(dsp.WavFormatError):
        dsp.read_wav(tmp_path / "g.wav")


# ------------------------------------------------------------------ emphasis

def test_pre_emphasis_constant():
    y = dsp.pre_emphasis(np.full(4, 2.0), 0.97)
    np.testing.assert_allclose(y, [2.0, 0.06, 0.06, 0.06])


def test_pre_emphasis_zero_coef_identity():
    x = np.random.default_rng(1).normal(size=50)
    np.testing.assert_array_equal(dsp.pre_emphasis(x, 0.0), x)
    np.testing.assert_array_equal(dsp.de_emphasis(x, 0.0), x)


@given(arrays(np.float64, st.integers(1, 300), elements=st.floats(-1, 1)))
@settings(max_examples=40, deadline=None)
def test_emphasis_round_trip(x):
    np.testing.assert_allclose(dsp.de_emphasis(dsp.pre_emphasis(x)), x, atol=1e-6)


# ------------------------------------------------------------------ stft

def test_stft_zero_signal():
    S = dsp.stft(np.zeros(4800), CFG)
    assert S.shape == (17, 1025)
    assert np.all(np.abs(S) == 0)


def test_stft_frame_count_formula():
    for n in (1, 299, 300, 28800, 28801):
        padded = n + 2 * 600
        assert dsp.stft(np.ones(n), CFG).shape[0] == 1 + (padded - 1200) // 300 == dsp.num_frames(n, CFG)


def test_stft_rejects_empty():
    with pytest.raises(ValueError):
        dsp.stft(np.zeros(0), CFG)


def test_stft_matches_dft_definition_on_one_frame():
    rng = np.random.default_rng(3)
    x = rng.normal(size=3000)
    S = dsp.stft(x, CFG)
    t = 4
    seg = x[t * 300 - 600:t * 300 + 600] * dsp.hann_window(1200)
    n = np.arange(1200)
    for k in (0, 1, 17, 511, 1024):
        ref = np.sum(seg * np.exp(-2j * np.pi * k * n / 2048))
        assert abs(S[t, k] - ref) < 1e-9


def test_stft_pure_sine_single_dominant_bin():
    k0 = 64
    f = k0 * 24000 / 2048
    t = np.arange(24000) / 24000
    mag = np.abs(dsp.stft(np.sin(2 * np.pi * f * t), CFG))[10]
    assert np.argmax(mag) == k0
    # main lobe of a 1200-point Hann zero-padded to 2048 spans about +-3.4 bins
    far = np.concatenate([mag[:k0 - 4], mag[k0 + 5:]])
    assert 20 * np.log10(mag[k0] / far.max()) >= 20


def test_istft_reconstructs_interior():
    rng = np.random.default_rng(5)
    x = rng.normal(size=24000)
    y = dsp.istft(dsp.stft(x, CFG), CFG, length=x.size)
    assert np.max(np.abs(x[1200:-1200] - y[1200:-1200])) < 1e-6


def test_istft_zero_and_linearity():
    rng = np.random.default_rng(6)
    assert np.all(dsp.istft(np.zeros((10, 1025), complex), CFG) == 0)
    F = dsp.stft(rng.normal(size=6000), CFG)
    np.testing.assert_allclose(dsp.istft(2.5 * F, CFG), 2.5 * dsp.istft(F, CFG), atol=1e-12)


@given(arrays(np.float64, st.integers(2400, 6000), elements=st.floats(-1, 1)))
@settings(max_examples=10, deadline=None)
def test_istft_identity_property(x):
    y = dsp.istft(dsp.stft(x, CFG), CFG, length=x.size)
    interior = slice(600, x.size - 600)
    assert np.max(np.abs(x[interior] - y[interior]), initial=0) < 1e-6


# ------------------------------------------------------------------ mel

def test_mel_filterbank_shape_and_sign():
    fb = dsp.build_mel_filterbank(CFG)
    assert fb.weights.shape == (80, 1025)
    assert np.all(fb.weights >= 0)
    assert np.all(fb.weights.max(axis=1) > 0)
    # every bin strictly inside (fmin, fmax) is covered
    assert np.all(fb.weights.sum(axis=0)[1:-1] > 0)


def test_mel_centers_match_formula():
    fb = dsp.build_mel_filterbank(CFG)
    top = 2595.0 * np.log10(1 + 12000 / 700)
    mels = np.array([top * (i + 1) / 81 for i in range(80)])
    expected = np.array([700 * (10 ** (m / 2595) - 1) for m in mels])
    np.testing.assert_allclose(fb.centers_hz, expected, rtol=1e-10)
    assert np.all(np.diff(fb.centers_hz) > 0)


def test_mel_rows_single_peak():
    w = dsp.build_mel_filterbank(CFG).weights
    for row in w:
        nz = np.flatnonzero(row)
        seg = row[nz[0]:nz[-1] + 1]
        peak = np.argmax(seg)
        assert np.all(np.diff(seg[:peak + 1]) >= 0)
        assert np.all(np.diff(seg[peak:]) <= 0)


def test_mel_rejects_zero_bands():
    with pytest.raises(ValueError):
        dsp.build_mel_filterbank(SpectralConfig(mel_bands=0))


def test_linear_to_mel():
    fb = dsp.build_mel_filterbank(CFG)
    assert np.all(dsp.linear_to_mel(np.zeros((3, 1025)), fb) == 0)
    impulse = np.zeros((1, 1025))
    impulse[0, 100] = 1.0
    out = dsp.linear_to_mel(impulse, fb)[0]
    assert out.shape == (80,)
    support = fb.weights[:, 100] > 0
    assert np.all(out[support] > 0) and np.all(out[~support] == 0)
    with pytest.raises(ValueError):
        dsp.linear_to_mel(np.zeros((1, 10)), fb)


# ------------------------------------------------------------------ log scaling

def test_log_compress_boundaries():
    assert dsp.log_compress(np.array([1e-5]))[0] == 0.0
    assert dsp.log_compress(np.array([1.0]))[0] == 1.0
    assert dsp.log_compress(np.array([0.0]))[0] == 0.0
    assert dsp.log_compress(np.array([10.0]))[0] == 1.0


def test_log_round_trip():
    m = np.random.default_rng(2).uniform(1e-4, 1, 1000)
    np.testing.assert_allclose(dsp.exp_expand(dsp.log_compress(m)), m, atol=1e-6, rtol=1e-12)


# ------------------------------------------------------------------ griffin-lim

def test_griffin_lim_zero_iters_is_istft():
    M = np.abs(dsp.stft(harmonic(0.3), CFG))
    r = dsp.griffin_lim(M, CFG, iters=0)
    np.testing.assert_allclose(r.samples, dsp.istft(M.astype(complex), CFG), atol=1e-12)
    assert len(r.errors) == 1


def test_griffin_lim_monotone_and_converges():
    M = np.abs(dsp.stft(harmonic(1.0), CFG))
    r = dsp.griffin_lim(M, CFG, iters=50)
    e = np.array(r.errors)
    assert len(e) == 51
    assert np.all(np.diff(e) <= 1e-7)
    assert e[-1] < 0.1


def test_griffin_lim_monotone_from_random_phase():
    rng = np.random.default_rng(9)
    M = np.abs(dsp.stft(rng.normal(size=6000), CFG))
    e = np.array(dsp.griffin_lim(M, CFG, iters=20, init="random", rng=np.random.default_rng(0)).errors)
    assert np.all(np.diff(e) <= 1e-7)


def test_griffin_lim_seeded_is_deterministic():
    M = np.abs(dsp.stft(harmonic(0.2), CFG))
    a = dsp.griffin_lim(M, CFG, iters=5, init="random", rng=np.random.default_rng(4)).samples
    b = dsp.griffin_lim(M, CFG, iters=5, init="random", rng=np.random.default_rng(4)).samples
    assert a.tobytes() == b.tobytes()


def test_griffin_lim_rejects_bad_input():
    with pytest.raises(ValueError):
        dsp.griffin_lim(np.ones((3, 1025)), CFG, iters=-1)
    with pytest.raises(ValueError):
        dsp.griffin_lim(-np.ones((3, 1025)), CFG, iters=1)


# ------------------------------------------------------------------ export

def test_csv_round_trip(tmp_path):
    m = np.random.default_rng(0).random((5, 7))
    dsp.write_csv(tmp_path / "m.csv", m)
    np.testing.assert_allclose(dsp.read_csv(tmp_path / "m.csv"), m, atol=1e-5)


def test_pgm_dimensions_and_row_normalisation(tmp_path):
    m = np.array([[0.0, 0.5, 1.0], [0.0, 0.1, 0.2]])
    dsp.write_pgm(tmp_path / "m.pgm", m)
    img = dsp.read_pgm(tmp_path / "m.pgm")
    assert img.shape == (2, 3)
    np.testing.assert_array_equal(img[:, -1], [255, 255])
