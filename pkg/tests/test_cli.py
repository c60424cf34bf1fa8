import numpy as np
import pytest

from chartts import dsp
from chartts.cli import main
from chartts.corpus import load_manifest
from chartts.dsp import SpectralConfig
from chartts.grad.checks import primitive_cases

CFG = SpectralConfig()
SMALL = ["--set", "toyset.n_utterances=3", "--set", "train.checkpoint_every=0"]


def tone(path, seconds, f=330.0):
    t = np.arange(int(seconds * 24000)) / 24000
    dsp.write_wav(path, dsp.Waveform(0.2 * np.sin(2 * np.pi * f * t), 24000))


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    run = tmp_path_factory.mktemp("run")
    assert main(["train", "--toyset", "--run-dir", str(run), "--steps", "3", *SMALL]) == 0
    return run / "checkpoints" / "latest.ckpt"


# ------------------------------------------------------------------ featurize

def test_featurize_totals_and_cache(tmp_path, capsys):
    seconds = [0.5, 0.8]
    for i, s in enumerate(seconds):
        tone(tmp_path / f"w{i}.wav", s)
    (tmp_path / "m.txt").write_text("a|w0.wav|first\nb|w1.wav|second\n")
    args = ["featurize", str(tmp_path / "m.txt"), "--cache", str(tmp_path / "cache")]
    assert main(args) == 0
    out = capsys.readouterr().out.splitlines()
    expected = [1 + int(s * 24000) // CFG.hop for s in seconds]
    assert out[:2] == [f"a\t{expected[0]}", f"b\t{expected[1]}"]
    assert out[2] == f"total\t{sum(expected)}\tutterances\t2"
    # second run is served from the cache even with the audio gone
    for i in range(2):
        (tmp_path / f"w{i}.wav").unlink()
    assert main(args) == 0
    assert capsys.readouterr().out.splitlines() == out


def test_featurize_empty_manifest(tmp_path):
    (tmp_path / "m.txt").write_text("")
    assert main(["featurize", str(tmp_path / "m.txt"), "--cache", str(tmp_path / "c")]) == 2


def test_featurize_lists_failures(tmp_path, capsys):
    tone(tmp_path / "ok.wav", 0.2)
    (tmp_path / "m.txt").write_text("ok|ok.wav|fine\nbad|missing.wav|gone\n")
    assert main(["featurize", str(tmp_path / "m.txt"), "--cache", str(tmp_path / "c")]) == 2
    captured = capsys.readouterr()
    assert "FAILED bad" in captured.err and "utterances\t1" in captured.out


# ------------------------------------------------------------------ train

def test_train_same_seed_same_metrics(tmp_path):
    for d in "ab":
        assert main(["train", "--toyset", "--run-dir", str(tmp_path / d), "--seed", "7", "--steps", "4", *SMALL]) == 0
    a = (tmp_path / "a/metrics.csv").read_bytes()
    assert a == (tmp_path / "b/metrics.csv").read_bytes()
    assert len(a.splitlines()) == 5
    assert "train.seed=7" in (tmp_path / "a/config.txt").read_text()


def test_train_r5_alignment_rows(tmp_path):
    run = tmp_path / "r5"
    assert main(["train", "--toyset", "--run-dir", str(run), "--r", "5", "--steps", "2",
                 "--set", "train.alignment_every=2", *SMALL]) == 0
    texts = [u.text for u in load_manifest(run / "toyset" / "manifest.txt")]
    longest = max(8 * len(t) + 1 for t in texts)  # 100 ms per character at a 12.5 ms hop, centred frames
    align = dsp.read_csv(run / "alignments" / "step_0000002.csv")
    assert align.shape[0] == -(-longest // 5)


def test_train_vanilla_variant(tmp_path):
    run = tmp_path / "v"
    assert main(["train", "--toyset", "--run-dir", str(run), "--variant", "vanilla", "--steps", "2", *SMALL]) == 0
    text = (run / "config.txt").read_text()
    assert "model.variant=vanilla" in text and "train.scheduled_sampling_rate=0.5" in text


def test_unknown_config_key(tmp_path):
    assert main(["train", "--toyset", "--run-dir", str(tmp_path), "--set", "train.bogus=1"]) == 2


def test_train_needs_a_source(tmp_path):
    assert main(["train", "--run-dir", str(tmp_path)]) == 2


# ------------------------------------------------------------------ synth

def test_synth_single_phrase(checkpoint, tmp_path):
    assert main(["synth", "--checkpoint", str(checkpoint), "--text", "abc", "--out", str(tmp_path),
                 "--set", "dsp.griffin_lim_iters=2", "--set", "synth.max_steps_cap=10"]) == 0
    assert (tmp_path / "utt000.audio.wav").exists() and (tmp_path / "utt000.alignment.pgm").exists()


def test_synth_textfile_names(checkpoint, tmp_path):
    (tmp_path / "t.txt").write_text("abc\n\nfed\nbead\n")
    out = tmp_path / "out"
    assert main(["synth", "--checkpoint", str(checkpoint), "--textfile", str(tmp_path / "t.txt"), "--out", str(out),
                 "--set", "dsp.griffin_lim_iters=2", "--set", "synth.max_steps_cap=10"]) == 0
    assert sorted(p.name for p in out.glob("*.wav")) == ["utt000.audio.wav", "utt001.audio.wav", "utt002.audio.wav"]


def test_synth_without_dropout_is_repeatable(checkpoint, tmp_path):
    for d in "ab":
        assert main(["synth", "--checkpoint", str(checkpoint), "--text", "dab", "--out", str(tmp_path / d),
                     "--no-inference-dropout", "--set", "dsp.griffin_lim_iters=2",
                     "--set", "synth.max_steps_cap=10"]) == 0
    assert (tmp_path / "a/utt000.audio.wav").read_bytes() == (tmp_path / "b/utt000.audio.wav").read_bytes()


def test_synth_rejects_conflicting_model_key(checkpoint, tmp_path):
    assert main(["synth", "--checkpoint", str(checkpoint), "--text", "a", "--out", str(tmp_path),
                 "--set", "model.r=5"]) == 2


def test_synth_missing_checkpoint(tmp_path):
    assert main(["synth", "--checkpoint", str(tmp_path / "none.ckpt"), "--text", "a", "--out", str(tmp_path)]) == 2


# ------------------------------------------------------------------ invert

def _table(out):
    lines = out.strip().splitlines()
    assert lines[0] == "iteration,spectral_convergence"
    return [float(ln.split(",")[1]) for ln in lines[1:]]


def test_invert_roundtrip_monotone(tmp_path, capsys):
    t = np.arange(12000) / 24000
    x = sum(0.2 / k * np.sin(2 * np.pi * 180 * k * t) for k in range(1, 6))
    dsp.write_wav(tmp_path / "in.wav", dsp.Waveform(x, 24000))
    assert main(["invert", "--roundtrip", str(tmp_path / "in.wav"), "--out", str(tmp_path / "o.wav"),
                 "--iters", "15"]) == 0
    errs = _table(capsys.readouterr().out)
    assert len(errs) == 16 and np.all(np.diff(errs) <= 1e-12)
    assert dsp.read_wav(tmp_path / "o.wav").samples.size == x.size


def test_invert_zero_iters_is_plain_istft(tmp_path, capsys):
    mag = np.abs(np.random.default_rng(0).normal(size=(6, CFG.n_bins))) * 0.01
    dsp.write_csv(tmp_path / "m.csv", mag)
    assert main(["invert", "--spectrogram", str(tmp_path / "m.csv"), "--raw-magnitude", "--out",
                 str(tmp_path / "o.wav"), "--iters", "0"]) == 0
    assert len(_table(capsys.readouterr().out)) == 1
    expected = dsp.istft(dsp.read_csv(tmp_path / "m.csv").astype(complex), CFG, length=6 * CFG.hop)
    got = dsp.read_wav(tmp_path / "o.wav").samples
    np.testing.assert_allclose(got, expected, atol=1.0 / 32767)


def test_invert_power_changes_output(tmp_path):
    rng = np.random.default_rng(1)
    dsp.write_csv(tmp_path / "m.csv", rng.uniform(0.3, 0.7, size=(6, CFG.n_bins)))
    for p in ("1.0", "1.2"):
        assert main(["invert", "--spectrogram", str(tmp_path / "m.csv"), "--out", str(tmp_path / f"{p}.wav"),
                     "--iters", "2", "--power", p]) == 0
    assert (tmp_path / "1.0.wav").read_bytes() != (tmp_path / "1.2.wav").read_bytes()


def test_invert_rejects_negative(tmp_path):
    dsp.write_csv(tmp_path / "m.csv", -np.ones((3, CFG.n_bins)))
    assert main(["invert", "--spectrogram", str(tmp_path / "m.csv"), "--out", str(tmp_path / "o.wav")]) == 2


# ------------------------------------------------------------------ gradcheck

def test_gradcheck_passes_and_lists_each_primitive(capsys):
    assert main(["gradcheck"]) == 0
    names = [ln.split("\t")[0] for ln in capsys.readouterr().out.splitlines()]
    prims = [n for n in names if not n.startswith("end_to_end")]
    assert sorted(prims) == sorted(primitive_cases()) and len(set(prims)) == len(prims)
    assert sum(n.startswith("end_to_end") for n in names) == 3


def test_gradcheck_impossible_tolerance_fails(capsys):
    assert main(["gradcheck", "--tolerance", "1e-30", "--e2e-tolerance", "1e-30"]) == 1
    assert "gradcheck failed" in capsys.readouterr().err


# ------------------------------------------------------------------ ablate

def test_ablate_summary(tmp_path, capsys):
    assert main(["ablate", "--toyset", "--run-dir", str(tmp_path), "--steps", "2", *SMALL]) == 0
    lines = (tmp_path / "summary.csv").read_text().splitlines()
    assert lines[0] == "variant,final_mel_loss,final_linear_loss,monotonicity"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["full", "gru_encoder", "vanilla"]
    vanilla = lines[3].split(",")
    assert vanilla[1] == "" and 0 <= float(vanilla[3]) <= 1
    for v in ("full", "gru_encoder", "vanilla"):
        assert (tmp_path / v / "metrics.csv").exists()
