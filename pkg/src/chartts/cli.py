"""Command-line entry point.

Exit codes: 0 success, 1 verification or training failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import dsp
from .corpus import (
    ManifestError,
    SampleRateMismatch,
    featurize,
    featurize_all,
    generate_toyset,
    load_manifest,
)
from .grad.checks import run_primitive_suite
from .model import build_ablation_variant
from .runconfig import ConfigError, RunConfig, make_run_config
from .synthesizer import SynthesisError, export_diagnostics, spectrogram_to_audio, synthesize
from .text import Charset, EmptyTextError
from .trainer import CheckpointError, Trainer, TrainingDiverged, load_checkpoint, read_metrics
from .verify import end_to_end_gradcheck, mean_alignment_score

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
ABLATION_VARIANTS = ("full", "gru_encoder", "vanilla")

log = logging.getLogger("chartts")


class UsageError(Exception):
    pass


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one dotted config key (repeatable, applied last)")
    p.add_argument("--preset", choices=("base", "tiny", "micro"),
                   help="base model sizes (default: base; tiny for --toyset runs)")


def _run_config(args, extra: Sequence[str] = (), default_preset: Optional[str] = None) -> RunConfig:
    rc = make_run_config(args.config, [], preset=args.preset or default_preset)
    rc.apply_pairs(list(extra) + list(args.overrides))
    if args.preset:
        rc.preset = args.preset
    return rc


# ---------------------------------------------------------------- featurize

def cmd_featurize(args) -> int:
    rc = _run_config(args)
    cfg = rc.dsp
    manifest = load_manifest(args.manifest)
    if len(manifest) == 0:
        raise UsageError(f"manifest {args.manifest} has no records")
    fb = dsp.build_mel_filterbank(cfg)
    total, failures = 0, []
    for utt in manifest:
        try:
            rec = featurize(utt, cfg, cache_dir=args.cache, fb=fb)
        except (OSError, ValueError) as e:
            failures.append((utt.utterance_id, str(e)))
            continue
        total += rec.n_frames
        print(f"{utt.utterance_id}\t{rec.n_frames}")
    print(f"total\t{total}\tutterances\t{len(manifest) - len(failures)}")
    for uid, msg in failures:
        print(f"FAILED {uid}: {msg}", file=sys.stderr)
    return EXIT_USAGE if failures else EXIT_OK


# ---------------------------------------------------------------- train

def _train_overrides(args) -> list:
    extra = []
    if getattr(args, "variant", None):
        extra.append(f"model.variant={args.variant.replace('-', '_')}")
    if getattr(args, "r", None) is not None:
        extra.append(f"model.r={args.r}")
    if getattr(args, "seed", None) is not None:
        extra.append(f"train.seed={args.seed}")
    if getattr(args, "steps", None) is not None:
        extra.append(f"train.max_steps={args.steps}")
    return extra


def _load_training_records(args, rc: RunConfig, run_dir: Path):
    if args.toyset:
        manifest = generate_toyset(rc.toyset, run_dir / "toyset")
    elif args.manifest:
        manifest = load_manifest(args.manifest)
    else:
        raise UsageError("train needs --manifest or --toyset")
    if len(manifest) == 0:
        raise UsageError("no training utterances")
    return featurize_all(manifest, rc.dsp, cache_dir=run_dir / "cache")


def _train_one(rc: RunConfig, records, run_dir: Path, model_cfg=None, echo=True):
    model_cfg = model_cfg or rc.model
    train_cfg = rc.train
    charset = Charset.default()
    model = build_ablation_variant(model_cfg.variant, model_cfg, len(charset), seed=train_cfg.seed)
    trainer = Trainer(model, train_cfg, rc.dsp, charset, run_dir)
    if echo:
        rc.write(run_dir / "config.txt")

    def progress(m):
        if m.step % 100 == 0 or m.step + 1 == train_cfg.max_steps:
            mel = "" if m.mel_loss is None else f" mel {m.mel_loss:.4f}"
            log.info("step %d lr %g%s linear %.4f grad %.3f", m.step, m.lr, mel, m.linear_loss, m.grad_norm)

    trainer.fit(records, callback=progress)
    return trainer


def cmd_train(args) -> int:
    run_dir = Path(args.run_dir)
    rc = _run_config(args, _train_overrides(args), default_preset="tiny" if args.toyset else None)
    records = _load_training_records(args, rc, run_dir)
    trainer = _train_one(rc, records, run_dir)
    st = trainer.state
    print(f"trained {st.step} steps; checkpoint {run_dir / 'checkpoints' / 'latest.ckpt'}")
    if st.history:
        last = st.history[-1]
        print(f"final mel_loss {last.mel_loss} linear_loss {last.linear_loss}")
    return EXIT_OK


# ---------------------------------------------------------------- synth

# inference-only knobs that may differ from the checkpoint's feature settings
_INFERENCE_DSP_KEYS = ("griffin_lim_iters", "magnitude_power")


def _check_against_checkpoint(rc: RunConfig, ck) -> None:
    for (section, name), value in rc.overrides.items():
        if section == "model" and getattr(ck.model_config, name) != value:
            raise CheckpointError(f"model.{name}={value!r} conflicts with checkpoint value "
                                  f"{getattr(ck.model_config, name)!r}")
        if section == "dsp" and name not in _INFERENCE_DSP_KEYS and getattr(ck.spectral, name) != value:
            raise CheckpointError(f"dsp.{name}={value!r} conflicts with checkpoint value "
                                  f"{getattr(ck.spectral, name)!r}")


def cmd_synth(args) -> int:
    extra = []
    if args.no_inference_dropout:
        extra.append("synth.inference_prenet_dropout=false")
    if args.seed is not None:
        extra.append(f"synth.seed={args.seed}")
    rc = _run_config(args, extra)
    ck = load_checkpoint(args.checkpoint)
    _check_against_checkpoint(rc, ck)
    spectral = dataclasses.replace(ck.spectral, **{k: getattr(rc.dsp, k) for k in _INFERENCE_DSP_KEYS
                                                   if rc.has(f"dsp.{k}")})
    if args.text is not None:
        lines = [args.text]
    elif args.textfile:
        lines = [ln for ln in Path(args.textfile).read_text(encoding="utf-8").splitlines() if ln.strip()]
    else:
        raise UsageError("synth needs --text or --textfile")
    if not lines:
        raise UsageError("no text to synthesize")
    cfg = rc.synth
    out_dir = Path(args.out)
    for i, line in enumerate(lines):
        name = f"utt{i:03d}"
        res = synthesize(line, ck.model, spectral, cfg, ck.charset, np.random.default_rng([cfg.seed, i]))
        paths = export_diagnostics(res, out_dir, name, spectral.sample_rate_hz)
        print(f"{name}\t{res.n_frames} frames\tstop={res.stop_reason}\t{paths['wav']}")
    return EXIT_OK


# ---------------------------------------------------------------- invert

def cmd_invert(args) -> int:
    rc = _run_config(args)
    cfg = rc.dsp
    iters = args.iters if args.iters is not None else cfg.griffin_lim_iters
    if args.roundtrip:
        wav = dsp.read_wav(args.roundtrip)
        if wav.sample_rate_hz != cfg.sample_rate_hz:
            raise UsageError(f"{args.roundtrip}: expected {cfg.sample_rate_hz} Hz, got {wav.sample_rate_hz} Hz")
        power = 1.0 if args.power is None else args.power
        mag = dsp.magnitude(wav.samples, cfg) ** power
        gl = dsp.griffin_lim(mag, cfg, iters=iters, length=wav.samples.size)
        samples, errors = gl.samples, gl.errors
        top = np.max(np.abs(samples))
        if top > 1:
            samples = samples / top
    elif args.spectrogram:
        spec = dsp.read_csv(args.spectrogram)
        if np.any(spec < 0):
            raise UsageError(f"{args.spectrogram}: negative magnitudes are not allowed")
        if args.raw_magnitude:
            power = 1.0 if args.power is None else args.power
            gl = dsp.griffin_lim(spec ** power, cfg, iters=iters, length=spec.shape[0] * cfg.hop)
            samples, errors = np.clip(gl.samples, -1, 1), gl.errors
        else:
            if args.power is not None:
                cfg = dataclasses.replace(cfg, magnitude_power=args.power)
            samples, errors = spectrogram_to_audio(spec, cfg, iters=iters)
    else:
        raise UsageError("invert needs --spectrogram or --roundtrip")
    dsp.write_wav(args.out, dsp.Waveform(samples, cfg.sample_rate_hz))
    print("iteration,spectral_convergence")
    for k, e in enumerate(errors):
        print(f"{k},{e:.8g}")
    return EXIT_OK


# ---------------------------------------------------------------- gradcheck

def cmd_gradcheck(args) -> int:
    failed = []
    for name, rep in run_primitive_suite(args.tolerance).items():
        status = "ok" if rep.passed else "FAIL"
        print(f"{name}\t{rep.max_error:.3e}\t{status}")
        if not rep.passed:
            failed.append(name)
    for variant in ABLATION_VARIANTS:
        rep = end_to_end_gradcheck(args.e2e_tolerance, variant=variant)
        status = "ok" if rep.passed else "FAIL"
        print(f"end_to_end[{variant}]\t{rep.max_error:.3e}\t{status}")
        if not rep.passed:
            worst = max(rep.errors, key=rep.errors.get)
            failed.append(f"end_to_end[{variant}] (worst: {worst})")
    if failed:
        print("gradcheck failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# ---------------------------------------------------------------- ablate

def cmd_ablate(args) -> int:
    if not args.toyset:
        raise UsageError("ablate currently runs on the synthetic corpus; pass --toyset")
    run_dir = Path(args.run_dir)
    rc = _run_config(args, _train_overrides(args), default_preset="tiny")
    rc.write(run_dir / "config.txt")
    records = _load_training_records(args, rc, run_dir)
    rows = []
    for variant in ABLATION_VARIANTS:
        log.info("training variant %s", variant)
        cfg = dataclasses.replace(rc.model, variant=variant)
        trainer = _train_one(rc, records, run_dir / variant, cfg, echo=False)
        metrics = read_metrics(run_dir / variant / "metrics.csv")
        score = mean_alignment_score(trainer.model, records, seed=rc.train.seed)
        last = metrics[-1] if metrics else {}
        rows.append((variant, last.get("mel_loss"), last.get("linear_loss"), score))
    fmt = lambda v: "" if v is None else f"{v:.6g}"  # noqa: E731
    lines = ["variant,final_mel_loss,final_linear_loss,monotonicity"]
    lines += [f"{v},{fmt(m)},{fmt(lin)},{s:.6g}" for v, m, lin, s in rows]
    (run_dir / "summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    scores = {v: s for v, _, _, s in rows}
    if scores["full"] < scores["vanilla"]:
        log.warning("full model alignment (%.3f) scored below vanilla (%.3f)", scores["full"], scores["vanilla"])
    return EXIT_OK


# ---------------------------------------------------------------- entry

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chartts", description="Character-level spectrogram synthesis toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="extract and cache features for a manifest")
    p.add_argument("manifest")
    p.add_argument("--cache", required=True, help="cache directory")
    _add_config_args(p)
    p.set_defaults(func=cmd_featurize)

    for name, helptext, func in (("train", "train one model", cmd_train),
                                 ("ablate", "train all variants and compare alignments", cmd_ablate)):
        p = sub.add_parser(name, help=helptext)
        src = p.add_mutually_exclusive_group()
        src.add_argument("--manifest")
        src.add_argument("--toyset", action="store_true", help="generate and use the synthetic tone corpus")
        p.add_argument("--run-dir", required=True)
        if name == "train":
            p.add_argument("--variant", choices=("full", "vanilla", "gru-encoder", "gru_encoder"))
            p.add_argument("--r", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--steps", type=int, help="shorthand for train.max_steps")
        _add_config_args(p)
        p.set_defaults(func=func)

    p = sub.add_parser("synth", help="synthesize speech from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--text")
    src.add_argument("--textfile")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-inference-dropout", action="store_true")
    p.add_argument("--seed", type=int)
    _add_config_args(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("invert", help="Griffin-Lim inversion of a magnitude spectrogram")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--spectrogram", help="CSV of normalized log magnitudes (T x bins)")
    src.add_argument("--roundtrip", help="WAV file: invert its own STFT magnitude")
    p.add_argument("--raw-magnitude", action="store_true", help="the CSV holds plain magnitudes")
    p.add_argument("--out", required=True, help="output WAV path")
    p.add_argument("--iters", type=int)
    p.add_argument("--power", type=float)
    _add_config_args(p)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive and the model")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--e2e-tolerance", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL
    except (UsageError, ConfigError, ManifestError, SampleRateMismatch, EmptyTextError,
            CheckpointError, SynthesisError, dsp.WavFormatError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
