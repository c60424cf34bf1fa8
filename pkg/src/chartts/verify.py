"""Whole-model verification helpers: end-to-end gradcheck and alignment scoring."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .corpus import FeatureRecord, pad_batch
from .grad import GradcheckReport, gradcheck
from .model import ModelConfig, SpeechModel, monotonicity_score
from .trainer import compute_loss


def end_to_end_gradcheck(tolerance: float = 1e-3, variant: str = "full", seed: int = 0,
                         max_elements: int = 12) -> GradcheckReport:
    """Gradcheck the full loss of a float64 micro model on a random padded batch.

    Every parameter tensor is checked, ``max_elements`` randomly chosen
    entries each. Parameters are jittered away from their initial values
    first so that no ReLU sits exactly at zero.
    """
    cfg = ModelConfig.micro(variant=variant)
    vocab = 7
    model = SpeechModel(cfg, vocab, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    # zero biases put the GO frame exactly on a ReLU kink; nudge every parameter off it
    for p in model.parameters().values():
        p.data += rng.normal(scale=0.1, size=p.shape)
    r = model.r
    ids = rng.integers(1, vocab, size=(2, 4))
    ids[1, 3:] = 0
    lengths = np.array([4, 3])
    T = 3 * r
    mel = rng.uniform(0, 1, size=(2, T, cfg.mel_bands))
    lin = rng.uniform(0, 1, size=(2, T, cfg.linear_bins))

    def fn():
        # reseeding inside fn freezes dropout masks across perturbed evaluations
        drop = np.random.default_rng(11)
        sampling = np.random.default_rng(12)
        rate = 0.5 if variant == "vanilla" else None
        out = model.forward(ids, lengths, mel, lin, drop, sampling_rate=rate, sampling_rng=sampling)
        return compute_loss(out.mel, mel, out.linear, lin).total

    return gradcheck(fn, model.parameters(), tolerance=tolerance, max_elements=max_elements,
                     rng=np.random.default_rng(seed + 2))


def alignment_scores(model: SpeechModel, records: Sequence[FeatureRecord], seed: int = 0) -> dict:
    """Teacher-forced alignment per utterance, cropped to its real frames.

    Returns ``utterance_id -> (score, alignment)``. Batch norm runs on its
    running statistics; the decoder pre-net keeps its dropout.
    """
    was_training = model.training
    model.eval()
    out = {}
    try:
        for rec in records:
            batch = pad_batch([rec], model.r)
            rng = np.random.default_rng(seed)
            memory, mask = model.encode_text(batch.text_ids, batch.text_lengths, rng)
            targets = batch.linear if model.variant == "vanilla" else batch.mel
            _, align = model.decode_teacher_forced(memory, mask, targets, rng)
            steps = -(-rec.n_frames // model.r)
            a = align[0, :steps]
            out[rec.utterance_id] = (monotonicity_score(a), a)
    finally:
        model.train(was_training)
    return out


def mean_alignment_score(model: SpeechModel, records: Sequence[FeatureRecord], seed: int = 0) -> float:
    scores = alignment_scores(model, records, seed)
    return float(np.mean([s for s, _ in scores.values()]))
