"""Corpus-level helpers that chain the modules into an experiment."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import load_wav, utterance_id
from .style_encoder import frontend_embed
from .verification import (DcfConfig, fuse_normalized, make_trials, report_from_scores,
                           score_trials)

SYSTEMS = ("deeptalk", "frontend")


def load_split(manifest, corpus_dir, split="eval", condition="clean"):
    """``(signals, speaker_of)`` for one split/condition of a corpus."""
    signals, speaker_of = {}, {}
    for entry in manifest.select(split=split, condition=condition):
        uid = utterance_id(entry)
        signals[uid] = load_wav(Path(corpus_dir) / entry.path).samples
        speaker_of[uid] = entry.speaker_id
    return signals, speaker_of


def embed_signals(model, signals, system="deeptalk"):
    """Embeddings (float64) and, for the style system, attention weights."""
    vectors, weights = {}, {}
    for uid in sorted(signals):
        x = signals[uid].astype(model.dtype)
        if system == "deeptalk":
            e, w = model.forward(x)
            vectors[uid] = e.astype(np.float64)
            weights[uid] = w.astype(np.float64)
        elif system == "frontend":
            vectors[uid] = frontend_embed(x, model)
        else:
            raise ValueError(f"unknown system {system!r}; choose from {SYSTEMS}")
    return vectors, weights


@dataclass
class ConditionResult:
    condition: str
    trial_seed: int
    eer: dict
    reports: dict
    scores: dict


def evaluate_condition(model, manifest, corpus_dir, condition, trial_seeds=(0,),
                       weights=(1.0, 3.0), cfg=DcfConfig()):
    """Score the eval split with both systems and their fusion for each trial seed."""
    signals, speaker_of = load_split(manifest, corpus_dir, "eval", condition)
    style, _ = embed_signals(model, signals, "deeptalk")
    fb, _ = embed_signals(model, signals, "frontend")
    out = []
    for seed in trial_seeds:
        trials = make_trials(speaker_of, seed)
        s1 = score_trials(trials, style, "deeptalk")
        s2 = score_trials(trials, fb, "frontend")
        fused = fuse_normalized(s1, s2, *weights, system_id="fused")
        scores = {"deeptalk": s1, "frontend": s2, "fused": fused}
        reports = {k: report_from_scores(v, cfg) for k, v in scores.items()}
        out.append(ConditionResult(condition, seed, {k: r.eer for k, r in reports.items()},
                                   reports, scores))
    return out, style, speaker_of
