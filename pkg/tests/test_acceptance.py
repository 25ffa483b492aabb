"""Acceptance criteria 1-8, each reported as one PASS/FAIL line.

Criteria 4, 5 and 8 share one desk-scale training run on the reference
synthetic corpus (20 speakers x 20 utterances, seed 7) with every default
left untouched. That fixture alone takes on the order of 17 minutes on one
CPU core.
"""

import time

import numpy as np
import pytest

from vocalstyle import cli
from vocalstyle.analysis import estimate_f0, programmed_contour
from vocalstyle.audio import (CorpusConfig, SyntheticSpeakerSpec, Waveform, build_corpus,
                              synth_utterance)
from vocalstyle.frontend import FramingConfig, FrontendConfig
from vocalstyle.pipeline import evaluate_condition
from vocalstyle.style_encoder import ModelConfig, StyleEncoderModel, attend, combine
from vocalstyle.trainer import TrainConfig, Triplet, batch_loss_and_grads, train_loop
from vocalstyle.verification import (compute_eer, compute_min_dcf, compute_tmr_at_fmr,
                                     sweep_det)

from conftest import ACCEPTANCE_LINES
from oracles import (central_difference, eer_from_grid, min_dcf_from_grid, relative_error,
                     scan_grid, tmr_from_grid)

TRIAL_SEEDS = (0, 1, 2, 3, 4)


def verdict(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# -- 1. metric oracle equivalence ----------------------------------------------

def test_criterion_1_metric_oracle_equivalence():
    rng = np.random.default_rng(2024)
    worst = 0.0
    system_seconds = 0.0
    start = time.perf_counter()
    for i in range(100):
        n_gen = int(rng.integers(5, 300))
        n_imp = int(rng.integers(5, 1000 - n_gen))
        gen = rng.normal(rng.uniform(0.5, 3.0), 1.0, n_gen)
        imp = rng.normal(0.0, 1.0, n_imp)
        if i % 3 == 0:  # coarse quantization forces tied scores
            gen, imp = np.round(gen, 1), np.round(imp, 1)
        t0 = time.perf_counter()
        det = sweep_det((gen, imp))
        got = (compute_eer(det), compute_tmr_at_fmr(det), compute_min_dcf(det)[0])
        system_seconds += time.perf_counter() - t0
        grid = scan_grid(gen, imp)
        want = (eer_from_grid(grid), tmr_from_grid(grid), min_dcf_from_grid(grid)[0])
        worst = max(worst, *(abs(a - b) for a, b in zip(got, want)))
    total = time.perf_counter() - start
    ok = worst <= 1e-9 and total < 10.0
    verdict(1, ok, f"max |metric - oracle| = {worst:.2e} over 100 sets; "
                   f"{total:.2f} s total ({system_seconds:.2f} s in the toolkit)")
    assert ok


# -- 2. gradient correctness ---------------------------------------------------

MINIATURE = ModelConfig(
    frontend=FrontendConfig(FramingConfig(16, 8), kernels=(3, 3), channels=(4, 4)),
    ref_channels=(2, 2), hidden=8, n_tokens=4)
GROUPS = {"frontend conv": "frontend.", "ref-encoder conv": "ref.conv",
          "GRU": "ref.gru", "token bank": "tokens"}


def test_criterion_2_gradient_correctness():
    start = time.perf_counter()
    model = StyleEncoderModel(MINIATURE, seed=0)
    rng = np.random.default_rng(1)
    for name, p in model.params.items():
        p += rng.normal(0.0, 0.3, p.shape)  # leave the near-symmetric initialization
    signals = {u: rng.normal(0.0, 0.5, 400) for u in ("a1", "a2", "b1", "b2")}
    triplets = [Triplet("a1", "a2", "b1"), Triplet("b2", "b1", "a2"), Triplet("a2", "a1", "b2")]
    margin = 2.5  # every hinge stays active, so the loss is smooth around the point
    _, analytic = batch_loss_and_grads(model, triplets, signals, margin)
    numeric = central_difference(
        lambda: batch_loss_and_grads(model, triplets, signals, margin)[0], model.params, 1e-5)
    errors = {}
    for group, prefix in GROUPS.items():
        names = [n for n in model.params if n.startswith(prefix)]
        assert names, group
        a = np.concatenate([analytic[n].ravel() for n in names])
        b = np.concatenate([numeric[n].ravel() for n in names])
        errors[group] = relative_error(a, b)
    seconds = time.perf_counter() - start
    ok = max(errors.values()) < 1e-4 and seconds < 60.0
    detail = ", ".join(f"{g} {e:.1e}" for g, e in errors.items())
    verdict(2, ok, f"relative errors: {detail}; {seconds:.1f} s")
    assert ok


# -- 3. attention invariants ---------------------------------------------------

def test_criterion_3_attention_invariants():
    rng = np.random.default_rng(3)
    worst_sum, worst_neg, worst_hull = 0.0, 0.0, 0.0
    for _ in range(10_000):
        dim = int(rng.integers(2, 129))
        scale = 10.0 ** rng.uniform(-3, 2)
        bank = rng.normal(0.0, scale, (10, dim))
        ref = rng.normal(0.0, 10.0 ** rng.uniform(-3, 2), dim)
        w = attend(ref, bank).w
        worst_sum = max(worst_sum, abs(w.sum() - 1.0))
        worst_neg = min(worst_neg, w.min())
        out = combine(w, bank)
        keys = np.tanh(bank)
        excess = max(np.max(keys.min(0) - out), np.max(out - keys.max(0)), 0.0)
        worst_hull = max(worst_hull, excess)
    ok = worst_sum <= 1e-9 and worst_neg >= 0.0 and worst_hull <= 1e-12
    verdict(3, ok, f"10^4 draws: max |sum-1| {worst_sum:.1e}, min weight {worst_neg:.1e}, "
                   f"max hull excess {worst_hull:.1e}")
    assert ok


# -- desk-scale training run shared by 4, 5 and 8 -------------------------------

@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    manifest = build_corpus(20, 20, 7, root, CorpusConfig())
    start = time.perf_counter()
    model, _, history = train_loop(TrainConfig(), manifest, root, ModelConfig())
    seconds = time.perf_counter() - start
    results = {cond: evaluate_condition(model, manifest, root, cond, TRIAL_SEEDS)
               for cond in ("clean", "degraded")}
    return {"seconds": seconds, "history": history, "results": results}


def _mean_distances(embeddings, speaker_of):
    ids = sorted(embeddings)
    x = np.array([embeddings[u] for u in ids])
    labels = np.array([speaker_of[u] for u in ids])
    d = 1.0 - x @ x.T
    same = labels[:, None] == labels[None, :]
    off_diag = ~np.eye(len(ids), dtype=bool)
    return d[same & off_diag].mean(), d[~same].mean()


@pytest.mark.slow
def test_criterion_4_desk_scale_discrimination(desk_run):
    results, style, speaker_of = desk_run["results"]["clean"]
    eer = results[0].eer["deeptalk"]
    intra, inter = _mean_distances(style, speaker_of)
    minutes = desk_run["seconds"] / 60.0
    ok = eer <= 0.10 and intra < inter and minutes < 30.0
    verdict(4, ok, f"clean eval EER {eer:.2%} (target <= 10%); cosine distance intra "
                   f"{intra:.3f} vs inter {inter:.3f}; training {minutes:.1f} min")
    assert ok


@pytest.mark.slow
def test_training_curve_halves(desk_run):
    means = desk_run["history"].epoch_means()
    first, last = means[1], means[max(means)]
    ok = last < 0.5 * first
    line = (f"loss curve: {'PASS' if ok else 'FAIL'}  epoch {max(means)} mean loss {last:.4f} "
            f"vs epoch 1 {first:.4f} (target < 50%)")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok


@pytest.mark.slow
def test_criterion_5_fusion_benefit(desk_run):
    results = desk_run["results"]["degraded"][0]
    wins = 0
    parts = []
    for r in results:
        bound = min(r.eer["deeptalk"], r.eer["frontend"]) + 0.01
        wins += r.eer["fused"] <= bound
        parts.append(f"seed {r.trial_seed}: fused {r.eer['fused']:.3f} vs "
                     f"min {bound - 0.01:.3f}")
    ok = wins >= 4
    verdict(5, ok, f"{wins}/5 trial seeds within 1 pp ({'; '.join(parts)})")
    assert ok


# -- 6. F0 fidelity ------------------------------------------------------------

def test_criterion_6_f0_fidelity():
    t = np.arange(8000) / 8000
    worst = 0.0
    for f in np.arange(80.0, 391.0, 10.0):
        contour = estimate_f0(Waveform(0.5 * np.sin(2 * np.pi * f * t)))
        voiced = contour.f0[contour.voiced]
        worst = max(worst, float(np.max(np.abs(voiced - f))))
    spec = SyntheticSpeakerSpec("spk", base_f0=140.0, declination_slope=-10.0,
                                vibrato_rate=4.0, vibrato_depth=15.0,
                                formants=((700.0, 90.0), (1200.0, 110.0), (2600.0, 160.0)),
                                jitter=0.0, noise_floor=0.002)
    w = synth_utterance(spec, 3.0, seed=0)
    est = estimate_f0(w)
    ref = programmed_contour(spec, len(w.samples))
    both = est.voiced & ref.voiced
    r = float(np.corrcoef(est.f0[both], ref.f0[both])[0, 1])
    ok = worst <= 2.0 and r >= 0.9
    verdict(6, ok, f"max tone error {worst:.2f} Hz over 80-390 Hz; contour r = {r:.3f}")
    assert ok


# -- 7. determinism ------------------------------------------------------------

def _pipeline(root):
    corpus, run = root / "corpus", root / "run"
    common = ["--seed", "3", "--deterministic"]
    steps = [
        ["synth-corpus", "--speakers", "6", "--utts", "4", "--duration", "1.0",
         "--out-dir", corpus],
        ["train", "--corpus", corpus, "--epochs", "3", "--out-dir", run],
        ["embed", "--checkpoint", run / "checkpoint.ckpt", "--corpus", corpus,
         "--out-dir", run],
        ["score", "--embeddings", run / "embeddings.tsv", "--trials", run / "trials.tsv",
         "--out-dir", run],
        ["evaluate", "--scores", run / "scores.tsv", "--trials", run / "trials.tsv",
         "--out-dir", run],
    ]
    for argv in steps:
        code = cli.main([str(a) for a in argv[:1] + common + argv[1:]])
        assert code == 0, argv[0]
    names = ["checkpoint.ckpt", "embeddings.tsv", "scores.tsv", "report.tsv", "det.tsv"]
    return {n: (run / n).read_bytes() for n in names}


def test_criterion_7_determinism(tmp_path):
    first = _pipeline(tmp_path / "a")
    second = _pipeline(tmp_path / "b")
    differing = [n for n in first if first[n] != second[n]]
    ok = not differing
    verdict(7, ok, f"{len(first)} artifacts compared byte for byte"
                   + (f"; differing: {', '.join(differing)}" if differing else ", all identical"))
    assert ok


# -- 8. degradation ordering -----------------------------------------------------

@pytest.mark.slow
def test_criterion_8_degradation_ordering(desk_run):
    clean = desk_run["results"]["clean"][0]
    degraded = desk_run["results"]["degraded"][0]
    pairs = [(c.eer["deeptalk"], d.eer["deeptalk"]) for c, d in zip(clean, degraded)]
    ok = all(d >= c for c, d in pairs)
    detail = "; ".join(f"seed {s}: {d:.3f} >= {c:.3f}" for s, (c, d) in zip(TRIAL_SEEDS, pairs))
    verdict(8, ok, f"degraded vs clean deeptalk EER ({detail})")
    assert ok
