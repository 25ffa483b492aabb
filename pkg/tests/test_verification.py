import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vocalstyle.verification import (DcfConfig, ScoreSet, Trial, compute_eer, compute_min_dcf,
                                     compute_tmr_at_fmr, cosine_score, evaluate, fuse,
                                     fuse_normalized, make_trials, read_report, read_scores,
                                     read_trials, report_from_scores, score_trials, sweep_det,
                                     write_det, write_report, write_scores, write_trials, znorm)

from oracles import (brute_force_eer, brute_force_grid, brute_force_min_dcf, brute_force_rates,
                     brute_force_tmr, scan_grid)


def score_set(genuine, impostor, system_id="sys"):
    trials = [Trial(f"g{i}a", f"g{i}b", True) for i in range(len(genuine))]
    trials += [Trial(f"i{i}a", f"i{i}b", False) for i in range(len(impostor))]
    return ScoreSet(trials, np.concatenate([genuine, impostor]).astype(float), system_id)


def random_scores(rng, n_gen, n_imp, ties=False):
    gen = rng.normal(1.0, 1.0, n_gen)
    imp = rng.normal(0.0, 1.0, n_imp)
    if ties:
        gen, imp = np.round(gen, 1), np.round(imp, 1)
    return gen, imp


# -- cosine and DET ------------------------------------------------------------

def test_cosine_score_examples():
    e = np.array([0.6, 0.8])
    assert cosine_score(e, e) == pytest.approx(1.0)
    assert cosine_score(e, -e) == pytest.approx(-1.0)
    assert cosine_score(e, np.array([-0.8, 0.6])) == pytest.approx(0.0)


def test_separated_scores_have_error_free_threshold():
    det = sweep_det(([0.9, 0.8], [0.1, 0.2]))
    assert any(a == 0 and b == 0 for a, b in zip(det.fmr, det.fnmr))


def test_all_equal_scores_give_only_endpoints():
    det = sweep_det(([0.3, 0.3], [0.3, 0.3, 0.3]))
    assert sorted(zip(det.fmr.tolist(), det.fnmr.tolist())) == [(0.0, 1.0), (1.0, 0.0)]


@pytest.mark.parametrize("seed", range(5))
def test_sweep_matches_brute_force_recount(seed):
    gen, imp = random_scores(np.random.default_rng(seed), 25, 25, ties=seed % 2 == 0)
    det = sweep_det((gen, imp))
    for t, fmr, fnmr in det:
        assert (fmr, fnmr) == brute_force_rates(gen, imp, t)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30),
       st.lists(st.floats(-5, 5), min_size=1, max_size=30))
def test_det_is_monotone(gen, imp):
    det = sweep_det((gen, imp))
    assert np.all(np.diff(det.thresholds) > 0)
    assert np.all(np.diff(det.fmr) <= 0)
    assert np.all(np.diff(det.fnmr) >= 0)


# -- scalar metrics ------------------------------------------------------------

@pytest.mark.parametrize("gen, imp, expected", [
    ([0.9, 0.8, 0.7], [0.1, 0.2, 0.3], 0.0),
    ([0.8, 0.2], [0.7, 0.1], 0.5),
    ([0.5], [0.5], 0.5),
])
def test_eer_examples(gen, imp, expected):
    assert compute_eer(sweep_det((gen, imp))) == pytest.approx(expected, abs=1e-12)


def test_tmr_examples():
    assert compute_tmr_at_fmr(sweep_det(([0.9, 0.8], [0.1, 0.2]))) == 1.0
    assert compute_tmr_at_fmr(sweep_det(([0.4, 0.4], [0.4, 0.4]))) == 0.0


def test_tmr_on_200_impostors_matches_brute_force():
    gen, imp = random_scores(np.random.default_rng(11), 60, 200)
    assert compute_tmr_at_fmr(sweep_det((gen, imp))) == pytest.approx(
        brute_force_tmr(gen, imp), abs=1e-12)


def test_min_dcf_examples():
    assert compute_min_dcf(sweep_det(([0.9, 0.8], [0.1, 0.2]))) == (0.0, 0.0)
    raw, norm = compute_min_dcf(sweep_det(([0.1, 0.2], [0.9, 0.8])))
    # reversed scores: reject-all costs c_miss * p_tar = 0.1
    assert raw == pytest.approx(0.1) and norm == pytest.approx(1.0)


def test_min_dcf_random_100_matches_scan():
    gen, imp = random_scores(np.random.default_rng(3), 40, 60)
    raw, norm = compute_min_dcf(sweep_det((gen, imp)))
    ref_raw, ref_norm = brute_force_min_dcf(gen, imp)
    assert raw == pytest.approx(ref_raw, abs=1e-12)
    assert norm == pytest.approx(ref_norm, abs=1e-12)


def test_default_cost_normalizer():
    assert DcfConfig().default_cost == pytest.approx(0.1)
    with pytest.raises(ValueError):
        DcfConfig(p_tar=1.0)
    with pytest.raises(ValueError):
        DcfConfig(c_miss=0)


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=40),
       st.lists(st.floats(-3, 3), min_size=1, max_size=40))
def test_normalized_min_dcf_at_most_one(gen, imp):
    _, norm = compute_min_dcf(sweep_det((gen, imp)))
    assert 0.0 <= norm <= 1.0 + 1e-12


@settings(max_examples=50)
@given(st.integers(0, 10_000), st.integers(1, 60), st.integers(1, 60), st.booleans())
def test_metrics_match_oracles(seed, n_gen, n_imp, ties):
    gen, imp = random_scores(np.random.default_rng(seed), n_gen, n_imp, ties)
    det = sweep_det((gen, imp))
    assert compute_eer(det) == pytest.approx(brute_force_eer(gen, imp), abs=1e-9)
    assert compute_tmr_at_fmr(det) == pytest.approx(brute_force_tmr(gen, imp), abs=1e-9)
    assert compute_min_dcf(det)[0] == pytest.approx(brute_force_min_dcf(gen, imp)[0], abs=1e-9)


def test_report_fields_in_unit_interval_and_repeatable():
    gen, imp = random_scores(np.random.default_rng(5), 15, 15)
    s = score_set(gen, imp)
    r1, r2 = report_from_scores(s), report_from_scores(s)
    for key in ("eer", "tmr_at_fmr1", "min_dcf_normalized"):
        assert 0.0 <= r1.as_dict()[key] <= 1.0
    assert r1.as_dict() == r2.as_dict()
    assert r1.n_genuine == 15 and r1.n_impostor == 15


def test_evaluate_30_trials_matches_brute_force():
    rng = np.random.default_rng(8)
    emb = {f"u{i}": v / np.linalg.norm(v) for i, v in enumerate(rng.normal(size=(12, 5)))}
    ids = sorted(emb)
    trials = [Trial(ids[i], ids[j], bool(rng.integers(2)) if k > 1 else k == 0)
              for k, (i, j) in enumerate(zip(rng.integers(0, 6, 30), rng.integers(6, 12, 30)))]
    report = evaluate(emb, trials)
    scores = [float(emb[t.enroll] @ emb[t.test]) for t in trials]
    gen = [s for s, t in zip(scores, trials) if t.genuine]
    imp = [s for s, t in zip(scores, trials) if not t.genuine]
    assert report.eer == pytest.approx(brute_force_eer(gen, imp), abs=1e-9)
    assert report.tmr_at_fmr1 == pytest.approx(brute_force_tmr(gen, imp), abs=1e-9)
    assert report.min_dcf_normalized == pytest.approx(brute_force_min_dcf(gen, imp)[1], abs=1e-9)


def test_evaluate_names_missing_utterance():
    trials = [Trial("a", "b", True), Trial("a", "c", False)]
    with pytest.raises(KeyError, match="c"):
        evaluate({"a": np.ones(2), "b": np.ones(2)}, trials)


def test_types_validate():
    with pytest.raises(ValueError):
        Trial("x", "x", True)
    with pytest.raises(ValueError):
        ScoreSet([Trial("a", "b", True)], np.array([np.nan]))
    with pytest.raises(ValueError):
        sweep_det(([0.1], []))


# -- normalization and fusion --------------------------------------------------

def test_znorm_moments_rank_and_idempotence():
    gen, imp = random_scores(np.random.default_rng(2), 20, 20)
    s = score_set(gen, imp)
    z = znorm(s)
    assert z.scores.mean() == pytest.approx(0.0, abs=1e-12)
    assert z.scores.std() == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(np.argsort(z.scores), np.argsort(s.scores))
    assert np.allclose(znorm(z).scores, z.scores, atol=1e-12)


def test_znorm_rejects_constant_scores():
    with pytest.raises(ValueError):
        znorm(score_set([0.5, 0.5], [0.5]))


def test_fuse_examples():
    t = [Trial("a", "b", True)]
    s1, s2 = ScoreSet(t, np.array([0.4]), "s1"), ScoreSet(t, np.array([0.8]), "s2")
    assert fuse(s1, s2, 1, 3).scores[0] == pytest.approx(0.7)
    assert fuse(s1, s2, 1, 0).scores[0] == pytest.approx(0.4)
    assert fuse(s1, s1, 2, 2).scores[0] == pytest.approx(0.4)


def test_fuse_aligns_by_trial_key():
    t = [Trial("a", "b", True), Trial("c", "d", False)]
    s1 = ScoreSet(t, np.array([1.0, 2.0]))
    s2 = ScoreSet(t[::-1], np.array([20.0, 10.0]))
    assert np.allclose(fuse(s1, s2, 1, 1).scores, [5.5, 11.0])


def test_fuse_lists_unmatched_pairs():
    s1 = ScoreSet([Trial("a", "b", True), Trial("a", "c", False)], np.array([1.0, 0.0]))
    s2 = ScoreSet([Trial("a", "b", True), Trial("a", "z", False)], np.array([1.0, 0.0]))
    with pytest.raises(ValueError, match="a/z"):
        fuse(s1, s2)


@given(st.floats(0.01, 100), st.floats(0, 10), st.floats(0.01, 10))
def test_fusion_weight_scale_invariance(c, w1, w2):
    gen, imp = random_scores(np.random.default_rng(1), 5, 5)
    s1 = score_set(gen, imp)
    s2 = score_set(imp[::-1], gen)
    a = fuse(s1, s2, w1, w2).scores
    b = fuse(s1, s2, c * w1, c * w2).scores
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_fuse_normalized_standardizes_inputs():
    gen, imp = random_scores(np.random.default_rng(4), 10, 10)
    s1, s2 = score_set(gen, imp), score_set(100 * gen + 7, 100 * imp + 7)
    # identical up to an affine map, so fusing the z-scores returns the z-scores
    assert np.allclose(fuse_normalized(s1, s2).scores, znorm(s1).scores)


# -- trial lists and files -----------------------------------------------------

def test_make_trials_balanced_and_labelled():
    speaker_of = {f"s{s}_{u}": f"s{s}" for s in range(4) for u in range(3)}
    trials = make_trials(speaker_of, seed=0)
    gen = [t for t in trials if t.genuine]
    imp = [t for t in trials if not t.genuine]
    assert len(gen) == 4 * 3 and len(imp) == len(gen)
    assert all(speaker_of[t.enroll] == speaker_of[t.test] for t in gen)
    assert all(speaker_of[t.enroll] != speaker_of[t.test] for t in imp)
    assert make_trials(speaker_of, 0) == trials
    assert make_trials(speaker_of, 1) != trials


def test_file_round_trips(tmp_path):
    gen, imp = random_scores(np.random.default_rng(6), 6, 7)
    s = score_set(gen, imp, "deeptalk")
    write_trials(tmp_path / "trials.tsv", s.trials)
    trials = read_trials(tmp_path / "trials.tsv")
    assert trials == s.trials
    write_scores(tmp_path / "scores.tsv", s)
    back = read_scores(tmp_path / "scores.tsv", trials)
    assert np.array_equal(back.scores, s.scores) and back.system_id == "deeptalk"
    report = report_from_scores(s)
    write_report(tmp_path / "report.tsv", report)
    loaded = read_report(tmp_path / "report.tsv")
    assert loaded["eer"] == pytest.approx(report.eer, abs=0)
    write_det(tmp_path / "det.tsv", report.det)
    lines = (tmp_path / "det.tsv").read_text().splitlines()
    assert lines[0].split("\t") == ["threshold", "fmr", "fnmr"]
    assert len(lines) == len(report.det) + 1


def test_score_trials_uses_dot_product():
    emb = {"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0]), "c": np.array([1.0, 0.0])}
    s = score_trials([Trial("a", "b", False), Trial("a", "c", True)], emb, "x")
    assert s.scores.tolist() == [0.0, 1.0]


@pytest.mark.parametrize("seed", range(5))
def test_vectorized_scan_agrees_with_loop_oracle(seed):
    gen, imp = random_scores(np.random.default_rng(seed), 30, 40, ties=seed % 2 == 1)
    assert scan_grid(gen, imp) == brute_force_grid(gen, imp)
