"""Trial scoring, DET sweep, EER / TMR@FMR / minDCF and score-level fusion."""

import csv
import itertools
from dataclasses import dataclass

import numpy as np

GENUINE, IMPOSTOR = "tgt", "non"


@dataclass(frozen=True)
class Trial:
    enroll: str
    test: str
    genuine: bool

    def __post_init__(self):
        if self.enroll == self.test:
            raise ValueError(f"trial compares utterance {self.enroll} with itself")

    @property
    def key(self):
        return (self.enroll, self.test)


@dataclass
class ScoreSet:
    trials: list
    scores: np.ndarray
    system_id: str = ""

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape != (len(self.trials),):
            raise ValueError("one score per trial is required")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")

    @property
    def labels(self):
        return np.array([t.genuine for t in self.trials], dtype=bool)

    def split(self):
        """Genuine and impostor score arrays."""
        lab = self.labels
        return self.scores[lab], self.scores[~lab]


@dataclass(frozen=True)
class DcfConfig:
    p_tar: float = 0.01
    c_miss: float = 10.0
    c_fa: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.p_tar < 1.0:
            raise ValueError("p_tar must lie in (0, 1)")
        if self.c_miss <= 0 or self.c_fa <= 0:
            raise ValueError("detection costs must be positive")

    @property
    def default_cost(self):
        return min(self.c_miss * self.p_tar, self.c_fa * (1.0 - self.p_tar))


@dataclass
class DetCurve:
    """Operating points ordered by increasing threshold (accept iff score >= t)."""

    thresholds: np.ndarray
    fmr: np.ndarray
    fnmr: np.ndarray

    def __iter__(self):
        return iter(zip(self.thresholds.tolist(), self.fmr.tolist(), self.fnmr.tolist()))

    def __len__(self):
        return self.thresholds.size


@dataclass
class VerificationReport:
    det: DetCurve
    eer: float
    tmr_at_fmr1: float
    min_dcf: float
    min_dcf_normalized: float
    n_genuine: int
    n_impostor: int

    def as_dict(self):
        return {
            "eer": self.eer,
            "tmr_at_fmr1": self.tmr_at_fmr1,
            "min_dcf": self.min_dcf,
            "min_dcf_normalized": self.min_dcf_normalized,
            "n_genuine": self.n_genuine,
            "n_impostor": self.n_impostor,
        }


def cosine_score(e1, e2):
    """Dot product of unit-norm embeddings (accepts raw vectors or embedding objects)."""
    v1 = getattr(e1, "vector", e1)
    v2 = getattr(e2, "vector", e2)
    return float(np.dot(v1, v2))


def sweep_det(scores):
    """Exact DET sweep over every distinct score plus -inf/+inf sentinels.

    ``scores`` is a :class:`ScoreSet` or a ``(genuine, impostor)`` pair.
    Consecutive thresholds with identical error rates are collapsed onto the
    lowest one.
    """
    genuine, impostor = scores.split() if isinstance(scores, ScoreSet) else scores
    genuine = np.sort(np.asarray(genuine, dtype=np.float64))
    impostor = np.sort(np.asarray(impostor, dtype=np.float64))
    if genuine.size == 0 or impostor.size == 0:
        raise ValueError("need at least one genuine and one impostor score")
    thresholds = np.concatenate(([-np.inf], np.unique(np.concatenate((genuine, impostor))), [np.inf]))
    fmr = (impostor.size - np.searchsorted(impostor, thresholds, side="left")) / impostor.size
    fnmr = np.searchsorted(genuine, thresholds, side="left") / genuine.size
    keep = np.ones(thresholds.size, dtype=bool)
    keep[1:] = (fmr[1:] != fmr[:-1]) | (fnmr[1:] != fnmr[:-1])
    return DetCurve(thresholds[keep], fmr[keep], fnmr[keep])


def compute_eer(det):
    """Error rate where FMR meets FNMR, interpolated linearly between the
    two DET points that straddle the crossing."""
    diff = det.fnmr - det.fmr
    i = int(np.argmax(diff >= 0))
    if i == 0:
        return float(det.fmr[0])
    d0, d1 = diff[i - 1], diff[i]
    frac = d0 / (d0 - d1)
    return float(det.fmr[i - 1] + frac * (det.fmr[i] - det.fmr[i - 1]))


def compute_tmr_at_fmr(det, fmr_target=0.01):
    """Best true match rate among operating points with FMR <= target."""
    ok = det.fmr <= fmr_target
    return float(np.max(1.0 - det.fnmr[ok]))


def compute_min_dcf(det, cfg=DcfConfig()):
    """Minimum detection cost over the DET grid, raw and normalized."""
    dcf = cfg.c_miss * cfg.p_tar * det.fnmr + cfg.c_fa * (1.0 - cfg.p_tar) * det.fmr
    raw = float(np.min(dcf))
    return raw, raw / cfg.default_cost


def report_from_scores(scores, cfg=DcfConfig()):
    det = sweep_det(scores)
    raw, norm = compute_min_dcf(det, cfg)
    gen, imp = scores.split() if isinstance(scores, ScoreSet) else scores
    return VerificationReport(det, compute_eer(det), compute_tmr_at_fmr(det, 0.01), raw, norm,
                              len(gen), len(imp))


def znorm(s):
    """Standardize a score set by its own mean and population deviation."""
    std = float(np.std(s.scores))
    if s.scores.size < 2 or std == 0.0:
        raise ValueError("z-normalization needs at least two distinct scores")
    return ScoreSet(list(s.trials), (s.scores - s.scores.mean()) / std, s.system_id)


def fuse(s1, s2, w1=1.0, w2=3.0, system_id=None):
    """Weighted mean ``(w1*s1 + w2*s2) / (w1 + w2)`` over trials matched by key.

    Inputs are used as given; z-normalize them first when the systems'
    score scales differ.
    """
    if w1 < 0 or w2 < 0 or w1 + w2 <= 0:
        raise ValueError("fusion weights must be non-negative with a positive sum")
    idx2 = {t.key: i for i, t in enumerate(s2.trials)}
    keys1 = {t.key for t in s1.trials}
    missing = sorted((keys1 - idx2.keys()) | (idx2.keys() - keys1))
    if missing:
        shown = ", ".join(f"{e}/{t}" for e, t in missing[:10])
        raise ValueError(f"trial lists differ; {len(missing)} unmatched pairs: {shown}")
    order = np.array([idx2[t.key] for t in s1.trials], dtype=int)
    fused = (w1 * s1.scores + w2 * s2.scores[order]) / (w1 + w2)
    name = system_id or f"fused({s1.system_id}:{s2.system_id})"
    return ScoreSet(list(s1.trials), fused, name)


def fuse_normalized(s1, s2, w1=1.0, w2=3.0, system_id=None):
    return fuse(znorm(s1), znorm(s2), w1, w2, system_id)


def make_trials(speaker_of, seed=0):
    """All same-speaker pairs plus an equal number of seeded impostor pairs."""
    uids = sorted(speaker_of)
    genuine = [Trial(a, b, True) for a, b in itertools.combinations(uids, 2)
               if speaker_of[a] == speaker_of[b]]
    impostor_pairs = [(a, b) for a, b in itertools.combinations(uids, 2)
                      if speaker_of[a] != speaker_of[b]]
    rng = np.random.default_rng(seed)
    n = min(len(genuine), len(impostor_pairs))
    pick = np.sort(rng.choice(len(impostor_pairs), n, replace=False))
    impostors = [Trial(*impostor_pairs[i], False) for i in pick]
    return genuine + impostors


def score_trials(trials, embeddings, system_id=""):
    """Cosine-score every trial; ``embeddings`` maps utterance id to vector."""
    scores = []
    for t in trials:
        for uid in (t.enroll, t.test):
            if uid not in embeddings:
                raise KeyError(f"missing embedding for utterance {uid}")
        scores.append(cosine_score(embeddings[t.enroll], embeddings[t.test]))
    return ScoreSet(list(trials), np.array(scores), system_id)


def evaluate(embeddings, trials, cfg=DcfConfig(), system_id=""):
    """Score ``trials`` with ``embeddings`` and compute the full report."""
    return report_from_scores(score_trials(trials, embeddings, system_id), cfg)


# -- file formats -------------------------------------------------------------

def write_trials(path, trials):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        for t in trials:
            w.writerow((t.enroll, t.test, GENUINE if t.genuine else IMPOSTOR))


def read_trials(path):
    trials = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3 or parts[2] not in (GENUINE, IMPOSTOR):
                raise ValueError(f"{path}:{n}: expected enroll, test, tgt|non")
            trials.append(Trial(parts[0], parts[1], parts[2] == GENUINE))
    return trials


def write_scores(path, s):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        for t, score in zip(s.trials, s.scores):
            w.writerow((t.enroll, t.test, repr(float(score)), s.system_id))


def read_scores(path, trials=None):
    """Read a score file; labels come from ``trials`` (matched by key)."""
    labels = {t.key: t.genuine for t in trials} if trials is not None else {}
    rows, system_id = [], ""
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{n}: expected enroll, test, score, system_id")
            enroll, test, score, system_id = parts
            if trials is not None and (enroll, test) not in labels:
                raise ValueError(f"{path}:{n}: trial {enroll}/{test} not in trial list")
            rows.append((Trial(enroll, test, labels.get((enroll, test), False)), float(score)))
    return ScoreSet([r[0] for r in rows], np.array([r[1] for r in rows]), system_id)


def write_report(path, report):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in report.as_dict().items():
            fh.write(f"{key}\t{value!r}\n")


def read_report(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip() and not line.startswith("#"):
                key, value = line.rstrip("\n").split("\t")
                out[key] = float(value)
    return out


def write_det(path, det):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("threshold\tfmr\tfnmr\n")
        for thr, fmr, fnmr in det:
            fh.write(f"{thr!r}\t{fmr!r}\t{fnmr!r}\n")
