"""Spectrogram and F0 analysis, embedding distance statistics, 2D projection."""

from dataclasses import dataclass

import numpy as np

from .audio import F0_LIMITS, SAMPLE_RATE

SPEC_WINDOW = 200
SPEC_HOP = 80
SPEC_NFFT = 256
DB_FLOOR = -80.0

F0_WINDOW = 320
F0_HOP = 80


@dataclass
class Spectrogram:
    magnitudes: np.ndarray  # (frames, bins), dB
    times: np.ndarray
    freqs: np.ndarray


@dataclass
class F0Contour:
    times: np.ndarray
    f0: np.ndarray  # Hz, NaN where unvoiced
    periodicity: np.ndarray

    @property
    def voiced(self):
        return ~np.isnan(self.f0)

    def __len__(self):
        return self.f0.size


@dataclass
class DistanceReport:
    speakers: list
    intra: np.ndarray  # per-speaker mean intra-speaker distance
    inter: np.ndarray  # per-speaker mean distance to other speakers
    separation: np.ndarray
    grand_intra: float
    grand_inter: float


def _frames(x, window, hop):
    if x.size < window:
        raise ValueError(f"signal of {x.size} samples shorter than one {window}-sample window")
    count = (x.size - window) // hop + 1
    return np.lib.stride_tricks.sliding_window_view(x, window)[::hop][:count]


def _samples(w):
    return np.asarray(getattr(w, "samples", w), dtype=np.float64)


def stft_magnitude(w, window=SPEC_WINDOW, hop=SPEC_HOP, nfft=SPEC_NFFT):
    """Linear magnitudes of the Hann-windowed, zero-padded short-time transform."""
    frames = _frames(_samples(w), window, hop) * np.hanning(window)
    return np.abs(np.fft.rfft(frames, n=nfft, axis=1))


def spectrogram(w, window=SPEC_WINDOW, hop=SPEC_HOP, nfft=SPEC_NFFT):
    """Log-magnitude spectrogram in dB with a floor of -80 dB."""
    mag = stft_magnitude(w, window, hop, nfft)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag)
    db = np.maximum(db, DB_FLOOR)
    times = (np.arange(mag.shape[0]) * hop + window / 2) / SAMPLE_RATE
    freqs = np.fft.rfftfreq(nfft, 1.0 / SAMPLE_RATE)
    return Spectrogram(db, times, freqs)


def nccf(frames, max_lag):
    """Normalized cross-correlation of each frame with its lagged self.

    Entry ``[t, k]`` correlates ``x[:N-k]`` with ``x[k:]`` of frame ``t``.
    """
    n = frames.shape[1]
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(frames, nfft, axis=1)
    ac = np.fft.irfft(spec * np.conj(spec), nfft, axis=1)[:, :max_lag + 1]
    sq = np.cumsum(np.square(frames), axis=1)
    total = sq[:, -1:]
    lags = np.arange(max_lag + 1)
    head = np.concatenate((total, sq[:, n - 1 - lags[1:]]), axis=1)  # sum of x[:N-k]^2
    tail = total - np.concatenate((np.zeros_like(total), sq[:, lags[1:] - 1]), axis=1)
    denom = np.sqrt(head * tail)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 0, ac / denom, 0.0)
    return r


def estimate_f0(w, fmin=F0_LIMITS[0], fmax=F0_LIMITS[1], window=F0_WINDOW, hop=F0_HOP,
                voicing_threshold=0.5, energy_floor=1e-6):
    """Autocorrelation pitch tracker (40 ms frames, 10 ms hop).

    The lag search covers ``[fs/fmax, fs/fmin]``; the chosen peak is the
    shortest-lag local maximum within 10% of the best one, refined by
    parabolic interpolation. Frames with periodicity below
    ``voicing_threshold`` or mean-square energy below ``energy_floor`` are
    unvoiced.
    """
    frames = _frames(_samples(w), window, hop)
    lag_min = int(np.floor(SAMPLE_RATE / fmax))
    lag_max = int(np.ceil(SAMPLE_RATE / fmin))
    r = nccf(frames, lag_max + 1)
    energy = np.mean(np.square(frames), axis=1)
    f0 = np.full(frames.shape[0], np.nan)
    periodicity = np.zeros(frames.shape[0])
    for t in range(frames.shape[0]):
        if energy[t] < energy_floor:
            continue
        seg = r[t, lag_min:lag_max + 1]
        inner = np.arange(1, seg.size - 1)
        peaks = inner[(seg[inner] >= seg[inner - 1]) & (seg[inner] > seg[inner + 1])]
        if peaks.size == 0:
            continue
        best = seg[peaks].max()
        k = peaks[np.argmax(seg[peaks] >= 0.9 * best)]
        periodicity[t] = float(np.clip(seg[k], 0.0, 1.0))
        if seg[k] < voicing_threshold:
            continue
        y0, y1, y2 = seg[k - 1], seg[k], seg[k + 1]
        curv = y0 - 2 * y1 + y2
        delta = 0.5 * (y0 - y2) / curv if curv < 0 else 0.0
        freq = SAMPLE_RATE / (lag_min + k + delta)
        if fmin <= freq <= fmax:
            f0[t] = freq
    times = (np.arange(frames.shape[0]) * hop + window / 2) / SAMPLE_RATE
    return F0Contour(times, f0, periodicity)


def programmed_contour(spec, n_samples, window=F0_WINDOW, hop=F0_HOP):
    """Sample a synthetic speaker's programmed F0 on the tracker's frame grid."""
    count = (n_samples - window) // hop + 1
    times = (np.arange(count) * hop + window / 2) / SAMPLE_RATE
    return F0Contour(times, spec.f0_at(times), np.ones(count))


def f0_similarity(c1, c2):
    """Pearson correlation over mutually voiced frames and the voiced overlap.

    Contours are cropped to the shorter one.
    """
    n = min(len(c1), len(c2))
    v1, v2 = c1.voiced[:n], c2.voiced[:n]
    both = v1 & v2
    if both.sum() < 4:
        raise ValueError("insufficient voiced overlap")
    a, b = c1.f0[:n][both], c2.f0[:n][both]
    if np.std(a) == 0 or np.std(b) == 0:
        r = 1.0 if np.allclose(a - a.mean(), b - b.mean()) else 0.0
    else:
        r = float(np.corrcoef(a, b)[0, 1])
    return {"pearson_r": r, "voiced_overlap": float(both.sum() / (v1 | v2).sum())}


def distance_report(groups):
    """Euclidean intra- and inter-speaker distances.

    ``groups`` maps speaker id to a sequence of embedding vectors.
    """
    speakers = sorted(groups)
    if len(speakers) < 2:
        raise ValueError("distance report needs at least two speakers")
    mats = {s: np.atleast_2d(np.asarray(groups[s], dtype=np.float64)) for s in speakers}
    for s in speakers:
        if mats[s].shape[0] < 2:
            raise ValueError(f"speaker {s} has fewer than two embeddings")

    def pdist(a, b):
        return np.sqrt(np.maximum(
            np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2 * a @ b.T, 0.0))

    intra, inter = [], []
    intra_all, inter_sum, inter_count = [], 0.0, 0
    for i, s in enumerate(speakers):
        x = mats[s]
        iu = np.triu_indices(x.shape[0], 1)
        d_in = pdist(x, x)[iu]
        intra.append(d_in.mean())
        intra_all.append(d_in)
        others = np.vstack([mats[o] for o in speakers if o != s])
        inter.append(pdist(x, others).mean())
        for o in speakers[i + 1:]:
            d = pdist(x, mats[o])
            inter_sum += d.sum()
            inter_count += d.size
    intra, inter = np.array(intra), np.array(inter)
    scale = np.maximum(intra, inter)
    with np.errstate(invalid="ignore", divide="ignore"):
        sep = np.where(scale > 0, (inter - intra) / scale, 0.0)
    return DistanceReport(speakers, intra, inter, sep,
                          float(np.concatenate(intra_all).mean()), inter_sum / inter_count)


def project_2d(embeddings):
    """Top-2 principal-direction coordinates, one row per embedding.

    Each axis is signed so that its largest-magnitude coordinate is positive.
    """
    x = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if x.shape[0] < 3:
        raise ValueError("projection needs at least three embeddings")
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    coords = np.zeros((x.shape[0], 2))
    k = min(2, vt.shape[0])
    coords[:, :k] = centered @ vt[:k].T
    for j in range(2):
        col = coords[:, j]
        i = int(np.argmax(np.abs(col)))
        if col[i] < 0:
            coords[:, j] = -col
    return coords


# -- exports ------------------------------------------------------------------

def write_spectrogram_tsv(path, spec):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("time\t" + "\t".join(f"{f:g}" for f in spec.freqs) + "\n")
        for t, row in zip(spec.times, spec.magnitudes):
            fh.write(f"{t:.4f}\t" + "\t".join(f"{v:.3f}" for v in row) + "\n")


def write_f0_tsv(path, contour):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("time\tf0\tperiodicity\n")
        for t, f, p in zip(contour.times, contour.f0, contour.periodicity):
            fh.write(f"{t:.4f}\t{'unvoiced' if np.isnan(f) else f'{f:.3f}'}\t{p:.4f}\n")


def write_projection_tsv(path, ids, coords, labels=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("utterance\tspeaker\tx\ty\n")
        for i, uid in enumerate(ids):
            lab = labels[i] if labels is not None else ""
            fh.write(f"{uid}\t{lab}\t{coords[i, 0]!r}\t{coords[i, 1]!r}\n")


def write_distance_report(path, report):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"grand_intra\t{report.grand_intra!r}\ngrand_inter\t{report.grand_inter!r}\n")
        fh.write("speaker\tintra\tinter\tseparation\n")
        for row in zip(report.speakers, report.intra, report.inter, report.separation):
            fh.write("\t".join([row[0]] + [repr(float(v)) for v in row[1:]]) + "\n")


def render_spectrogram(path, spec, contour=None):
    """Heat map of ``spec`` with the F0 track drawn on top (PNG/PDF by suffix)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 4))
    ax.imshow(spec.magnitudes.T, origin="lower", aspect="auto", cmap="magma",
              extent=(spec.times[0], spec.times[-1], spec.freqs[0], spec.freqs[-1]))
    if contour is not None:
        ax.plot(contour.times, contour.f0, color="cyan", lw=1.5, label="F0")
        ax.legend(loc="upper right")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("frequency (Hz)")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
