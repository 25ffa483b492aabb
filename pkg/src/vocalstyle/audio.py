"""Waveform I/O, chunking, noise degradation and the synthetic speaker corpus."""

import csv
import logging
import os
import wave
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

logger = logging.getLogger(__name__)

SAMPLE_RATE = 8000
F0_LIMITS = (50.0, 400.0)
MANIFEST_COLUMNS = ("path", "speaker_id", "split", "condition")


@dataclass(frozen=True)
class Waveform:
    """Mono 8 kHz signal with amplitudes nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    source_id: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("waveform must be one-dimensional")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"unsupported sample rate {self.sample_rate} (need {SAMPLE_RATE})")
        if samples.size == 0:
            raise ValueError("waveform is empty")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


def load_wav(path):
    """Read a 16-bit PCM mono 8 kHz WAV file.

    Samples are divided by 32768, so full scale maps to [-1, 1).
    """
    path = Path(path)
    with wave.open(str(path), "rb") as fh:
        if fh.getframerate() != SAMPLE_RATE:
            raise ValueError(f"{path}: unsupported sample rate {fh.getframerate()} Hz")
        if fh.getnchannels() != 1:
            raise ValueError(f"{path}: unsupported channel count {fh.getnchannels()}")
        if fh.getsampwidth() != 2:
            raise ValueError(f"{path}: unsupported bit depth {8 * fh.getsampwidth()}")
        raw = fh.readframes(fh.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0, SAMPLE_RATE, path.stem)


def save_wav(path, w):
    """Write ``w`` as 16-bit PCM; values are clipped to the int16 range."""
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())


def split_into_chunks(w, chunk_seconds=5.0):
    """Cut ``w`` into consecutive non-overlapping chunks.

    A trailing remainder shorter than one chunk is dropped.
    """
    if chunk_seconds <= 0:
        raise ValueError("chunk_seconds must be positive")
    size = int(round(chunk_seconds * w.sample_rate))
    count = len(w) // size
    return [
        Waveform(w.samples[i * size:(i + 1) * size], w.sample_rate, f"{w.source_id}#{i}")
        for i in range(count)
    ]


def signal_power(x):
    return float(np.mean(np.square(x)))


def mix_noise_at_snr(signal, noise, snr_db, seed=0):
    """Add ``noise`` to ``signal`` at the requested SNR.

    A signal-length segment of ``noise`` is taken from a seeded random
    offset and scaled so that the mean-square power ratio over the whole
    segment equals ``snr_db``. The mixture is not renormalized.
    """
    n = len(signal)
    if len(noise) < n:
        raise ValueError(f"noise ({len(noise)} samples) shorter than signal ({n})")
    rng = np.random.default_rng(seed)
    offset = int(rng.integers(0, len(noise) - n + 1))
    segment = noise.samples[offset:offset + n]
    p_sig = signal_power(signal.samples)
    p_noise = signal_power(segment)
    if p_sig == 0.0 or p_noise == 0.0:
        raise ValueError("degenerate power: signal or noise has zero energy")
    gain = np.sqrt(p_sig / (p_noise * 10.0 ** (snr_db / 10.0)))
    return Waveform(signal.samples + gain * segment, signal.sample_rate, signal.source_id)


# -- synthetic speakers -------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpeakerSpec:
    """Source-filter parameters standing in for one speaker's voice.

    ``formants`` is a tuple of three ``(center_hz, bandwidth_hz)`` pairs.
    """

    speaker_id: str
    base_f0: float
    declination_slope: float = 0.0
    vibrato_rate: float = 5.0
    vibrato_depth: float = 0.0
    formants: tuple = ((500.0, 80.0), (1500.0, 100.0), (2500.0, 120.0))
    jitter: float = 0.0
    noise_floor: float = 0.0

    def __post_init__(self):
        if not 80.0 <= self.base_f0 <= 300.0:
            raise ValueError(f"base_f0 {self.base_f0} outside [80, 300] Hz")
        if len(self.formants) != 3:
            raise ValueError("exactly three formants are required")
        for center, bandwidth in self.formants:
            if not 0.0 < center < SAMPLE_RATE / 2:
                raise ValueError(f"formant center {center} Hz not below Nyquist")
            if bandwidth <= 0.0:
                raise ValueError("formant bandwidth must be positive")
        if not 0.0 <= self.jitter <= 0.05:
            raise ValueError(f"jitter {self.jitter} outside [0, 0.05]")
        if self.noise_floor < 0.0:
            raise ValueError("noise_floor must be non-negative")

    def f0_at(self, t):
        """Programmed (jitter-free) F0 contour at times ``t`` in seconds."""
        t = np.asarray(t, dtype=np.float64)
        return (self.base_f0 + self.declination_slope * t
                + self.vibrato_depth * np.sin(2 * np.pi * self.vibrato_rate * t))


def resonator_coefficients(center, bandwidth, fs=SAMPLE_RATE):
    """Digital second-order resonator with unit gain at DC."""
    c = -np.exp(-2 * np.pi * bandwidth / fs)
    b = 2 * np.exp(-np.pi * bandwidth / fs) * np.cos(2 * np.pi * center / fs)
    a = 1.0 - b - c
    return np.array([a]), np.array([1.0, -b, -c])


def _harmonic_source(f0_inst, fs):
    """Band-limited glottal-like pulse train with a 1/k spectral tilt."""
    phase = 2 * np.pi * np.cumsum(f0_inst) / fs
    phase -= phase[0]
    max_k = int(0.48 * fs / f0_inst.min())
    out = np.zeros_like(f0_inst)
    for k in range(1, max_k + 1):
        audible = k * f0_inst < 0.48 * fs
        if not audible.any():
            break
        out += audible * np.sin(k * phase) / k
    return out


def synth_utterance(spec, duration, seed):
    """Render ``duration`` seconds of sustained voicing for ``spec``.

    The harmonic source follows the programmed F0 contour with per-period
    jitter, passes through three cascaded formant resonators, receives
    ``noise_floor``-scaled white noise and is peak-normalized to 0.9.
    """
    if not 1.0 <= duration <= 10.0:
        raise ValueError(f"duration {duration} s outside [1, 10]")
    fs = SAMPLE_RATE
    n = int(round(duration * fs))
    t = np.arange(n) / fs
    f0 = spec.f0_at(t)
    lo, hi = F0_LIMITS
    if f0.min() < lo or f0.max() > hi:
        raise ValueError(
            f"F0 contour leaves [{lo:g}, {hi:g}] Hz (range {f0.min():.1f}-{f0.max():.1f})")
    rng = np.random.default_rng(seed)
    if spec.jitter > 0:
        period_index = np.floor(np.cumsum(f0) / fs).astype(int)
        factors = 1.0 + spec.jitter * rng.standard_normal(period_index[-1] + 1)
        f0 = f0 * factors[period_index]
    x = _harmonic_source(f0, fs)
    for center, bandwidth in spec.formants:
        b, a = resonator_coefficients(center, bandwidth, fs)
        x = lfilter(b, a, x)
    if spec.noise_floor > 0:
        x = x + spec.noise_floor * rng.standard_normal(n)
    peak = np.max(np.abs(x))
    if peak > 0:
        x = 0.9 * x / peak
    return Waveform(x, fs, spec.speaker_id)


def white_noise(n_samples, seed):
    return Waveform(np.random.default_rng(seed).standard_normal(n_samples), source_id="white")


def babble_noise(n_samples, seed, talkers=6):
    """Multi-talker hum: the sum of ``talkers`` random synthetic voices."""
    rng = np.random.default_rng(seed)
    duration = n_samples / SAMPLE_RATE
    total = np.zeros(n_samples)
    for i in range(talkers):
        spec = random_speaker_spec(f"babble{i}", rng)
        total += synth_utterance(spec, duration, int(rng.integers(2**31))).samples
    return Waveform(total / talkers, source_id="babble")


def random_speaker_spec(speaker_id, rng):
    """Draw speaker-level voice parameters from fixed plausible ranges."""
    return SyntheticSpeakerSpec(
        speaker_id=speaker_id,
        base_f0=float(rng.uniform(90.0, 250.0)),
        declination_slope=float(rng.uniform(-8.0, 2.0)),
        vibrato_rate=float(rng.uniform(3.0, 7.0)),
        vibrato_depth=float(rng.uniform(0.0, 12.0)),
        formants=(
            (float(rng.uniform(300.0, 900.0)), float(rng.uniform(60.0, 150.0))),
            (float(rng.uniform(900.0, 2400.0)), float(rng.uniform(80.0, 200.0))),
            (float(rng.uniform(2400.0, 3600.0)), float(rng.uniform(100.0, 250.0))),
        ),
        jitter=float(rng.uniform(0.0, 0.02)),
        noise_floor=float(rng.uniform(0.001, 0.01)),
    )


def utterance_variant(spec, rng):
    """Per-utterance deviation of a speaker's voice (session variability)."""
    scale = lambda sd: float(np.exp(sd * rng.standard_normal()))  # noqa: E731
    formants = tuple((c * scale(0.04), bw * scale(0.1)) for c, bw in spec.formants)
    formants = tuple((min(c, 3900.0), bw) for c, bw in formants)
    return replace(
        spec,
        base_f0=float(np.clip(spec.base_f0 * scale(0.05), 80.0, 300.0)),
        declination_slope=spec.declination_slope + float(rng.normal(0.0, 1.5)),
        vibrato_rate=spec.vibrato_rate * scale(0.1),
        vibrato_depth=spec.vibrato_depth * scale(0.2),
        formants=formants,
    )


# -- corpus -------------------------------------------------------------------

@dataclass
class ManifestEntry:
    path: str
    speaker_id: str
    split: str
    condition: str


@dataclass
class CorpusManifest:
    entries: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest paths are not unique")
        train = self.speakers("train")
        evals = self.speakers("eval")
        if train & evals:
            raise ValueError(f"speakers in both splits: {sorted(train & evals)}")

    def speakers(self, split=None):
        return {e.speaker_id for e in self.entries if split is None or e.split == split}

    def select(self, split=None, condition=None):
        return [e for e in self.entries
                if (split is None or e.split == split)
                and (condition is None or e.condition == condition)]


def write_manifest(path, manifest):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# seed={manifest.seed}\n")
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for e in manifest.entries:
            writer.writerow((e.path, e.speaker_id, e.split, e.condition))


def read_manifest(path):
    seed = 0
    rows = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    while lines and lines[0].startswith("#"):
        key, _, value = lines.pop(0)[1:].strip().partition("=")
        if key == "seed":
            seed = int(value)
    if not lines or tuple(lines[0].split("\t")) != MANIFEST_COLUMNS:
        raise ValueError(f"{path}: manifest header must be {' '.join(MANIFEST_COLUMNS)}")
    for line in lines[1:]:
        if line:
            rows.append(ManifestEntry(*line.split("\t")))
    return CorpusManifest(rows, seed)


@dataclass(frozen=True)
class CorpusConfig:
    """Knobs of :func:`build_corpus`; defaults define the reference corpus."""

    duration: float = 2.0
    eval_fraction: float = 0.5
    snr_db: float = 5.0
    noise_types: tuple = ("white", "babble")


def build_corpus(n_speakers, utts_per_speaker, seed, out_dir, config=CorpusConfig()):
    """Synthesize a clean and a degraded copy of every utterance.

    Speakers are split into disjoint train and eval sets. Each utterance is
    rendered from its own derived seed (``seed ^ index``), so the audio does
    not depend on generation order. Degradation is applied per utterance,
    i.e. after chunking.
    """
    if n_speakers < 4:
        raise ValueError("build_corpus needs at least 4 speakers")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise PermissionError(f"output directory {out_dir} is not writable")
    (out_dir / "wav").mkdir(exist_ok=True)

    rng = np.random.default_rng(seed)
    specs = [random_speaker_spec(f"spk{i:03d}", rng) for i in range(n_speakers)]
    n_eval = max(2, int(round(n_speakers * config.eval_fraction)))
    eval_ids = set(rng.permutation(n_speakers)[:n_eval].tolist())

    n = int(round(config.duration * SAMPLE_RATE))
    entries = []
    index = 0
    for s, speaker in enumerate(specs):
        split = "eval" if s in eval_ids else "train"
        for u in range(utts_per_speaker):
            utt_rng = np.random.default_rng(seed ^ index)
            variant = utterance_variant(speaker, utt_rng)
            clean = synth_utterance(variant, config.duration, int(utt_rng.integers(2**31)))
            noise_kind = config.noise_types[index % len(config.noise_types)]
            noise_seed = int(utt_rng.integers(2**31))
            if noise_kind == "white":
                noise = white_noise(n, noise_seed)
            else:
                noise = babble_noise(n, noise_seed)
            degraded = mix_noise_at_snr(clean, noise, config.snr_db, noise_seed)
            # keep the int16 export from clipping
            peak = np.max(np.abs(degraded.samples))
            if peak > 0.99:
                degraded = Waveform(degraded.samples * (0.99 / peak))
            for condition, w in (("clean", clean), ("degraded", degraded)):
                rel = f"wav/{speaker.speaker_id}_{u:03d}_{condition}.wav"
                save_wav(out_dir / rel, w)
                entries.append(ManifestEntry(rel, speaker.speaker_id, split, condition))
            index += 1
    manifest = CorpusManifest(entries, seed)
    write_manifest(out_dir / "manifest.tsv", manifest)
    logger.info("wrote %d utterances for %d speakers to %s", len(entries), n_speakers, out_dir)
    return manifest


def utterance_id(entry):
    """Stable utterance key derived from a manifest path."""
    return Path(entry.path).stem
