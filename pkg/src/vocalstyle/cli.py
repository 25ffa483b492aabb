"""Command line front end: ``vocalstyle <subcommand> [options]``.

Option values resolve in the order built-in default, ``--config`` file
(``key = value`` lines), ``VOCALSTYLE_<KEY>`` environment variables and
finally explicit flags.
"""

import argparse
import contextlib
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, audio, pipeline, style_encoder, trainer, verification
from .style_encoder import read_embeddings_tsv, write_embeddings_tsv

logger = logging.getLogger("vocalstyle")

ENV_PREFIX = "VOCALSTYLE_"
GLOBAL_KEYS = {"seed", "out_dir", "deterministic", "config", "verbose"}
_TRAIN_DEFAULTS = trainer.TrainConfig()


class ConfigError(ValueError):
    pass


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="flat 'key = value' file")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded numeric kernels")
    p.add_argument("--out-dir", default=".")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="vocalstyle", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-corpus", help="generate the synthetic speaker corpus")
    _add_common(p)
    p.add_argument("--speakers", type=int, required=True)
    p.add_argument("--utts", type=int, required=True)
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--snr-db", type=float, default=5.0)

    p = sub.add_parser("train", help="triplet-train the style encoder")
    _add_common(p)
    p.add_argument("--corpus", required=True, help="directory holding manifest.tsv")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--margin", type=float, default=0.5)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--triplets-per-batch", type=int, default=32)
    p.add_argument("--mining", choices=("random", "semi-hard"), default="semi-hard")
    p.add_argument("--steps-per-epoch", type=int, default=0, help="0 = one pass over the corpus")
    p.add_argument("--speakers-per-batch", type=int, default=_TRAIN_DEFAULTS.speakers_per_batch)
    p.add_argument("--utts-per-speaker", type=int, default=_TRAIN_DEFAULTS.utts_per_speaker)
    p.add_argument("--crop-seconds", type=float, default=_TRAIN_DEFAULTS.crop_seconds)
    p.add_argument("--random-warmup-epochs", type=int,
                   default=_TRAIN_DEFAULTS.random_warmup_epochs)
    p.add_argument("--feature-norm", choices=("on", "off"), default="on",
                   help="running standardization of the filterbank output")
    p.add_argument("--token-init-scale", type=float, default=None,
                   help="token bank init std (default 1/sqrt(128))")

    p = sub.add_parser("embed", help="embed one split/condition of a corpus")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("train", "eval"), default="eval")
    p.add_argument("--condition", choices=("clean", "degraded"), default="clean")
    p.add_argument("--system", choices=pipeline.SYSTEMS, default="deeptalk")

    p = sub.add_parser("score", help="cosine-score a trial list")
    _add_common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--system-id", default="")

    p = sub.add_parser("evaluate", help="EER, TMR@FMR=1%% and minDCF of a score file")
    _add_common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--p-tar", type=float, default=0.01)
    p.add_argument("--c-miss", type=float, default=10.0)
    p.add_argument("--c-fa", type=float, default=1.0)

    p = sub.add_parser("fuse", help="weighted fusion of two z-normalized score files")
    _add_common(p)
    p.add_argument("--scores1", required=True)
    p.add_argument("--scores2", required=True)
    p.add_argument("--w1", type=float, default=1.0)
    p.add_argument("--w2", type=float, default=3.0)
    p.add_argument("--no-znorm", action="store_true")

    p = sub.add_parser("analyze", help="spectrogram/F0 of a WAV or distances of embeddings")
    _add_common(p)
    p.add_argument("--wav", default=None)
    p.add_argument("--render", default=None, help="image file for the spectrogram + F0 plot")
    p.add_argument("--embeddings", default=None)
    p.add_argument("--corpus", default=None, help="corpus directory for speaker labels")
    return parser


def _coerce(action, raw):
    if isinstance(action, argparse._StoreTrueAction):
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off", ""):
            return False
        raise ConfigError(f"{action.dest}: expected a boolean, got {raw!r}")
    try:
        value = action.type(raw) if action.type else raw
    except ValueError:
        raise ConfigError(f"{action.dest}: cannot parse {raw!r}") from None
    if action.choices is not None and value not in action.choices:
        raise ConfigError(f"{action.dest}: {value!r} not in {sorted(action.choices)}")
    return value


def read_config_file(path):
    values = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def resolve_args(parser, argv, environ=None):
    """Parse ``argv`` and layer config-file and environment values underneath."""
    environ = os.environ if environ is None else environ
    args = parser.parse_args(argv)
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in subparser._actions if a.dest != "help"}

    layered = {}
    config_path = args.config or environ.get(ENV_PREFIX + "CONFIG")
    if config_path:
        for key, raw in read_config_file(config_path).items():
            if key not in actions:
                raise ConfigError(f"unknown config key {key!r} for {args.command}")
            layered[key] = _coerce(actions[key], raw)
    for dest, action in actions.items():
        env_key = ENV_PREFIX + dest.upper()
        if env_key in environ and dest != "config":
            layered[dest] = _coerce(action, environ[env_key])
    if layered:
        subparser.set_defaults(**layered)
        args = parser.parse_args(argv)
    return args


def _resolved_config(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("config",)}


def _write_meta(path, args):
    """Sidecar ``<file>.meta`` recording the seed and command of an artifact."""
    Path(str(path) + ".meta").write_text(f"seed={args.seed}\tcommand={args.command}\n",
                                         encoding="utf-8")


@contextlib.contextmanager
def _thread_limit(deterministic):
    if not deterministic:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=1):
        yield


# -- subcommands --------------------------------------------------------------

def cmd_synth_corpus(args, out):
    cfg = audio.CorpusConfig(duration=args.duration, snr_db=args.snr_db)
    manifest = audio.build_corpus(args.speakers, args.utts, args.seed, out, cfg)
    _write_meta(out / "manifest.tsv", args)
    print(f"wrote {len(manifest.entries)} utterances to {out}")


def cmd_train(args, out):
    manifest = audio.read_manifest(Path(args.corpus) / "manifest.tsv")
    cfg = trainer.TrainConfig(margin=args.margin, learning_rate=args.learning_rate,
                              triplets_per_batch=args.triplets_per_batch, epochs=args.epochs,
                              seed=args.seed, mining=args.mining,
                              steps_per_epoch=args.steps_per_epoch,
                              speakers_per_batch=args.speakers_per_batch,
                              utts_per_speaker=args.utts_per_speaker,
                              crop_seconds=args.crop_seconds,
                              random_warmup_epochs=args.random_warmup_epochs)
    model_cfg = style_encoder.ModelConfig(feature_norm=args.feature_norm == "on",
                                          token_init_scale=args.token_init_scale)
    _, _, history = trainer.train_loop(cfg, manifest, args.corpus, model_cfg, out_dir=out)
    _write_meta(out / "checkpoint.ckpt", args)
    _write_meta(out / "loss_log.tsv", args)
    means = history.epoch_means()
    if means:
        print(f"final epoch mean loss {means[max(means)]:.4f}")


def cmd_embed(args, out):
    model = trainer.model_from_checkpoint(trainer.load_checkpoint(args.checkpoint))
    manifest = audio.read_manifest(Path(args.corpus) / "manifest.tsv")
    signals, speaker_of = pipeline.load_split(manifest, args.corpus, args.split, args.condition)
    vectors, weights = pipeline.embed_signals(model, signals, args.system)
    path = out / "embeddings.tsv"
    write_embeddings_tsv(path, sorted(vectors.items()))
    _write_meta(path, args)
    if weights:
        write_embeddings_tsv(out / "attention.tsv", sorted(weights.items()))
        _write_meta(out / "attention.tsv", args)
    trials = verification.make_trials(speaker_of, args.seed)
    verification.write_trials(out / "trials.tsv", trials)
    _write_meta(out / "trials.tsv", args)
    print(f"embedded {len(vectors)} utterances; {len(trials)} trials")


def cmd_score(args, out):
    trials = verification.read_trials(args.trials)
    scores = verification.score_trials(trials, read_embeddings_tsv(args.embeddings),
                                       args.system_id)
    path = out / "scores.tsv"
    verification.write_scores(path, scores)
    _write_meta(path, args)


def cmd_evaluate(args, out):
    trials = verification.read_trials(args.trials)
    scores = verification.read_scores(args.scores, trials)
    cfg = verification.DcfConfig(args.p_tar, args.c_miss, args.c_fa)
    report = verification.report_from_scores(scores, cfg)
    verification.write_report(out / "report.tsv", report)
    verification.write_det(out / "det.tsv", report.det)
    _write_meta(out / "report.tsv", args)
    _write_meta(out / "det.tsv", args)
    print(f"eer={report.eer:.4f} tmr_at_fmr1={report.tmr_at_fmr1:.4f} "
          f"min_dcf_normalized={report.min_dcf_normalized:.4f}")


def cmd_fuse(args, out):
    s1 = verification.read_scores(args.scores1)
    s2 = verification.read_scores(args.scores2)
    if args.no_znorm:
        fused = verification.fuse(s1, s2, args.w1, args.w2)
    else:
        fused = verification.fuse_normalized(s1, s2, args.w1, args.w2)
    path = out / "fused_scores.tsv"
    verification.write_scores(path, fused)
    _write_meta(path, args)


def cmd_analyze(args, out):
    if not args.wav and not args.embeddings:
        raise ValueError("analyze needs --wav and/or --embeddings")
    if args.wav:
        w = audio.load_wav(args.wav)
        spec = analysis.spectrogram(w)
        contour = analysis.estimate_f0(w)
        analysis.write_spectrogram_tsv(out / "spectrogram.tsv", spec)
        analysis.write_f0_tsv(out / "f0.tsv", contour)
        _write_meta(out / "spectrogram.tsv", args)
        _write_meta(out / "f0.tsv", args)
        if args.render:
            analysis.render_spectrogram(out / args.render, spec, contour)
    if args.embeddings:
        vectors = read_embeddings_tsv(args.embeddings)
        ids = sorted(vectors)
        labels = None
        if args.corpus:
            manifest = audio.read_manifest(Path(args.corpus) / "manifest.tsv")
            speaker_of = {audio.utterance_id(e): e.speaker_id for e in manifest.entries}
            labels = [speaker_of[u] for u in ids]
            groups = {}
            for uid, spk in zip(ids, labels):
                groups.setdefault(spk, []).append(vectors[uid])
            report = analysis.distance_report(groups)
            analysis.write_distance_report(out / "distances.tsv", report)
            _write_meta(out / "distances.tsv", args)
        coords = analysis.project_2d(np.array([vectors[u] for u in ids]))
        analysis.write_projection_tsv(out / "projection.tsv", ids, coords, labels)
        _write_meta(out / "projection.tsv", args)


COMMANDS = {
    "synth-corpus": cmd_synth_corpus,
    "train": cmd_train,
    "embed": cmd_embed,
    "score": cmd_score,
    "evaluate": cmd_evaluate,
    "fuse": cmd_fuse,
    "analyze": cmd_analyze,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = resolve_args(parser, argv)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out_dir)
    resolved = _resolved_config(args)
    logger.info("resolved config: %s", resolved)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / f"run_config.{args.command}.txt").write_text(
            "".join(f"{k} = {v}\n" for k, v in resolved.items()), encoding="utf-8")
        with _thread_limit(args.deterministic):
            COMMANDS[args.command](args, out)
    except Exception as exc:  # noqa: BLE001 - surface every failure as one line
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
