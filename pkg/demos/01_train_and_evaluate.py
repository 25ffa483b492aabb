"""Synthesize a small corpus, train the style encoder and verify speakers.

Run from the repository root::

    python3 demos/01_train_and_evaluate.py --out-dir /tmp/vocalstyle_demo

A few minutes on one core. The corpus is deliberately small; see README for
the desk-scale settings used by the acceptance suite.
"""

import argparse
import logging
from pathlib import Path

from vocalstyle.audio import CorpusConfig, build_corpus
from vocalstyle.pipeline import evaluate_condition
from vocalstyle.style_encoder import ModelConfig
from vocalstyle.trainer import TrainConfig, save_checkpoint, train_loop

log = logging.getLogger("demo")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out-dir", type=Path, default=Path("demo_run"))
    parser.add_argument("--speakers", type=int, default=10)
    parser.add_argument("--utts", type=int, default=8)
    parser.add_argument("--epochs", type=int, default=4)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    # 1. half the speakers train, the other half are never seen in training
    corpus = args.out_dir / "corpus"
    manifest = build_corpus(args.speakers, args.utts, 7, corpus, CorpusConfig())
    log.info("corpus: %d utterances in %s", len(manifest.entries), corpus)

    # 2. joint training of the learnable filterbank and the style encoder
    config = TrainConfig(epochs=args.epochs, speakers_per_batch=min(8, args.speakers // 2))
    model, checkpoint, history = train_loop(config, manifest, corpus, ModelConfig())
    for epoch, loss in sorted(history.epoch_means().items()):
        log.info("epoch %d mean triplet loss %.4f", epoch, loss)
    save_checkpoint(args.out_dir / "checkpoint.ckpt", checkpoint)

    # 3. verification on unseen speakers: style system, filterbank system, 1:3 fusion
    for condition in ("clean", "degraded"):
        results, _, _ = evaluate_condition(model, manifest, corpus, condition)
        eer = results[0].eer
        log.info("%-8s EER  style %.3f  filterbank %.3f  fused %.3f",
                 condition, eer["deeptalk"], eer["frontend"], eer["fused"])


if __name__ == "__main__":
    main()
