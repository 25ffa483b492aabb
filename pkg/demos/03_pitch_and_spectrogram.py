"""Spectrogram and F0 contour of a synthetic voice.

Synthesizes a speaker with falling pitch and vibrato, tracks its F0 and
compares the track against the contour the generator was programmed with::

    python3 demos/03_pitch_and_spectrogram.py --render pitch.png

``--render`` needs matplotlib (``pip install -e .[plot]``).
"""

import argparse

from vocalstyle.analysis import (estimate_f0, f0_similarity, programmed_contour,
                                 render_spectrogram, spectrogram)
from vocalstyle.audio import SyntheticSpeakerSpec, synth_utterance


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--render", help="image file for the spectrogram with F0 overlay")
    args = parser.parse_args()

    spec = SyntheticSpeakerSpec("demo", base_f0=160.0, declination_slope=-15.0,
                                vibrato_rate=5.0, vibrato_depth=12.0,
                                formants=((650.0, 80.0), (1100.0, 100.0), (2500.0, 150.0)),
                                jitter=0.0, noise_floor=0.002)
    w = synth_utterance(spec, 2.0, seed=0)
    contour = estimate_f0(w)
    voiced = contour.f0[contour.voiced]
    print(f"{contour.voiced.sum()}/{len(contour.f0)} frames voiced, "
          f"F0 {voiced.min():.1f}-{voiced.max():.1f} Hz")
    match = f0_similarity(contour, programmed_contour(spec, len(w.samples)))
    print(f"agreement with the programmed contour: r = {match['pearson_r']:.3f}")
    if args.render:
        render_spectrogram(args.render, spectrogram(w), contour)
        print(f"wrote {args.render}")


if __name__ == "__main__":
    main()
