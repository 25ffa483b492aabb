"""Vocal-style speaker embeddings from raw audio, with a verification toolkit."""

from .audio import (CorpusManifest, SyntheticSpeakerSpec, Waveform, build_corpus, load_wav,
                    mix_noise_at_snr, save_wav, split_into_chunks, synth_utterance)
from .frontend import FramingConfig, FrontendConfig, deepvox_forward, deepvox_init, frame_signal
from .style_encoder import (ModelConfig, StyleEncoderModel, attend, combine, deeptalk_embed,
                            frontend_embed, reference_encode)
from .trainer import (TrainConfig, Triplet, load_checkpoint, sample_triplets, save_checkpoint,
                      train_loop, train_step, triplet_loss)
from .verification import (DcfConfig, ScoreSet, Trial, compute_eer, compute_min_dcf,
                           compute_tmr_at_fmr, cosine_score, evaluate, fuse, sweep_det, znorm)

__version__ = "0.1.0"
