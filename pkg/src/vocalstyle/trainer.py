"""Joint triplet training of the filterbank and the style encoder."""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .audio import load_wav, utterance_id
from .frontend import FramingConfig, FrontendConfig
from .style_encoder import ModelConfig, StyleEncoderModel

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "vocalstyle-checkpoint 1"


@dataclass(frozen=True)
class Triplet:
    anchor: str
    positive: str
    negative: str


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 0.5
    learning_rate: float = 1e-3
    triplets_per_batch: int = 32
    epochs: int = 30
    seed: int = 0
    mining: str = "semi-hard"
    random_warmup_epochs: int = 2
    speakers_per_batch: int = 8
    utts_per_speaker: int = 2
    steps_per_epoch: int = 0  # 0: one pass over the training utterances
    crop_seconds: float = 1.0  # 0 trains on whole utterances
    conditions: tuple = ("clean", "degraded")

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.mining not in ("random", "semi-hard"):
            raise ValueError(f"unknown mining strategy {self.mining!r}")

    def mining_at(self, epoch):
        return "random" if epoch < self.random_warmup_epochs else self.mining


def cosine_distance(a, b):
    return 1.0 - float(np.dot(a, b))


def triplet_loss(a, p, n, margin=0.5):
    """Hinge on cosine distances: ``max(0, d(a, p) - d(a, n) + margin)``."""
    # np.maximum keeps NaN visible; the builtin max would clamp it to 0
    return float(np.maximum(0.0, cosine_distance(a, p) - cosine_distance(a, n) + margin))


def _triplet_grads(a, p, n, margin):
    """Loss and gradients w.r.t. ``(a, p, n)`` of one triplet."""
    loss = triplet_loss(a, p, n, margin)
    if loss <= 0.0:
        return 0.0, None
    # L = a.n - a.p + margin on the active side of the hinge
    return loss, (n - p, -a, a)


def sample_triplets(speaker_of, batch, mining="random", seed=0, embeddings=None,
                    margin=0.5, speakers_per_batch=8, utts_per_speaker=4):
    """Draw ``batch`` triplets from a speaker-balanced pool.

    Parameters
    ----------
    speaker_of : dict
        Utterance id to speaker id for the training utterances.
    mining : {"random", "semi-hard"}
        Semi-hard mining needs ``embeddings``, either a mapping from
        utterance id to unit vector or a callable taking a list of ids and
        returning such a mapping.
    seed : int or sequence of int
        Seeds ``numpy.random.default_rng``; pass ``(seed, epoch, step)`` for
        a per-step stream.
    """
    by_speaker = {}
    for uid in sorted(speaker_of):
        by_speaker.setdefault(speaker_of[uid], []).append(uid)
    eligible = sorted(s for s, utts in by_speaker.items() if len(utts) >= 2)
    if len(by_speaker) < 2 or not eligible:
        raise ValueError(
            f"triplet sampling needs >= 2 speakers with >= 2 utterances each; "
            f"found {len(eligible)} eligible of {len(by_speaker)} speakers")
    if len(eligible) < 2:
        raise ValueError(f"only {len(eligible)} speaker has >= 2 utterances; need 2")
    rng = np.random.default_rng(seed)

    n_spk = min(speakers_per_batch, len(eligible))
    chosen = [eligible[i] for i in sorted(rng.choice(len(eligible), n_spk, replace=False))]
    pool = {}
    for s in chosen:
        utts = by_speaker[s]
        k = min(utts_per_speaker, len(utts))
        pool[s] = [utts[i] for i in sorted(rng.choice(len(utts), k, replace=False))]

    pairs = [(s, a, p) for s in chosen for a in pool[s] for p in pool[s] if a != p]
    order = rng.permutation(len(pairs))
    picked = [pairs[order[i % len(pairs)]] for i in range(batch)]

    if mining == "random":
        out = []
        for s, a, p in picked:
            others = [u for t in chosen if t != s for u in pool[t]]
            out.append(Triplet(a, p, others[int(rng.integers(len(others)))]))
        return out
    if mining != "semi-hard":
        raise ValueError(f"unknown mining strategy {mining!r}")
    if embeddings is None:
        raise ValueError("semi-hard mining needs embeddings")
    if callable(embeddings):
        embeddings = embeddings([u for s in chosen for u in pool[s]])
    out = []
    for s, a, p in picked:
        ea = embeddings[a]
        d_ap = cosine_distance(ea, embeddings[p])
        others = [u for t in chosen if t != s for u in pool[t]]
        d_an = np.array([cosine_distance(ea, embeddings[u]) for u in others])
        semi = np.flatnonzero((d_an > d_ap) & (d_an < d_ap + margin))
        if semi.size:
            neg = others[int(semi[rng.integers(semi.size)])]
        else:
            neg = others[int(np.argmin(d_an))]
        out.append(Triplet(a, p, neg))
    return out


class Adam:
    """First/second-moment adaptive gradient descent with bias correction."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in params.items():
            g = grads[k].astype(p.dtype, copy=False)
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)

    def decay(self):
        """Moment decay for an all-zero gradient; parameters are left alone."""
        for k in self.m:
            self.m[k] *= self.beta1
            self.v[k] *= self.beta2


def batch_loss_and_grads(model, triplets, signals, margin, embeddings=None, features=None,
                         update_norm=False):
    """Mean triplet loss over ``triplets`` and its gradient for every parameter.

    ``signals`` maps utterance ids to raw sample arrays. ``embeddings`` may
    fix the vectors of some utterances outright; ``features`` may carry raw
    filterbank outputs already computed with the current parameters. With
    ``update_norm`` the model's feature normalizer first absorbs the batch
    statistics, so the loss and its gradient share one normalization map.
    """
    uids = list(dict.fromkeys(u for t in triplets for u in (t.anchor, t.positive, t.negative)))
    emb = dict(embeddings or {})
    raw = {}
    for uid in uids:
        if uid not in emb:
            raw[uid] = features[uid] if features and uid in features else model.features(signals[uid])
    if update_norm and model.normalizer is not None and raw:
        model.normalizer.update(np.concatenate([raw[u] for u in uids if u in raw]))
    for uid in raw:
        emb[uid] = model.embed_features(raw[uid])[0]
    d_emb = {uid: np.zeros_like(emb[uid]) for uid in uids}
    total = 0.0
    scale = 1.0 / len(triplets)
    for t in triplets:
        loss, g = _triplet_grads(emb[t.anchor], emb[t.positive], emb[t.negative], margin)
        if not math.isfinite(loss):
            raise FloatingPointError(f"non-finite loss for triplet {t}")
        total += loss
        if g is not None:
            d_emb[t.anchor] += scale * g[0]
            d_emb[t.positive] += scale * g[1]
            d_emb[t.negative] += scale * g[2]
    mean_loss = total * scale
    grads = None
    for uid in uids:
        if not np.any(d_emb[uid]):
            continue
        _, _, tape = model.forward(signals[uid], keep_cache=True)
        g = model.backward(tape, d_emb[uid].astype(model.dtype))
        if grads is None:
            grads = g
        else:
            for k in grads:
                grads[k] += g[k]
    if grads is None:
        grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    return mean_loss, grads


def train_step(model, optimizer, triplets, signals, margin, embeddings=None, features=None):
    """One update on a triplet batch; returns ``(loss, grads)``.

    The feature normalizer, if any, absorbs the batch statistics before the
    loss is evaluated (see :func:`batch_loss_and_grads`).
    """
    loss, grads = batch_loss_and_grads(model, triplets, signals, margin, embeddings, features,
                                       update_norm=True)
    if loss == 0.0:
        optimizer.decay()
    else:
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {k}")
        optimizer.step(model.params, grads)
    return loss, grads


# -- checkpoints --------------------------------------------------------------

@dataclass
class Checkpoint:
    """Named float32 tensors plus JSON-serializable training state."""

    tensors: dict
    meta: dict = field(default_factory=dict)


def _config_to_dict(cfg):
    return json.loads(json.dumps(asdict(cfg)))


def model_config_from_dict(d):
    fe = d["frontend"]
    frontend = FrontendConfig(FramingConfig(**fe["framing"]), tuple(fe["kernels"]),
                              tuple(fe["channels"]))
    rest = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k != "frontend"}
    return ModelConfig(frontend=frontend, **rest)


def train_config_from_dict(d):
    return TrainConfig(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


def encode_checkpoint(ckpt):
    """Serialize to bytes: UTF-8 manifest, blank line, little-endian float32 payload."""
    lines = [CHECKPOINT_MAGIC]
    for key in sorted(ckpt.meta):
        lines.append(f"#{key}\t{json.dumps(ckpt.meta[key], sort_keys=True)}")
    payload = []
    for name, arr in ckpt.tensors.items():
        if "\t" in name or "\n" in name:
            raise ValueError(f"invalid tensor name {name!r}")
        shape = ",".join(str(s) for s in arr.shape)
        lines.append(f"{name}\tfloat32\t{shape}")
        payload.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    header = ("\n".join(lines) + "\n\n").encode("utf-8")
    return header + b"".join(payload)


def decode_checkpoint(data):
    sep = data.find(b"\n\n")
    if sep < 0:
        raise ValueError("checkpoint manifest not terminated by a blank line")
    lines = data[:sep].decode("utf-8").split("\n")
    payload = data[sep + 2:]
    if lines[0] != CHECKPOINT_MAGIC:
        raise ValueError("not a vocalstyle checkpoint")
    meta, specs = {}, []
    for line in lines[1:]:
        if line.startswith("#"):
            key, _, value = line[1:].partition("\t")
            meta[key] = json.loads(value)
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"malformed manifest line {line!r}")
        name, dtype, shape_txt = parts
        if dtype != "float32":
            raise ValueError(f"tensor {name}: unsupported dtype {dtype}")
        try:
            shape = tuple(int(s) for s in shape_txt.split(",")) if shape_txt else ()
        except ValueError:
            raise ValueError(f"tensor {name}: corrupted shape {shape_txt!r}") from None
        if any(s < 0 for s in shape):
            raise ValueError(f"tensor {name}: corrupted shape {shape_txt!r}")
        specs.append((name, shape))
    expected = sum(4 * math.prod(shape) for _, shape in specs)
    if expected != len(payload):
        raise ValueError(f"payload length mismatch: manifest needs {expected} bytes, found {len(payload)}")
    tensors = {}
    offset = 0
    for name, shape in specs:
        size = 4 * math.prod(shape)
        tensors[name] = np.frombuffer(payload, dtype="<f4", count=size // 4,
                                      offset=offset).reshape(shape).astype(np.float32)
        offset += size
    return Checkpoint(tensors, meta)


def save_checkpoint(path, ckpt):
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())


def make_checkpoint(model, optimizer=None, train_config=None, epoch=0, step=0):
    tensors = {k: v for k, v in model.params.items()}
    tensors.update({f"buffer.{k}": v for k, v in model.buffers.items()})
    meta = {"model_config": _config_to_dict(model.config), "epoch": epoch, "step": step}
    if train_config is not None:
        meta["train_config"] = _config_to_dict(train_config)
    if optimizer is not None:
        meta["adam_t"] = optimizer.t
        for k in model.params:
            tensors[f"adam.m.{k}"] = optimizer.m[k]
            tensors[f"adam.v.{k}"] = optimizer.v[k]
    return Checkpoint(tensors, meta)


def model_from_checkpoint(ckpt):
    config = model_config_from_dict(ckpt.meta["model_config"])
    reference = StyleEncoderModel(config, seed=0, dtype=np.float32)
    params = {}
    for name, ref in reference.params.items():
        if name not in ckpt.tensors:
            raise ValueError(f"checkpoint lacks parameter {name}")
        if ckpt.tensors[name].shape != ref.shape:
            raise ValueError(f"parameter {name}: shape {ckpt.tensors[name].shape} != {ref.shape}")
        params[name] = ckpt.tensors[name].copy()
    buffers = {}
    for name, ref in reference.buffers.items():
        key = f"buffer.{name}"
        if key not in ckpt.tensors or ckpt.tensors[key].shape != ref.shape:
            raise ValueError(f"checkpoint lacks buffer {name} of shape {ref.shape}")
        buffers[name] = ckpt.tensors[key].copy()
    return StyleEncoderModel(config, params=params, buffers=buffers)


# -- training loop ------------------------------------------------------------

@dataclass
class TrainHistory:
    losses: list = field(default_factory=list)  # (epoch, step, loss)
    frontend_grad_norms: list = field(default_factory=list)

    def epoch_means(self):
        out = {}
        for epoch, _, loss in self.losses:
            out.setdefault(epoch, []).append(loss)
        return {e: float(np.mean(v)) for e, v in sorted(out.items())}


def load_training_signals(manifest, corpus_dir, conditions=("clean", "degraded")):
    speaker_of, signals = {}, {}
    for entry in manifest.select(split="train"):
        if entry.condition not in conditions:
            continue
        uid = utterance_id(entry)
        speaker_of[uid] = entry.speaker_id
        signals[uid] = load_wav(Path(corpus_dir) / entry.path).samples.astype(np.float32)
    return speaker_of, signals


def _random_crops(signals, seconds, seed):
    if seconds <= 0:
        return signals
    size = int(round(seconds * 8000))
    rng = np.random.default_rng(seed)
    out = {}
    for uid in sorted(signals):
        x = signals[uid]
        off = int(rng.integers(0, x.size - size + 1)) if x.size > size else 0
        out[uid] = x[off:off + size]
    return out


def write_loss_log(path, history):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch\tstep\tloss\n")
        for epoch, step, loss in history.losses:
            fh.write(f"{epoch}\t{step}\t{loss!r}\n")


def train_loop(config, manifest, corpus_dir, model_config=ModelConfig(), out_dir=None,
               progress=None):
    """Train from scratch; returns ``(model, checkpoint, history)``.

    When ``out_dir`` is given, ``checkpoint.ckpt`` is rewritten after every
    epoch and ``loss_log.tsv`` holds the per-step losses.
    """
    speaker_of, signals = load_training_signals(manifest, corpus_dir, config.conditions)
    model = StyleEncoderModel(model_config, seed=config.seed, dtype=np.float32)
    optimizer = Adam(model.params, lr=config.learning_rate)
    history = TrainHistory()
    pool_size = config.speakers_per_batch * config.utts_per_speaker
    steps = config.steps_per_epoch or max(1, math.ceil(len(signals) / pool_size))
    out_dir = Path(out_dir) if out_dir is not None else None
    ckpt = make_checkpoint(model, optimizer, config, epoch=0, step=0)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out_dir / "checkpoint.ckpt", ckpt)

    global_step = 0
    for epoch in range(config.epochs):
        mining = config.mining_at(epoch)
        for step in range(steps):
            step_signals = _random_crops(signals, config.crop_seconds, (config.seed, epoch, step, 1))
            cache = {}

            def embed_cached(ids):
                cache.update({u: model.features(step_signals[u]) for u in ids})
                return {u: model.embed_features(cache[u])[0] for u in ids}

            triplets = sample_triplets(
                speaker_of, config.triplets_per_batch, mining, (config.seed, epoch, step),
                embeddings=embed_cached if mining == "semi-hard" else None,
                margin=config.margin, speakers_per_batch=config.speakers_per_batch,
                utts_per_speaker=config.utts_per_speaker)
            loss, grads = train_step(model, optimizer, triplets, step_signals, config.margin,
                                     features=cache)
            fe_norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64)))
                                    for k, g in grads.items() if k.startswith("frontend.")))
            history.losses.append((epoch + 1, step, loss))
            history.frontend_grad_norms.append(fe_norm)
            global_step += 1
        ckpt = make_checkpoint(model, optimizer, config, epoch=epoch + 1, step=global_step)
        mean = history.epoch_means()[epoch + 1]
        logger.info("epoch %d mean loss %.4f (%s mining)", epoch + 1, mean, mining)
        if progress is not None:
            progress(epoch + 1, mean)
        if out_dir is not None:
            save_checkpoint(out_dir / "checkpoint.ckpt", ckpt)
            write_loss_log(out_dir / "loss_log.tsv", history)
    return model, ckpt, history
