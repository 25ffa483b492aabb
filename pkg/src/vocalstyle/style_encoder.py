"""Style-token prosody encoder and the end-to-end embedding model.

Pipeline per utterance::

    frames -> filterbank features (T, C) -> 2D conv stack -> GRU
           -> reference encoding (H,) -> attention over tanh(tokens)
           -> weighted token sum -> L2 normalization
"""

from dataclasses import dataclass, field

import numpy as np

from . import layers
from .frontend import (FeatureNormalizer, FrontendConfig, deepvox_backward, deepvox_forward,
                       deepvox_init, frame_signal)

MIN_FRAMES = 4
REF_STRIDE = 2


@dataclass(frozen=True)
class ModelConfig:
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    ref_channels: tuple = (16, 16, 32, 32)
    ref_kernel: int = 3
    hidden: int = 128
    n_tokens: int = 10
    token_init_scale: float = None  # None: 1/sqrt(hidden)
    normalize_embedding: bool = True
    feature_norm: bool = True

    def ref_freq_bins(self):
        """Frequency-axis length left after the 2D conv stack."""
        n = self.frontend.output_dim
        for _ in self.ref_channels:
            n = layers.conv2d_out_size(n, self.ref_kernel, REF_STRIDE, self.ref_kernel // 2)
        return n

    @property
    def gru_input_dim(self):
        return self.ref_channels[-1] * self.ref_freq_bins()


@dataclass
class AttentionWeights:
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("attention weights must form a probability simplex")


@dataclass
class DeepTalkEmbedding:
    vector: np.ndarray
    weights: AttentionWeights


def ref_encoder_init(seed, cfg=ModelConfig(), dtype=np.float64):
    rng = np.random.default_rng(seed)
    params = {}
    c_in = 1
    k = cfg.ref_kernel
    for i, c_out in enumerate(cfg.ref_channels):
        params[f"ref.conv{i}.weight"] = (
            rng.standard_normal((c_out, c_in, k, k)) * np.sqrt(2.0 / (c_in * k * k))).astype(dtype)
        params[f"ref.conv{i}.bias"] = np.zeros(c_out, dtype=dtype)
        c_in = c_out
    h, d = cfg.hidden, cfg.gru_input_dim
    bound = 1.0 / np.sqrt(h)
    params["ref.gru.w_x"] = rng.uniform(-bound, bound, (3 * h, d)).astype(dtype)
    params["ref.gru.w_h"] = rng.uniform(-bound, bound, (3 * h, h)).astype(dtype)
    params["ref.gru.b"] = np.zeros(3 * h, dtype=dtype)
    return params


def token_bank_init(seed, n_tokens=10, dim=128, scale=None, dtype=np.float64):
    """Zero-mean Gaussian tokens with standard deviation ``scale``.

    The default ``1/sqrt(dim)`` keeps the tanh keys near 0.09, so attention
    starts close to uniform.
    """
    if scale is None:
        scale = 1.0 / np.sqrt(dim)
    rng = np.random.default_rng(seed)
    return (scale * rng.standard_normal((n_tokens, dim))).astype(dtype)


def _ref_layers(params):
    return sum(1 for n in params if n.startswith("ref.conv") and n.endswith(".weight"))


def reference_encode(feats, params, keep_cache=False):
    """Summarize a ``(T, C)`` feature map as the GRU's final hidden state."""
    feats = np.asarray(feats)
    if feats.shape[0] < MIN_FRAMES:
        raise ValueError(f"reference encoder needs at least {MIN_FRAMES} frames, got {feats.shape[0]}")
    x = feats[None, :, :, None]
    cache = []
    for i in range(_ref_layers(params)):
        w = params[f"ref.conv{i}.weight"]
        out, cc = layers.conv2d_forward(x, w, params[f"ref.conv{i}.bias"],
                                        stride=REF_STRIDE, pad=w.shape[2] // 2)
        out, mask = layers.relu_forward(out)
        cache.append((x, cc, mask))
        x = out
    n, steps, freq, ch = x.shape
    # (N, T', F', C) -> GRU input of F'*C features per step
    seq = x.reshape(n, steps, freq * ch)
    states, gru_cache = layers.gru_forward(seq, params["ref.gru.w_x"], params["ref.gru.w_h"],
                                           params["ref.gru.b"])
    ref = states[0, -1]
    if keep_cache:
        return ref, (cache, x.shape, gru_cache)
    return ref


def reference_backward(dref, cache):
    conv_cache, map_shape, gru_cache = cache
    states = gru_cache[3]
    dstates = np.zeros_like(states)
    dstates[0, -1] = dref
    dseq, dw_x, dw_h, db = layers.gru_backward(dstates, gru_cache)
    grads = {"ref.gru.w_x": dw_x, "ref.gru.w_h": dw_h, "ref.gru.b": db}
    dx = dseq.reshape(map_shape)
    for i in range(len(conv_cache) - 1, -1, -1):
        x, cc, mask = conv_cache[i]
        dx = layers.relu_backward(dx, mask)
        dx, dw, dbias = layers.conv2d_backward(dx, x, cc)
        grads[f"ref.conv{i}.weight"] = dw
        grads[f"ref.conv{i}.bias"] = dbias
    return grads, dx[0, :, :, 0]


def softmax(scores):
    z = scores - np.max(scores)
    e = np.exp(z)
    return e / e.sum()


def attend(ref, bank):
    """Scaled dot-product attention of ``ref`` over tanh-squashed tokens."""
    keys = np.tanh(bank)
    scores = keys @ ref / np.sqrt(bank.shape[1])
    return AttentionWeights(softmax(scores))


def combine(weights, bank):
    """Attention-weighted sum of tanh-squashed tokens."""
    w = weights.w if isinstance(weights, AttentionWeights) else np.asarray(weights)
    return w @ np.tanh(bank)


def l2_normalize(v):
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise FloatingPointError("cannot normalize a zero style vector")
    return v / norm


class StyleEncoderModel:
    """Filterbank, reference encoder and token bank trained as one network.

    ``params`` is a flat ``name -> ndarray`` mapping; names double as
    checkpoint keys. With ``config.feature_norm`` the filterbank output is
    standardized by running statistics held in :attr:`buffers` (not trained
    by gradient, updated by the trainer).
    """

    def __init__(self, config=ModelConfig(), params=None, seed=0, dtype=np.float64,
                 buffers=None):
        self.config = config
        if params is None:
            params = {}
            params.update(deepvox_init(seed, config.frontend, dtype))
            params.update(ref_encoder_init(seed + 1, config, dtype))
            params["tokens"] = token_bank_init(seed + 2, config.n_tokens, config.hidden,
                                               config.token_init_scale, dtype)
        self.params = params
        self.normalizer = None
        if config.feature_norm:
            self.normalizer = FeatureNormalizer(config.frontend.output_dim, dtype=self.dtype)
            if buffers is not None:
                self.normalizer.mean = np.array(buffers["norm.mean"], dtype=self.dtype)
                self.normalizer.var = np.array(buffers["norm.var"], dtype=self.dtype)

    @property
    def buffers(self):
        """Non-trainable state, keyed like :attr:`params`."""
        if self.normalizer is None:
            return {}
        return {"norm.mean": self.normalizer.mean, "norm.var": self.normalizer.var}

    @property
    def dtype(self):
        return self.params["tokens"].dtype

    def features(self, samples):
        """Raw filterbank output, before any feature normalization."""
        frames = frame_signal(samples, self.config.frontend.framing)
        return deepvox_forward(frames.astype(self.dtype), self.params)

    def forward(self, samples, keep_cache=False):
        """Embed raw samples; returns ``(embedding, weights[, tape])``."""
        if not keep_cache:
            return self.embed_features(self.features(samples))
        frames = frame_signal(samples, self.config.frontend.framing).astype(self.dtype)
        feats, fe_cache = deepvox_forward(frames, self.params, keep_cache=True)
        e, w, tape = self.embed_features(feats, keep_cache=True)
        return e, w, (fe_cache,) + tape

    def embed_features(self, feats, keep_cache=False):
        """Embedding from a raw :meth:`features` matrix."""
        p = self.params
        if self.normalizer is not None:
            feats = self.normalizer.apply(feats)
        ref = reference_encode(feats, p, keep_cache=keep_cache)
        if keep_cache:
            ref, ref_cache = ref
        bank = p["tokens"]
        keys = np.tanh(bank)
        scale = 1.0 / np.sqrt(bank.shape[1])
        w = softmax(keys @ ref * scale)
        v = w @ keys
        norm = np.linalg.norm(v)
        e = v / norm if self.config.normalize_embedding else v
        if not keep_cache:
            return e, w
        return e, w, (ref_cache, ref, keys, scale, w, v, norm, e)

    def backward(self, tape, de):
        """Gradients of every parameter given ``dL/d embedding``."""
        fe_cache, ref_cache, ref, keys, scale, w, v, norm, e = tape
        if self.config.normalize_embedding:
            dv = (de - e * (e @ de)) / norm
        else:
            dv = de
        dw = keys @ dv
        dkeys = np.outer(w, dv)
        ds = w * (dw - w @ dw)
        dref = keys.T @ ds * scale
        dkeys += np.outer(ds, ref) * scale
        grads = {"tokens": dkeys * (1.0 - keys * keys)}
        ref_grads, dfeats = reference_backward(dref, ref_cache)
        grads.update(ref_grads)
        if self.normalizer is not None:
            dfeats = self.normalizer.backward(dfeats)
        grads.update(deepvox_backward(dfeats, fe_cache))
        return grads

    def embed(self, samples):
        e, w = self.forward(samples)
        return DeepTalkEmbedding(e, AttentionWeights(w))


def deeptalk_embed(w, model):
    """Vocal-style embedding of a waveform of at least one second."""
    if len(w) < w.sample_rate:
        raise ValueError(f"waveform of {w.duration:.2f} s is shorter than 1 s")
    return model.embed(w.samples)


def frontend_embed(w, model):
    """Filterbank-only utterance vector: mean and std pooled features, L2 normalized."""
    feats = model.features(w.samples if hasattr(w, "samples") else w).astype(np.float64)
    pooled = np.concatenate([feats.mean(axis=0), feats.std(axis=0)])
    return l2_normalize(pooled)


def write_embeddings_tsv(path, items):
    """``items`` is an iterable of ``(utterance_id, vector)``."""
    with open(path, "w", encoding="utf-8") as fh:
        for uid, vec in items:
            fh.write(uid + "\t" + "\t".join(repr(float(x)) for x in vec) + "\n")


def read_embeddings_tsv(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            uid, *vals = line.rstrip("\n").split("\t")
            out[uid] = np.array([float(x) for x in vals])
    return out
