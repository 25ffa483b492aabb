"""Learnable 1D-CNN filterbank applied independently to raw-waveform frames."""

from dataclasses import dataclass

import numpy as np

from . import layers


@dataclass(frozen=True)
class FramingConfig:
    window: int = 200
    hop: int = 80

    def __post_init__(self):
        if not 0 < self.hop <= self.window:
            raise ValueError(f"need 0 < hop <= window, got hop={self.hop} window={self.window}")

    def n_frames(self, n_samples):
        return (n_samples - self.window) // self.hop + 1


@dataclass(frozen=True)
class FrontendConfig:
    framing: FramingConfig = FramingConfig()
    kernels: tuple = (7, 5, 5, 3)
    channels: tuple = (16, 32, 32, 40)

    def __post_init__(self):
        if len(self.kernels) != len(self.channels) or not self.kernels:
            raise ValueError("kernels and channels must be non-empty and equally long")
        if sum(k - 1 for k in self.kernels) >= self.framing.window:
            raise ValueError("conv stack receptive field exceeds the frame window")

    @property
    def output_dim(self):
        return self.channels[-1]


@dataclass
class FeatureSequence:
    values: np.ndarray  # (T, C)
    frame_rate: float


def frame_signal(samples, cfg=FramingConfig()):
    """Slice ``samples`` into ``(T, window)`` frames starting every ``hop``.

    No window function is applied.
    """
    samples = np.asarray(getattr(samples, "samples", samples))
    if samples.shape[0] < cfg.window:
        raise ValueError("input shorter than one frame")
    t = cfg.n_frames(samples.shape[0])
    view = np.lib.stride_tricks.sliding_window_view(samples, cfg.window)
    return view[::cfg.hop][:t].copy()


def deepvox_init(seed, cfg=FrontendConfig(), dtype=np.float64):
    """He-normal filters (variance 2/fan_in) and zero biases, keyed by name."""
    rng = np.random.default_rng(seed)
    params = {}
    c_in = 1
    for i, (k, c_out) in enumerate(zip(cfg.kernels, cfg.channels)):
        fan_in = c_in * k
        params[f"frontend.conv{i}.weight"] = (
            rng.standard_normal((c_out, c_in, k)) * np.sqrt(2.0 / fan_in)).astype(dtype)
        params[f"frontend.conv{i}.bias"] = np.zeros(c_out, dtype=dtype)
        c_in = c_out
    return params


def _n_layers(params):
    return sum(1 for name in params if name.startswith("frontend.conv") and name.endswith(".weight"))


def deepvox_forward(frames, params, keep_cache=False):
    """Map ``(T, window)`` frames to ``(T, C)`` features.

    Each frame passes through the conv stack (ReLU between layers) and is
    average-pooled over its intra-frame time axis. Frames never interact.
    """
    frames = np.asarray(frames)
    x = frames[:, :, None].astype(params["frontend.conv0.weight"].dtype, copy=False)
    n_layers = _n_layers(params)
    cache = []
    for i in range(n_layers):
        w = params[f"frontend.conv{i}.weight"]
        if i == 0 and w.shape[2] > x.shape[1]:
            raise ValueError(f"frame width {x.shape[1]} smaller than first kernel {w.shape[2]}")
        out, conv_cache = layers.conv1d_forward(x, w, params[f"frontend.conv{i}.bias"])
        if not np.all(np.isfinite(out)):
            raise FloatingPointError(f"numeric overflow in frontend layer conv{i}")
        mask = None
        if i < n_layers - 1:
            out, mask = layers.relu_forward(out)
        if keep_cache:
            cache.append((conv_cache, mask))
        x = out
    feats = x.mean(axis=1)
    return (feats, cache) if keep_cache else feats


def deepvox_backward(dfeats, cache):
    """Parameter gradients of :func:`deepvox_forward` given ``dL/dfeatures``."""
    grads = {}
    x_shape, last_weight, _ = cache[-1][0]
    l_out = x_shape[1] - last_weight.shape[2] + 1
    dx = np.repeat(dfeats[:, None, :] / l_out, l_out, axis=1)
    for i in range(len(cache) - 1, -1, -1):
        conv_cache, mask = cache[i]
        if mask is not None:
            dx = layers.relu_backward(dx, mask)
        dx, dw, db = layers.conv1d_backward(dx, conv_cache)
        grads[f"frontend.conv{i}.weight"] = dw
        grads[f"frontend.conv{i}.bias"] = db
    return grads


def extract_features(w, params, cfg=FrontendConfig()):
    """Waveform to :class:`FeatureSequence` with the given framing."""
    frames = frame_signal(w, cfg.framing)
    rate = 8000 / cfg.framing.hop
    return FeatureSequence(deepvox_forward(frames, params), rate)


class FeatureNormalizer:
    """Per-feature running mean/variance standardization (off by default).

    :meth:`apply` is a fixed affine map, so utterances never interact inside
    a forward pass. The statistics move only through :meth:`update`, which
    the trainer calls after each optimizer step.
    """

    def __init__(self, dim, momentum=0.05, eps=1e-5, dtype=np.float64):
        self.mean = np.zeros(dim, dtype=dtype)
        self.var = np.ones(dim, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def update(self, feats):
        """Blend in the statistics of a ``(T, C)`` feature block."""
        m = self.momentum
        self.mean = ((1 - m) * self.mean + m * feats.mean(axis=0)).astype(self.mean.dtype)
        self.var = ((1 - m) * self.var + m * feats.var(axis=0)).astype(self.var.dtype)

    def scale(self):
        return 1.0 / np.sqrt(self.var + self.eps)

    def apply(self, feats):
        return (feats - self.mean) * self.scale()

    def backward(self, dout):
        return dout * self.scale()
