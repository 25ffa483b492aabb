"""Differentiable numpy building blocks with explicit backward passes.

Every ``*_forward`` returns ``(output, cache)`` and the matching
``*_backward`` consumes the upstream gradient plus that cache. Layouts are
channels-last throughout: 1D signals are ``(N, L, C)`` and 2D maps are
``(N, H, W, C)``. Weights keep the conventional ``(C_out, C_in, *kernel)``
order.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


# -- 1D convolution, valid padding, stride 1 ---------------------------------

def conv1d_forward(x, weight, bias):
    """Valid 1D convolution (cross-correlation) over axis 1 of ``x``.

    Parameters
    ----------
    x : ndarray, shape (N, L, C_in)
    weight : ndarray, shape (C_out, C_in, K)
    bias : ndarray, shape (C_out,)

    Returns
    -------
    out : ndarray, shape (N, L - K + 1, C_out)
    """
    n, length, c_in = x.shape
    c_out, _, k = weight.shape
    l_out = length - k + 1
    # receptive fields as rows ordered (tap, channel)
    win = sliding_window_view(x, k, axis=1).transpose(0, 1, 3, 2)
    cols = win.reshape(n * l_out, k * c_in)
    wmat = weight.transpose(0, 2, 1).reshape(c_out, k * c_in)
    out = cols @ wmat.T
    out += bias
    return out.reshape(n, l_out, c_out), (x.shape, weight, cols)


def conv1d_backward(dout, cache):
    """Gradients ``(dx, dweight, dbias)`` of :func:`conv1d_forward`."""
    x_shape, weight, cols = cache
    n, length, c_in = x_shape
    c_out, _, k = weight.shape
    l_out = length - k + 1
    d2 = dout.reshape(n * l_out, c_out)
    dweight = (d2.T @ cols).reshape(c_out, k, c_in).transpose(0, 2, 1)
    dbias = d2.sum(axis=0)
    wmat = weight.transpose(0, 2, 1).reshape(c_out, k * c_in)
    dcols = (d2 @ wmat).reshape(n, l_out, k, c_in)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for j in range(k):
        dx[:, j:j + l_out, :] += dcols[:, :, j, :]
    return dx, dweight, dbias


# -- 2D convolution, 'same'-style zero padding, arbitrary stride -------------

def conv2d_out_size(n, kernel, stride, pad):
    return (n + 2 * pad - kernel) // stride + 1


def _im2col2d(xp, kh, kw, stride, ho, wo):
    n, _, _, c = xp.shape
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, : (ho - 1) * stride + 1: stride, : (wo - 1) * stride + 1: stride]
    return win.reshape(n * ho * wo, c * kh * kw)


def conv2d_forward(x, weight, bias, stride=2, pad=1):
    """Strided 2D convolution on ``(N, H, W, C_in)`` maps."""
    n, h, w, c_in = x.shape
    c_out, _, kh, kw = weight.shape
    ho = conv2d_out_size(h, kh, stride, pad)
    wo = conv2d_out_size(w, kw, stride, pad)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d input {h}x{w} too small for kernel {kh}x{kw}")
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = _im2col2d(xp, kh, kw, stride, ho, wo)
    out = cols @ weight.reshape(c_out, -1).T
    out += bias
    return out.reshape(n, ho, wo, c_out), (x.shape, weight, stride, pad)


def conv2d_backward(dout, x, cache):
    x_shape, weight, stride, pad = cache
    n, h, w, c_in = x_shape
    c_out, _, kh, kw = weight.shape
    _, ho, wo, _ = dout.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = _im2col2d(xp, kh, kw, stride, ho, wo)
    d2 = dout.reshape(n * ho * wo, c_out)
    dweight = (d2.T @ cols).reshape(weight.shape)
    dbias = d2.sum(axis=0)
    dcols = (d2 @ weight.reshape(c_out, -1)).reshape(n, ho, wo, c_in, kh, kw)
    dxp = np.zeros(xp.shape, dtype=dout.dtype)
    h_span = (ho - 1) * stride + 1
    w_span = (wo - 1) * stride + 1
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + h_span:stride, j:j + w_span:stride, :] += dcols[..., i, j]
    return dxp[:, pad:pad + h, pad:pad + w, :], dweight, dbias


# -- GRU ----------------------------------------------------------------------

def gru_forward(x, w_x, w_h, b):
    """Single-layer unidirectional GRU started from a zero state.

    Gate rows are stacked as ``[update, reset, candidate]``::

        z = sigmoid(Wz x + Uz h + bz)
        r = sigmoid(Wr x + Ur h + br)
        c = tanh(Wc x + Uc (r * h) + bc)
        h' = (1 - z) * h + z * c

    Parameters
    ----------
    x : ndarray, shape (N, T, D)
    w_x : ndarray, shape (3H, D)
    w_h : ndarray, shape (3H, H)
    b : ndarray, shape (3H,)

    Returns
    -------
    states : ndarray, shape (N, T, H)
        Hidden state after every step; the last one is the summary.
    """
    n, steps, _ = x.shape
    hid = w_h.shape[1]
    wz_h, wr_h, wc_h = w_h[:hid], w_h[hid:2 * hid], w_h[2 * hid:]
    xproj = x @ w_x.T + b
    h = np.zeros((n, hid), dtype=x.dtype)
    states = np.empty((n, steps, hid), dtype=x.dtype)
    gates = np.empty((n, steps, 3, hid), dtype=x.dtype)
    for t in range(steps):
        xz, xr, xc = xproj[:, t, :hid], xproj[:, t, hid:2 * hid], xproj[:, t, 2 * hid:]
        z = sigmoid(xz + h @ wz_h.T)
        r = sigmoid(xr + h @ wr_h.T)
        c = np.tanh(xc + (r * h) @ wc_h.T)
        h = (1.0 - z) * h + z * c
        states[:, t] = h
        gates[:, t, 0], gates[:, t, 1], gates[:, t, 2] = z, r, c
    return states, (x, w_x, w_h, states, gates)


def gru_backward(dstates, cache):
    """Backpropagation through time for :func:`gru_forward`.

    ``dstates`` holds the loss gradient w.r.t. every emitted hidden state.
    """
    x, w_x, w_h, states, gates = cache
    n, steps, _ = x.shape
    hid = w_h.shape[1]
    wz_h, wr_h, wc_h = w_h[:hid], w_h[hid:2 * hid], w_h[2 * hid:]
    dxproj = np.zeros((n, steps, 3 * hid), dtype=dstates.dtype)
    dw_h = np.zeros_like(w_h)
    dh = np.zeros((n, hid), dtype=dstates.dtype)
    for t in range(steps - 1, -1, -1):
        dh = dh + dstates[:, t]
        h_prev = states[:, t - 1] if t > 0 else np.zeros((n, hid), dtype=x.dtype)
        z, r, c = gates[:, t, 0], gates[:, t, 1], gates[:, t, 2]
        dc = dh * z
        dz = dh * (c - h_prev)
        dh_prev = dh * (1.0 - z)
        dac = dc * (1.0 - c * c)
        rh = r * h_prev
        dw_h[2 * hid:] += dac.T @ rh
        drh = dac @ wc_h
        dr = drh * h_prev
        dh_prev += drh * r
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        dw_h[:hid] += daz.T @ h_prev
        dw_h[hid:2 * hid] += dar.T @ h_prev
        dh_prev += daz @ wz_h + dar @ wr_h
        dxproj[:, t, :hid] = daz
        dxproj[:, t, hid:2 * hid] = dar
        dxproj[:, t, 2 * hid:] = dac
        dh = dh_prev
    flat = dxproj.reshape(n * steps, 3 * hid)
    dw_x = flat.T @ x.reshape(n * steps, -1)
    db = flat.sum(axis=0)
    dx = dxproj @ w_x
    return dx, dw_x, dw_h, db
