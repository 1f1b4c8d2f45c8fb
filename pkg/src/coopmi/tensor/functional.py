"""Stateless numeric primitives shared by the layers and the losses.

Image tensors are channel-last: ``(batch, height, width, channels)``. Convolution
kernels are ``(3, 3, in_channels, out_channels)``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LN2 = float(np.log(2.0))


def softplus(x):
    """ln(1 + e^x) in the overflow-free form max(x, 0) + ln(1 + e^-|x|)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return float(out) if out.ndim == 0 else out


def sigmoid(x):
    return np.exp(-np.asarray(softplus(-np.asarray(x, dtype=np.float64))))


def softmax(z, axis=-1):
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(z, axis=-1):
    z = z - np.max(z, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def softmax_backward(p, dp, axis=-1):
    return p * (dp - np.sum(dp * p, axis=axis, keepdims=True))


def entropy(p, axis=-1):
    """Shannon entropy in nats, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    logp = np.log(np.where(p > 0, p, 1.0))
    return -np.sum(p * logp, axis=axis)


def _patches(x, k):
    # (B, H-k+1, W-k+1, C, k, k) -> (B, Ho, Wo, k, k, C)
    return sliding_window_view(x, (k, k), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)


def conv2d_valid(x, kernel):
    """Stride-1 cross-correlation without padding: (B,H,W,C) -> (B,H-2,W-2,D)."""
    k, _, c, d = kernel.shape
    b, h, w, _ = x.shape
    ho, wo = h - k + 1, w - k + 1
    if c >= 16:
        # wide inputs: nine shifted matmuls beat materialising the im2col matrix
        out = x[:, :ho, :wo, :] @ kernel[0, 0]
        for u in range(k):
            for v in range(k):
                if u or v:
                    out += x[:, u:u + ho, v:v + wo, :] @ kernel[u, v]
        return out
    cols = _patches(x, k).reshape(b * ho * wo, k * k * c)
    return (cols @ kernel.reshape(k * k * c, d)).reshape(b, ho, wo, d)


def conv2d_transpose(y, kernel):
    """Adjoint of :func:`conv2d_valid`: (B,h,w,D) -> (B,h+2,w+2,C)."""
    k = kernel.shape[0]
    padded = np.pad(y, ((0, 0), (k - 1, k - 1), (k - 1, k - 1), (0, 0)))
    flipped = kernel[::-1, ::-1].transpose(0, 1, 3, 2)
    return conv2d_valid(padded, flipped)


def conv2d_kernel_grad(x, dy, k=3):
    """Gradient of ``sum(dy * conv2d_valid(x, K))`` with respect to ``K``."""
    b, ho, wo, d = dy.shape
    c = x.shape[-1]
    cols = _patches(x, k).reshape(b * ho * wo, k * k * c)
    return (cols.T @ dy.reshape(b * ho * wo, d)).reshape(k, k, c, d)


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
