"""Layer primitives with explicit forward/backward passes.

Activations are (batch, length, channels) arrays; dense inputs are
(batch, features).  Every forward returns (output, cache) and the matching
backward consumes that cache.  Convolutions and pools use valid padding:
out_len = (in_len - kernel) // stride + 1.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

BN_MOMENTUM = 0.99
BN_EPS = 1e-3
CCE_CLAMP = 1e-7


def conv_out_len(n_in: int, kernel: int, stride: int) -> int:
    return (n_in - kernel) // stride + 1


def _windows(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    # (B, L, C) -> read-only view (B, L_out, kernel, C)
    b, length, ch = x.shape
    n_out = conv_out_len(length, kernel, stride)
    sb, sl, sc = x.strides
    return as_strided(
        x, (b, n_out, kernel, ch), (sb, sl * stride, sl, sc), writeable=False
    )


def conv1d_forward(x, w, b, stride):
    # w: (kernel, in_ch, out_ch), b: (out_ch,)
    win = _windows(x, w.shape[0], stride)
    out = np.einsum("blkc,kcf->blf", win, w, optimize=True) + b
    return out, (x, w, stride)


def conv1d_backward(dout, cache):
    x, w, stride = cache
    kernel = w.shape[0]
    win = _windows(x, kernel, stride)
    dw = np.einsum("blkc,blf->kcf", win, dout, optimize=True)
    db = dout.sum(axis=(0, 1))
    dwin = np.einsum("blf,kcf->blkc", dout, w, optimize=True)
    dx = np.zeros_like(x)
    n_out = dout.shape[1]
    for k in range(kernel):
        dx[:, k : k + (n_out - 1) * stride + 1 : stride, :] += dwin[:, :, k, :]
    return dx, dw, db


def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(dout, cache):
    return dout * (cache > 0)


def avgpool1d_forward(x, kernel, stride):
    win = _windows(x, kernel, stride)
    out = win.mean(axis=2)
    return out, (x.shape, kernel, stride)


def avgpool1d_backward(dout, cache):
    x_shape, kernel, stride = cache
    dx = np.zeros(x_shape, dtype=dout.dtype)
    n_out = dout.shape[1]
    contrib = dout / kernel
    for k in range(kernel):
        dx[:, k : k + (n_out - 1) * stride + 1 : stride, :] += contrib
    return dx


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train: bool):
    """Per-channel batch normalization over the (batch, length) axes.

    Train mode normalizes with the biased batch statistics and returns
    updated running statistics; inference normalizes with the running ones.
    """
    if train:
        mu = x.mean(axis=(0, 1))
        var = x.var(axis=(0, 1))
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mu) * inv_std
        out = gamma * xhat + beta
        new_mean = BN_MOMENTUM * running_mean + (1.0 - BN_MOMENTUM) * mu
        new_var = BN_MOMENTUM * running_var + (1.0 - BN_MOMENTUM) * var
        cache = (xhat, inv_std, gamma)
        return out, cache, new_mean, new_var
    inv_std = 1.0 / np.sqrt(running_var + BN_EPS)
    out = gamma * (x - running_mean) * inv_std + beta
    return out, None, running_mean, running_var


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma = cache
    n = dout.shape[0] * dout.shape[1]
    dgamma = (dout * xhat).sum(axis=(0, 1))
    dbeta = dout.sum(axis=(0, 1))
    dxhat = dout * gamma
    dx = (inv_std / n) * (
        n * dxhat
        - dxhat.sum(axis=(0, 1))
        - xhat * (dxhat * xhat).sum(axis=(0, 1))
    )
    return dx, dgamma, dbeta


def global_avgpool_forward(x):
    return x.mean(axis=1), x.shape


def global_avgpool_backward(dout, cache):
    x_shape = cache
    return np.broadcast_to(dout[:, None, :] / x_shape[1], x_shape).astype(dout.dtype)


def dense_forward(x, w, b):
    return x @ w + b, (x, w)


def dense_backward(dout, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def dropout_forward(x, rate: float, rng, train: bool):
    """Inverted dropout: scaled by 1/(1-rate) at train time, identity otherwise.

    No randomness is consumed when rate == 0 or in inference mode.
    """
    if not train or rate == 0.0:
        return x, None
    mask = rng.random(x.shape) >= rate
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    return x * mask * scale, (mask, scale)


def dropout_backward(dout, cache):
    if cache is None:
        return dout
    mask, scale = cache
    return dout * mask * scale


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def weighted_cce(probs, targets_onehot, class_weights):
    """Mean weighted categorical cross-entropy over a batch.

    Per example: -w[target] * log(p[target]) with p clamped away from 0 and 1.
    Accepts single examples (1-D) or batches (2-D).
    """
    p = np.atleast_2d(probs)
    t = np.atleast_2d(targets_onehot)
    w = np.asarray(class_weights, dtype=np.float64)
    p_target = np.clip((p * t).sum(axis=1), CCE_CLAMP, 1.0 - CCE_CLAMP)
    w_target = t @ w
    return float((-w_target * np.log(p_target)).mean())


def cce_softmax_grad(probs, targets_onehot, class_weights):
    """Gradient of the mean weighted CCE with respect to the logits."""
    w = np.asarray(class_weights, dtype=probs.dtype)
    w_target = (targets_onehot @ w)[:, None]
    return w_target * (probs - targets_onehot) / probs.shape[0]
