"""Numerical primitives: dense, 3x3 conv, batch norm, pooling, softmax CE.

Every primitive is a pure function pair (forward, backward) operating on
arrays whose dtype follows the parameter dtype, so the same code serves the
float32 training path and the float64 gradient-check path.
"""
from __future__ import annotations

import numpy as np

BN_EPS = 1e-5


class NonFiniteLossError(ArithmeticError):
    """Loss evaluated to NaN or inf; carries the offending value."""

    def __init__(self, value: float):
        self.value = value
        super().__init__(f"loss is non-finite ({value})")


def dense_forward(x, W, b):
    return x @ W + b, x


def dense_backward(dy, x, W):
    return dy @ W.T, [x.T @ dy, dy.sum(axis=0)]


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


def conv3x3_forward(x, W, b):
    """Same-padded 3x3 convolution on NCHW input.

    Implemented as nine shifted (C_in x C_out) contractions to keep the
    backward cache at O(N*C*H*W) instead of materializing im2col columns.
    """
    n, _, h, w = x.shape
    c_out = W.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    y = np.zeros((n, h, w, c_out), dtype=x.dtype)
    for di in range(3):
        for dj in range(3):
            patch = xp[:, :, di:di + h, dj:dj + w]
            y += np.tensordot(patch, W[:, :, di, dj], axes=([1], [1]))
    y += b
    return np.ascontiguousarray(y.transpose(0, 3, 1, 2)), xp


def conv3x3_backward(dy, xp, W):
    n, c_out, h, w = dy.shape
    db = dy.sum(axis=(0, 2, 3))
    dW = np.empty_like(W)
    dxp = np.zeros_like(xp)
    dy_nhwc = dy.transpose(0, 2, 3, 1)
    for di in range(3):
        for dj in range(3):
            patch = xp[:, :, di:di + h, dj:dj + w]
            dW[:, :, di, dj] = np.tensordot(dy, patch, axes=([0, 2, 3], [0, 2, 3]))
            dxp[:, :, di:di + h, dj:dj + w] += np.tensordot(
                dy_nhwc, W[:, :, di, dj], axes=([3], [0])
            ).transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], [dW, db]


def _bn_axes(x):
    # Dense activations normalize over the batch axis, conv activations over
    # batch and both spatial axes; features/channels are kept.
    return (0,) if x.ndim == 2 else (0, 2, 3)


def _bn_shape(x):
    return (1, -1) if x.ndim == 2 else (1, -1, 1, 1)


def bn_forward_train(x, gamma, beta):
    """Batch-norm forward in train mode; biased variance throughout."""
    axes = _bn_axes(x)
    shape = _bn_shape(x)
    mean = x.mean(axis=axes)
    var = x.var(axis=axes)
    inv_std = 1.0 / np.sqrt(var + x.dtype.type(BN_EPS))
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    y = gamma.reshape(shape) * xhat + beta.reshape(shape)
    cache = (xhat, inv_std, gamma)
    return y, cache, (mean, var)


def bn_forward_eval(x, gamma, beta, running_mean, running_var):
    shape = _bn_shape(x)
    inv_std = 1.0 / np.sqrt(running_var + x.dtype.type(BN_EPS))
    xhat = (x - running_mean.reshape(shape)) * inv_std.reshape(shape)
    return gamma.reshape(shape) * xhat + beta.reshape(shape)


def bn_backward(dy, cache):
    xhat, inv_std, gamma = cache
    axes = _bn_axes(dy)
    shape = _bn_shape(dy)
    m = dy.size // dy.shape[1] if dy.ndim == 4 else dy.shape[0]
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * gamma.reshape(shape)
    dx = (inv_std.reshape(shape) / m) * (
        m * dxhat
        - dxhat.sum(axis=axes).reshape(shape)
        - xhat * (dxhat * xhat).sum(axis=axes).reshape(shape)
    )
    return dx, [dgamma, dbeta]


def gap_forward(x):
    n, c, h, w = x.shape
    return x.mean(axis=(2, 3)), (n, c, h, w)


def gap_backward(dy, shape):
    n, c, h, w = shape
    return np.broadcast_to(dy[:, :, None, None], (n, c, h, w)) / dy.dtype.type(h * w)


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean CE over the batch and its gradient w.r.t. the logits.

    Raises NonFiniteLossError instead of letting NaN/inf flow downstream.
    """
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = float((lse - shifted[np.arange(n), labels]).mean())
    if not np.isfinite(loss):
        raise NonFiniteLossError(loss)
    probs = np.exp(shifted - lse[:, None])
    probs[np.arange(n), labels] -= 1.0
    return loss, probs / logits.dtype.type(n)
