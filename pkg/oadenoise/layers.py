# -*- coding: utf-8 -*-
"""Forward and backward passes of the network building blocks.

Arrays are single samples laid out as ``(channels, height, width)``;
batches of one are the only training mode, so no batch axis is carried.
Every reduction uses `numpy.tensordot` or `numpy.sum` over fixed axes, so
results do not depend on threading.

"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = ['conv2d', 'conv2d_backward', 'batch_norm', 'batch_norm_backward',
           'relu', 'relu_backward', 'max_pool2', 'max_pool2_backward',
           'upsample2', 'upsample2_backward', 'he_normal']


def _windows(x, k):
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    return sliding_window_view(xp, (k, k), axis=(1, 2))


def conv2d(x, weight, bias=None):
    """Same-size 2D cross-correlation with zero padding.

    Parameters
    ----------
    x : ndarray
        Input of shape ``(c_in, h, w)``.

    weight : ndarray
        Kernel of shape ``(c_out, c_in, k, k)`` with odd ``k``.

    bias : ndarray or `None`
        Shape ``(c_out,)``.

    Returns
    -------
    y : ndarray
        Shape ``(c_out, h, w)``.

    """
    k = weight.shape[-1]
    if k == 1:
        y = np.tensordot(weight[:, :, 0, 0], x, axes=([1], [0]))
    else:
        y = np.tensordot(weight, _windows(x, k), axes=([1, 2, 3], [0, 3, 4]))
    if bias is not None:
        y = y + bias[:, None, None]
    return y


def conv2d_backward(x, weight, grad_y, with_bias=False):
    """Gradients of :func:`conv2d`.

    Returns
    -------
    grad_x, grad_weight : ndarray

    grad_bias : ndarray or `None`

    """
    k = weight.shape[-1]
    if k == 1:
        grad_w = np.tensordot(grad_y, x, axes=([1, 2], [1, 2]))
        grad_w = grad_w[:, :, None, None]
        grad_x = np.tensordot(weight[:, :, 0, 0], grad_y, axes=([0], [0]))
    else:
        grad_w = np.tensordot(grad_y, _windows(x, k), axes=([1, 2], [1, 2]))
        flipped = weight[:, :, ::-1, ::-1]
        grad_x = np.tensordot(flipped, _windows(grad_y, k),
                              axes=([0, 2, 3], [0, 3, 4]))
    grad_b = grad_y.sum(axis=(1, 2)) if with_bias else None
    return grad_x, grad_w, grad_b


def batch_norm(x, gamma, beta, running_mean, running_var, train,
               momentum=0.1, eps=1e-5, update_stats=True):
    """Per-channel feature normalization.

    In training mode the statistics of the current sample (over height and
    width) are used and, if ``update_stats``, blended into the running
    statistics in place. Otherwise the running statistics are used.

    Returns
    -------
    y : ndarray

    cache : tuple or `None`
        Needed by :func:`batch_norm_backward` (training mode only).

    """
    if train:
        mean = x.mean(axis=(1, 2))
        var = x.var(axis=(1, 2))
        if update_stats:
            n = x.shape[1] * x.shape[2]
            unbiased = var * n / (n - 1) if n > 1 else var
            running_mean *= 1 - momentum
            running_mean += momentum * mean
            running_var *= 1 - momentum
            running_var += momentum * unbiased
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean[:, None, None]) * inv_std[:, None, None]
    y = gamma[:, None, None] * x_hat + beta[:, None, None]
    cache = (x_hat, inv_std, gamma) if train else None
    return y, cache


def batch_norm_backward(cache, grad_y):
    """Gradients of training-mode :func:`batch_norm`.

    Returns
    -------
    grad_x, grad_gamma, grad_beta : ndarray

    """
    x_hat, inv_std, gamma = cache
    grad_gamma = (grad_y * x_hat).sum(axis=(1, 2))
    grad_beta = grad_y.sum(axis=(1, 2))
    g_mean = grad_y.mean(axis=(1, 2))[:, None, None]
    gx_mean = (grad_y * x_hat).mean(axis=(1, 2))[:, None, None]
    grad_x = ((gamma * inv_std)[:, None, None] *
              (grad_y - g_mean - x_hat * gx_mean))
    return grad_x, grad_gamma, grad_beta


def relu(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_y):
    return np.where(x > 0, grad_y, 0)


def max_pool2(x):
    """2x2 max pooling with stride 2.

    Returns
    -------
    y : ndarray
        Shape ``(c, h // 2, w // 2)``.

    argmax : ndarray
        Flat index (0..3) of the winner within each window, first wins ties.

    """
    c, h, w = x.shape
    blocks = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4)
    blocks = blocks.reshape(c, h // 2, w // 2, 4)
    argmax = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]
    return y, argmax


def max_pool2_backward(argmax, grad_y):
    c, h2, w2 = grad_y.shape
    blocks = np.zeros((c, h2, w2, 4), dtype=grad_y.dtype)
    np.put_along_axis(blocks, argmax[..., None], grad_y[..., None], axis=-1)
    blocks = blocks.reshape(c, h2, w2, 2, 2).transpose(0, 1, 3, 2, 4)
    return blocks.reshape(c, 2 * h2, 2 * w2)


def upsample2(x):
    """Nearest-neighbour upsampling by two along height and width."""
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample2_backward(grad_y):
    c, h, w = grad_y.shape
    return grad_y.reshape(c, h // 2, 2, w // 2, 2).sum(axis=(2, 4))


def he_normal(rng, shape, dtype=np.float32):
    """He-normal initialization for a ``(c_out, c_in, k, k)`` kernel."""
    fan_in = shape[1] * shape[2] * shape[3]
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
