"""Pure numpy versions of the convolution and pooling kernels.

Shapes follow (batch, channels, height, width). Convolutions are "valid"
cross-correlations with stride 1.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x, w, b):
    k = w.shape[2]
    patches = sliding_window_view(x, (k, k), axis=(2, 3))  # (N, C, Ho, Wo, k, k)
    return np.einsum("nchwij,fcij->nfhw", patches, w, optimize=True) + b[None, :, None, None]


def conv2d_backward(x, w, dy, need_dx=True):
    k = w.shape[2]
    patches = sliding_window_view(x, (k, k), axis=(2, 3))
    dw = np.einsum("nchwij,nfhw->fcij", patches, dy, optimize=True)
    db = dy.sum(axis=(0, 2, 3))
    dx = None
    if need_dx:
        # Full correlation of dy with the flipped kernel.
        padded = np.pad(dy, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
        win = sliding_window_view(padded, (k, k), axis=(2, 3))
        dx = np.einsum("nfhwij,fcij->nchw", win, w[:, :, ::-1, ::-1], optimize=True)
    return dx, dw, db


def avgpool_forward(x, size, stride):
    win = sliding_window_view(x, (size, size), axis=(2, 3))[:, :, ::stride, ::stride]
    return win.mean(axis=(4, 5))


def avgpool_backward(dy, x_shape, size, stride):
    dx = np.zeros(x_shape)
    share = dy / (size * size)
    ho, wo = dy.shape[2], dy.shape[3]
    for i in range(size):
        for j in range(size):
            dx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += share
    return dx


def adam_update(theta, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """In-place bias-corrected Adam update of flat arrays."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    theta -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
