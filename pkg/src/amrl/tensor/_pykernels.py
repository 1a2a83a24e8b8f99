"""Pure numpy conv kernels (3x3, stride 1, zero padding 1).

Used when the compiled extension is unavailable or ``AMRL_KERNELS=python``.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _patches(x):
    # [C, H, W] -> [C, H, W, 3, 3] view over the zero-padded input
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    return sliding_window_view(xp, (3, 3), axis=(1, 2))


def conv2d_forward(x, w, b):
    out = np.tensordot(w, _patches(x), axes=([1, 2, 3], [0, 3, 4]))
    out += b[:, None, None]
    return out


def conv2d_backward(x, w, gout):
    gb = gout.sum(axis=(1, 2))
    gw = np.tensordot(gout, _patches(x), axes=([1, 2], [1, 2]))
    w_flip = w[:, :, ::-1, ::-1]
    gx = np.tensordot(w_flip, _patches(gout), axes=([0, 2, 3], [0, 3, 4]))
    return gx, gw, gb
