"""Pure-numpy convolution kernels (fallback backend).

Valid 2D cross-correlation over NHWC inputs with OIHW-style kernels laid out
as (kh, kw, c_out, c_in).  The forward pass lowers to an im2col matrix
product; the input gradient is expressed as a full correlation with the
spatially flipped, channel-transposed kernel so all three entry points share
one BLAS-backed core.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    b, hp, wp, ci = x.shape
    kh, kw, co, ci2 = k.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    windows = sliding_window_view(x, (kh, kw), axis=(1, 2))  # (b,ho,wo,ci,kh,kw)
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(b * ho * wo, kh * kw * ci)
    km = k.transpose(0, 1, 3, 2).reshape(kh * kw * ci, co)
    return np.ascontiguousarray((cols @ km).reshape(b, ho, wo, co))


def conv2d_grad_kernel(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    b, hp, wp, ci = x.shape
    _, ho, wo, co = g.shape
    kh, kw = hp - ho + 1, wp - wo + 1
    windows = sliding_window_view(x, (kh, kw), axis=(1, 2))
    cols = windows.transpose(0, 1, 2, 4, 5, 3).reshape(b * ho * wo, kh * kw * ci)
    gk = cols.T @ g.reshape(b * ho * wo, co)  # (kh*kw*ci, co)
    return np.ascontiguousarray(gk.reshape(kh, kw, ci, co).transpose(0, 1, 3, 2))


def conv2d_grad_input(g: np.ndarray, k: np.ndarray) -> np.ndarray:
    kh, kw, co, ci = k.shape
    gp = np.pad(g, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
    kt = np.ascontiguousarray(k[::-1, ::-1].transpose(0, 1, 3, 2))  # (kh,kw,ci,co)
    return conv2d_forward(gp, kt)
