"""NumPy implementations of the hot loops in ``_ckernels.pyx``.

Used when the compiled extension is unavailable or when
``GRASPLAB_KERNELS=python`` is set. Results agree with the compiled
versions to floating-point summation order.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, kh, kw, stride, pad):
    N, C, H, W = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    # (N, C, oh, ow, kh, kw) -> (N, C, kh, kw, oh, ow)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(N, C * kh * kw, oh * ow)
    return np.ascontiguousarray(cols)


def col2im(cols, shape, kh, kw, stride, pad):
    N, C, H, W = shape
    oh = (H + 2 * pad - kh) // stride + 1
    ow = (W + 2 * pad - kw) // stride + 1
    padded = np.zeros((N, C, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    c6 = cols.reshape(N, C, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            padded[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += c6[:, :, i, j]
    if pad:
        return padded[:, :, pad:pad + H, pad:pad + W].copy()
    return padded


def auc_pair_counts(pos, neg):
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    wins = 0
    ties = 0
    # chunk rows so the pair matrix stays small
    for start in range(0, pos.size, 1024):
        block = pos[start:start + 1024, None]
        wins += int(np.count_nonzero(block > neg[None, :]))
        ties += int(np.count_nonzero(block == neg[None, :]))
    return wins, ties


def _right_slope(breakpoints, values, x):
    idx = np.searchsorted(breakpoints, x, side="right") - 1
    idx = np.clip(idx, 0, breakpoints.size - 2)
    return (values[idx + 1] - values[idx]) / (breakpoints[idx + 1] - breakpoints[idx])


def pwl_descent(breakpoints, values, x0, steps, step_size):
    breakpoints = np.asarray(breakpoints, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    x = np.array(x0, dtype=np.float64)
    a, b = breakpoints[0], breakpoints[-1]
    for _ in range(steps):
        x = np.clip(x - step_size * _right_slope(breakpoints, values, x), a, b)
    return x
