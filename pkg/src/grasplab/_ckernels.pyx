# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Signatures mirror ``grasplab._pykernels``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def _im2col(const real[:, :, :, ::1] x, real[:, :, ::1] out,
            int kh, int kw, int stride, int pad, int oh, int ow):
    cdef Py_ssize_t n, c, i, j, p, q, row, col
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t hi, wi
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(kh):
                    for j in range(kw):
                        row = (c * kh + i) * kw + j
                        for p in range(oh):
                            hi = p * stride + i - pad
                            for q in range(ow):
                                col = p * ow + q
                                wi = q * stride + j - pad
                                if hi < 0 or hi >= H or wi < 0 or wi >= W:
                                    out[n, row, col] = 0
                                else:
                                    out[n, row, col] = x[n, c, hi, wi]


def im2col(x, int kh, int kw, int stride, int pad):
    x = np.ascontiguousarray(x)
    N, C, H, W = x.shape
    oh = (H + 2 * pad - kh) // stride + 1
    ow = (W + 2 * pad - kw) // stride + 1
    out = np.empty((N, C * kh * kw, oh * ow), dtype=x.dtype)
    _im2col(x, out, kh, kw, stride, pad, oh, ow)
    return out


def _col2im(const real[:, :, ::1] cols, real[:, :, :, ::1] out,
            int kh, int kw, int stride, int pad, int oh, int ow):
    cdef Py_ssize_t n, c, i, j, p, q, row
    cdef Py_ssize_t N = out.shape[0], C = out.shape[1], H = out.shape[2], W = out.shape[3]
    cdef Py_ssize_t hi, wi
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(kh):
                    for j in range(kw):
                        row = (c * kh + i) * kw + j
                        for p in range(oh):
                            hi = p * stride + i - pad
                            if hi < 0 or hi >= H:
                                continue
                            for q in range(ow):
                                wi = q * stride + j - pad
                                if wi < 0 or wi >= W:
                                    continue
                                out[n, c, hi, wi] += cols[n, row, p * ow + q]


def col2im(cols, shape, int kh, int kw, int stride, int pad):
    cols = np.ascontiguousarray(cols)
    N, C, H, W = shape
    oh = (H + 2 * pad - kh) // stride + 1
    ow = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((N, C, H, W), dtype=cols.dtype)
    _col2im(cols, out, kh, kw, stride, pad, oh, ow)
    return out


def auc_pair_counts(const double[::1] pos, const double[::1] neg):
    """Exhaustive (wins, ties) over all positive/negative pairs."""
    cdef Py_ssize_t i, j
    cdef long long wins = 0, ties = 0
    cdef double a
    with nogil:
        for i in range(pos.shape[0]):
            a = pos[i]
            # branch-free so the inner loop vectorizes
            for j in range(neg.shape[0]):
                wins += a > neg[j]
                ties += a == neg[j]
    return wins, ties


cdef inline double _right_slope(const double[::1] bp, const double[::1] vals,
                                double x) noexcept nogil:
    # right-hand slope: the piece containing [x, x+); last piece at the right end
    cdef Py_ssize_t lo = 0, hi = bp.shape[0] - 1, mid
    if x >= bp[hi - 1]:
        lo = hi - 1
    else:
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if bp[mid] <= x:
                lo = mid
            else:
                hi = mid
    return (vals[lo + 1] - vals[lo]) / (bp[lo + 1] - bp[lo])


def pwl_descent(const double[::1] breakpoints, const double[::1] values, const double[::1] x0,
                int steps, double step_size):
    """Projected subgradient descent on a piecewise-linear function, one run per x0."""
    cdef Py_ssize_t k, s
    cdef double x, a = breakpoints[0], b = breakpoints[breakpoints.shape[0] - 1]
    out = np.empty(x0.shape[0], dtype=np.float64)
    cdef double[::1] res = out
    with nogil:
        for k in range(x0.shape[0]):
            x = x0[k]
            for s in range(steps):
                x = x - step_size * _right_slope(breakpoints, values, x)
                if x < a:
                    x = a
                elif x > b:
                    x = b
            res[k] = x
    return out
