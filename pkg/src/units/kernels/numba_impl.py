"""Numba-compiled convolution kernels.

Inner loops run over the contiguous channel axis so LLVM can vectorize the
broadcast-FMA pattern.  fastmath only reorders reductions; a given build is
still deterministic run-to-run, which is what the training contracts need.
"""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def _conv1d_forward(x, w, b, dilation):
    B, T, Ci = x.shape
    k, _, Co = w.shape
    y = np.empty((B, T, Co), dtype=np.float64)
    for n in range(B):
        for t in range(T):
            acc = y[n, t]
            for o in range(Co):
                acc[o] = b[o]
            for j in range(k):
                src = t - (k - 1 - j) * dilation
                if src < 0:
                    continue
                for c in range(Ci):
                    xv = x[n, src, c]
                    wv = w[j, c]
                    for o in range(Co):
                        acc[o] += xv * wv[o]
    return y


@njit(cache=True, fastmath=True)
def _conv1d_backward(x, w, gy, dilation):
    B, T, Ci = x.shape
    k, _, Co = w.shape
    gx = np.zeros((B, T, Ci), dtype=np.float64)
    gw = np.zeros((k, Ci, Co), dtype=np.float64)
    gb = np.zeros(Co, dtype=np.float64)
    # (o, c)-transposed weights give a contiguous channel axis for the
    # input-gradient FMA loop.
    wt = np.empty((k, Co, Ci), dtype=np.float64)
    for j in range(k):
        for c in range(Ci):
            for o in range(Co):
                wt[j, o, c] = w[j, c, o]
    for n in range(B):
        for t in range(T):
            g = gy[n, t]
            for o in range(Co):
                gb[o] += g[o]
            for j in range(k):
                src = t - (k - 1 - j) * dilation
                if src < 0:
                    continue
                xs = x[n, src]
                gxs = gx[n, src]
                for c in range(Ci):
                    xv = xs[c]
                    gww = gw[j, c]
                    for o in range(Co):
                        gww[o] += xv * g[o]
                for o in range(Co):
                    gv = g[o]
                    wto = wt[j, o]
                    for c in range(Ci):
                        gxs[c] += gv * wto[c]
    return gx, gw, gb


def conv1d_forward(x, w, b, dilation):
    return _conv1d_forward(
        np.ascontiguousarray(x), np.ascontiguousarray(w), np.ascontiguousarray(b), dilation
    )


def conv1d_backward(x, w, gy, dilation):
    return _conv1d_backward(
        np.ascontiguousarray(x),
        np.ascontiguousarray(w),
        np.ascontiguousarray(gy),
        dilation,
    )
