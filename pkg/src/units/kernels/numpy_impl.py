"""BLAS-backed reference implementation of the convolution kernels.

A causal dilated conv with kernel size k is k shifted matmuls, which keeps
everything inside dgemm instead of python loops.
"""

import numpy as np


def conv1d_forward(x, w, b, dilation):
    """Causal dilated 1-d convolution.

    x: (B, T, Cin), w: (k, Cin, Cout), b: (Cout,).  Tap j=k-1 reads the
    current timestep, earlier taps read dilation-spaced history; out-of-range
    history is zero.  Returns (B, T, Cout).
    """
    B, T, _ = x.shape
    k, _, Co = w.shape
    pad = (k - 1) * dilation
    xp = np.zeros((B, T + pad, x.shape[2]), dtype=x.dtype)
    xp[:, pad:, :] = x
    y = np.empty((B, T, Co), dtype=x.dtype)
    y[:] = b
    for j in range(k):
        y += xp[:, j * dilation : j * dilation + T, :] @ w[j]
    return y


def conv1d_backward(x, w, gy, dilation):
    """Gradients of conv1d_forward w.r.t. input, weights and bias."""
    B, T, Ci = x.shape
    k, _, Co = w.shape
    pad = (k - 1) * dilation
    xp = np.zeros((B, T + pad, Ci), dtype=x.dtype)
    xp[:, pad:, :] = x

    gb = gy.sum(axis=(0, 1))
    gw = np.empty_like(w)
    gxp = np.zeros_like(xp)
    gy_flat = gy.reshape(-1, Co)
    for j in range(k):
        sl = xp[:, j * dilation : j * dilation + T, :]
        gw[j] = sl.reshape(-1, Ci).T @ gy_flat
        gxp[:, j * dilation : j * dilation + T, :] += gy @ w[j].T
    gx = gxp[:, pad:, :]
    return gx, gw, gb
