"""Backend parity and contract tests for the convolution kernels."""

import os
import subprocess
import sys

import numpy as np
import pytest

from units.kernels import numba_impl, numpy_impl


@pytest.mark.parametrize("dilation", [1, 2, 4])
@pytest.mark.parametrize("shape", [(2, 9, 1, 4), (3, 16, 5, 6)])
def test_forward_parity(shape, dilation, rng):
    b, t, ci, co = shape
    x = rng.standard_normal((b, t, ci))
    w = rng.standard_normal((3, ci, co))
    bias = rng.standard_normal(co)
    y_np = numpy_impl.conv1d_forward(x, w, bias, dilation)
    y_nb = numba_impl.conv1d_forward(x, w, bias, dilation)
    assert np.allclose(y_np, y_nb, atol=1e-12)


@pytest.mark.parametrize("dilation", [1, 3])
def test_backward_parity(dilation, rng):
    x = rng.standard_normal((2, 12, 4))
    w = rng.standard_normal((3, 4, 5))
    gy = rng.standard_normal((2, 12, 5))
    for a, b in zip(
        numpy_impl.conv1d_backward(x, w, gy, dilation),
        numba_impl.conv1d_backward(x, w, gy, dilation),
    ):
        assert np.allclose(a, b, atol=1e-10)


def test_causality(rng):
    """Output at t must not see inputs after t."""
    x = rng.standard_normal((1, 20, 3))
    w = rng.standard_normal((3, 3, 4))
    bias = np.zeros(4)
    y = numpy_impl.conv1d_forward(x, w, bias, 2)
    x2 = x.copy()
    x2[0, 10:, :] += 5.0
    y2 = numpy_impl.conv1d_forward(x2, w, bias, 2)
    assert np.allclose(y[0, :10], y2[0, :10])
    assert not np.allclose(y[0, 10:], y2[0, 10:])


def test_zero_history_padding(rng):
    """Out-of-range history reads as zeros: first output equals current-tap only."""
    x = rng.standard_normal((1, 6, 2))
    w = rng.standard_normal((3, 2, 3))
    bias = rng.standard_normal(3)
    y = numpy_impl.conv1d_forward(x, w, bias, 4)
    expected0 = bias + x[0, 0] @ w[2]
    assert np.allclose(y[0, 0], expected0)


def test_env_flag_selects_backend():
    code = "from units import kernels; print(kernels.BACKEND)"
    for flag, expected in (("numpy", "numpy"), ("numba", "numba"), ("auto", "numpy")):
        env = dict(os.environ, UNITS_KERNELS=flag)
        out = subprocess.run(
            [sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True
        )
        assert out.stdout.strip() == expected, flag
