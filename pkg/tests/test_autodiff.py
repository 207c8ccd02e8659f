"""Op-level gradient checks for the autodiff engine."""

import numpy as np
import pytest

from units.autodiff import Tensor, concat, conv1d_causal, l2_normalize, log_softmax
from units.errors import ParameterError

from helpers import gradcheck


def test_backward_requires_scalar():
    t = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ParameterError):
        (t * 2).backward()


@pytest.mark.parametrize(
    "name,builder",
    [
        ("add_broadcast", lambda p: (p["a"] + p["b"]).sum()),
        ("mul_broadcast", lambda p: (p["a"] * p["b"]).mean()),
        ("sub_div", lambda p: ((p["a"] - 0.5) / (p["b"] + 3.0)).sum()),
        ("pow", lambda p: (p["a"] ** 3).sum()),
        ("exp_log", lambda p: ((p["a"] * p["a"] + 1.0).log() + p["b"].exp()).sum()),
        ("sqrt", lambda p: (p["a"] * p["a"] + 2.0).sqrt().sum()),
        ("tanh", lambda p: p["a"].tanh().sum()),
        ("sigmoid", lambda p: p["a"].sigmoid().sum()),
        ("softplus", lambda p: p["a"].softplus().sum()),
        ("abs", lambda p: p["a"].abs().sum()),
        ("relu", lambda p: (p["a"] + 0.05).relu().sum()),
        ("sum_axis", lambda p: (p["a"].sum(axis=1) * p["b"][:, 0]).sum()),
        ("mean_axis", lambda p: p["a"].mean(axis=0).sum()),
        ("max_axis", lambda p: p["a"].max(axis=1).sum()),
        ("reshape_transpose", lambda p: p["a"].reshape(6, 2).transpose(1, 0).sum(axis=1).mean()),
        ("getitem", lambda p: p["a"][1:, ::2].sum()),
        ("fancy_index", lambda p: p["a"][np.array([0, 2]), np.array([1, 3])].sum()),
        ("concat", lambda p: concat([p["a"], p["b"] * 2], axis=1).mean()),
        ("logsumexp", lambda p: log_softmax(p["a"], axis=1).sum()),
        ("l2norm", lambda p: l2_normalize(p["a"], axis=1).sum()),
    ],
)
def test_op_gradients(name, builder):
    rng = np.random.default_rng(hash(name) % 2**32)
    params = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((3, 4))}
    assert gradcheck(builder, params) < 1e-6


def test_matmul_gradient():
    rng = np.random.default_rng(1)
    params = {"a": rng.standard_normal((3, 4)), "w": rng.standard_normal((4, 2))}
    assert gradcheck(lambda p: (p["a"] @ p["w"]).sum(), params) < 1e-6


def test_conv_gradient():
    rng = np.random.default_rng(2)
    params = {
        "x": rng.standard_normal((2, 7, 3)),
        "w": rng.standard_normal((3, 3, 4)),
        "b": rng.standard_normal(4),
    }
    for dilation in (1, 2):
        err = gradcheck(
            lambda p: (conv1d_causal(p["x"], p["w"], p["b"], dilation) ** 2).sum(), params
        )
        assert err < 1e-6


def test_safe_sqrt_zero_subgradient():
    t = Tensor(np.array([0.0, 4.0]), requires_grad=True)
    out = t.safe_sqrt().sum()
    out.backward()
    assert t.grad[0] == 0.0
    assert abs(t.grad[1] - 0.25) < 1e-12


def test_max_routes_to_first_occurrence():
    t = Tensor(np.array([[1.0, 3.0, 3.0]]), requires_grad=True)
    t.max(axis=1).sum().backward()
    assert np.array_equal(t.grad, [[0.0, 1.0, 0.0]])


def test_grad_accumulates_over_reuse():
    t = Tensor(np.array([2.0]), requires_grad=True)
    (t * t + t).sum().backward()
    assert np.allclose(t.grad, [5.0])  # d/dt (t^2 + t) = 2t + 1


def test_detach_blocks_gradient():
    t = Tensor(np.array([3.0]), requires_grad=True)
    (t.detach() * t).sum().backward()
    assert np.allclose(t.grad, [3.0])


def test_no_grad_without_requires():
    t = Tensor(np.ones((2, 2)))
    out = (t * 2).sum()
    assert not out.requires_grad
