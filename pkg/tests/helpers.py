"""Shared test utilities: tiny model configs and the gradient-check harness."""

import numpy as np

from units.nn import Encoder, EncoderConfig, finite_difference_gradient
from units.pretraining import PretrainTemplateConfig

TINY_ENCODER = EncoderConfig(
    architecture="dilated_conv", in_channels=1, depth=2, hidden_width=5,
    repr_dim=4, kernel_size=3, seed=7,
)

TINY_MLP = EncoderConfig(
    architecture="mlp", in_channels=1, depth=2, hidden_width=5, repr_dim=4, seed=7,
)


def tiny_template(family, **kw):
    kw.setdefault("encoder", TINY_ENCODER)
    kw.setdefault("batch_size", 4)
    kw.setdefault("epochs", 2)
    return PretrainTemplateConfig(family=family, **kw)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)


def gradcheck(loss_builder, params: dict, epsilon: float = 1e-6) -> float:
    """Max relative error between backprop and central differences.

    ``loss_builder(tensors)`` builds the loss from a dict of Tensors;
    ``params`` holds the numpy arrays to differentiate against.
    """
    from units.autodiff import Tensor

    tensors = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    loss = loss_builder(tensors)
    loss.backward()

    def loss_np(arrays):
        frozen = {k: Tensor(v) for k, v in arrays.items()}
        return loss_builder(frozen).item()

    numeric = finite_difference_gradient(loss_np, params, epsilon)
    worst = 0.0
    for name in params:
        analytic = tensors[name].grad
        if analytic is None:
            analytic = np.zeros_like(params[name])
        worst = max(worst, relative_error(analytic, numeric[name]))
    return worst


def encoder_with_params(cfg: EncoderConfig, params: dict) -> Encoder:
    return Encoder(cfg, {k: v.copy() for k, v in params.items()})
