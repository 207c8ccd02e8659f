"""Encoder/decoder/optimizer contracts and the finite-difference oracle."""

import numpy as np
import pytest

from units.errors import DivergenceError, ParameterError, ShapeError
from units.nn import (
    Decoder,
    Encoder,
    EncoderConfig,
    OptimizerState,
    encode,
    encode_sequence,
    finite_difference_gradient,
    gradient_step,
)

from helpers import TINY_ENCODER, TINY_MLP


class TestEncode:
    def test_zero_mlp_gives_zero_vector(self):
        enc = Encoder(TINY_MLP)
        enc.params = {k: np.zeros_like(v) for k, v in enc.params.items()}
        out = encode(enc, np.ones((1, 6)))
        assert np.array_equal(out, np.zeros(4))

    def test_zero_mlp_gives_zero_matrix(self):
        enc = Encoder(TINY_MLP)
        enc.params = {k: np.zeros_like(v) for k, v in enc.params.items()}
        out = encode_sequence(enc, np.ones((1, 6)))
        assert np.array_equal(out, np.zeros((6, 4)))

    def test_deterministic(self, rng):
        enc = Encoder(TINY_ENCODER)
        x = rng.standard_normal((1, 12))
        assert np.array_equal(encode(enc, x), encode(enc, x))

    def test_dilated_conv_is_time_sensitive(self, rng):
        enc = Encoder(TINY_ENCODER)
        x = rng.standard_normal((1, 16))
        assert not np.allclose(encode(enc, x), encode(enc, x[:, ::-1]))

    def test_pooled_equals_columnwise_max(self, rng):
        enc = Encoder(TINY_ENCODER)
        x = rng.standard_normal((1, 10))
        seq = encode_sequence(enc, x)
        assert np.allclose(encode(enc, x), seq.max(axis=0))

    def test_t1_input_matches_encode(self, rng):
        enc = Encoder(TINY_MLP)
        x = rng.standard_normal((1, 1))
        seq = encode_sequence(enc, x)
        assert seq.shape == (1, 4)
        assert np.allclose(seq[0], encode(enc, x))

    def test_shape_mismatch(self, rng):
        enc = Encoder(TINY_ENCODER)  # expects D=1
        with pytest.raises(ShapeError):
            encode(enc, rng.standard_normal((2, 8)))

    def test_batch_independence(self, rng):
        enc = Encoder(TINY_ENCODER)
        batch = rng.standard_normal((5, 1, 9))
        alone = np.stack([encode(enc, batch[i]) for i in range(5)])
        together = enc.encode_batch(batch)
        assert np.allclose(alone, together, atol=1e-6)

    def test_config_determines_shapes(self):
        cfg = EncoderConfig(in_channels=3, depth=2, hidden_width=6, repr_dim=5)
        a, b = Encoder(cfg), Encoder(cfg)
        assert {k: v.shape for k, v in a.params.items()} == {
            k: v.shape for k, v in b.params.items()
        }

    def test_bad_config(self):
        with pytest.raises(ParameterError):
            EncoderConfig(architecture="transformer")
        with pytest.raises(ParameterError):
            EncoderConfig(repr_dim=0)


class TestDecoder:
    def test_per_timestep_shape(self, rng):
        dec = Decoder("per_timestep", in_dim=4, out_shape=(2,))
        from units.autodiff import Tensor

        z = Tensor(rng.standard_normal((3, 7, 4)))
        out = dec.forward(z, dec.as_tensors(False))
        assert out.shape == (3, 2, 7)

    def test_pooled_shape(self, rng):
        dec = Decoder("pooled", in_dim=4, out_shape=(2, 5))
        from units.autodiff import Tensor

        z = Tensor(rng.standard_normal((3, 4)))
        out = dec.forward(z, dec.as_tensors(False))
        assert out.shape == (3, 2, 5)

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            Decoder("attention", 4, (2,))


class TestGradientStep:
    def test_sgd_zero_gradient_is_fixed_point(self):
        params = {"w": np.array([1.0, 2.0])}
        opt = OptimizerState(algorithm="sgd", learning_rate=0.1)
        out, _ = gradient_step(params, {"w": np.zeros(2)}, opt)
        assert np.array_equal(out["w"], params["w"])

    def test_sgd_update_rule(self):
        params = {"w": np.array([1.0, 2.0])}
        g = np.array([0.5, -1.0])
        opt = OptimizerState(algorithm="sgd", learning_rate=0.1)
        out, _ = gradient_step(params, {"w": g}, opt)
        assert np.allclose(out["w"], params["w"] - 0.1 * g)

    def test_adam_first_step_magnitude(self):
        # first adam step: mhat=g, vhat=g^2 -> update = lr * g/(|g| + eps) ~ lr
        params = {"w": np.array([0.0, 0.0, 0.0])}
        g = np.array([3.0, -0.2, 1e-3])
        opt = OptimizerState(algorithm="adam", learning_rate=1e-3)
        out, opt = gradient_step(params, {"w": g}, opt)
        assert opt.step == 1
        assert np.allclose(np.abs(out["w"]), 1e-3, rtol=1e-4)
        assert np.all(np.sign(out["w"]) == -np.sign(g))

    def test_non_finite_gradient_names_tensor(self):
        opt = OptimizerState()
        with pytest.raises(DivergenceError, match="conv0_w"):
            gradient_step({"conv0_w": np.ones(2)}, {"conv0_w": np.array([1.0, np.inf])}, opt)

    def test_unknown_algorithm(self):
        with pytest.raises(ParameterError):
            OptimizerState(algorithm="rmsprop")


class TestFiniteDifferences:
    def test_quadratic(self):
        grads = finite_difference_gradient(
            lambda p: float((p["p"] ** 2).sum()), {"p": np.array([1.0, 2.0])}
        )
        assert np.allclose(grads["p"], [2.0, 4.0], atol=1e-6)

    def test_constant(self):
        grads = finite_difference_gradient(lambda p: 3.5, {"p": np.array([1.0, 2.0])})
        assert np.array_equal(grads["p"], [0.0, 0.0])

    def test_product_rule(self):
        grads = finite_difference_gradient(
            lambda p: float(p["p"][0] * p["p"][1]), {"p": np.array([3.0, 5.0])}
        )
        assert np.allclose(grads["p"], [5.0, 3.0], atol=1e-6)
