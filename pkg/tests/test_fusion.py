"""Concatenation and projection fusion contracts."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from units.autodiff import Tensor
from units.errors import ParameterError, ShapeError
from units.fusion import FusionConfig, FusionModel, concat_fuse, projection_fuse


class TestConcat:
    def test_single_stream_identity(self, rng):
        z = rng.standard_normal(5)
        assert np.array_equal(concat_fuse([z]), z)

    def test_hand_example(self):
        assert np.array_equal(concat_fuse([[1.0, 2.0], [3.0]]), [1.0, 2.0, 3.0])

    def test_dims_sum(self, rng):
        parts = [rng.standard_normal(k) for k in (4, 8, 4)]
        assert concat_fuse(parts).shape == (16,)

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            concat_fuse([])

    @given(st.lists(st.integers(1, 6), min_size=1, max_size=4), st.integers(0, 999))
    def test_coordinate_offsets(self, dims, seed):
        r = np.random.default_rng(seed)
        parts = [r.standard_normal(k) for k in dims]
        fused = concat_fuse(parts)
        assert fused.shape == (sum(dims),)
        offset = 0
        for part in parts:
            assert np.array_equal(fused[offset : offset + len(part)], part)
            offset += len(part)


class TestProjection:
    def test_identity_init_square_equals_concat(self, rng):
        fm = FusionModel(FusionConfig("projection", out_dim=7), [3, 4])
        parts = [rng.standard_normal(3), rng.standard_normal(4)]
        assert np.allclose(projection_fuse(fm, parts), concat_fuse(parts))

    def test_zero_params_give_zero(self, rng):
        fm = FusionModel(FusionConfig("projection", out_dim=3), [2, 2])
        fm.params = {"w": np.zeros((4, 3)), "b": np.zeros(3)}
        assert np.array_equal(projection_fuse(fm, [rng.standard_normal(2)] * 2), np.zeros(3))

    def test_hand_matvec(self):
        # weight rows -> outputs: [[1,1],[0,2]], input [3,5] -> [8,10]
        fm = FusionModel(FusionConfig("projection", out_dim=2), [2])
        fm.params = {"w": np.array([[1.0, 1.0], [0.0, 2.0]]).T, "b": np.zeros(2)}
        assert np.array_equal(projection_fuse(fm, [np.array([3.0, 5.0])]), [8.0, 10.0])

    def test_dim_mismatch(self, rng):
        fm = FusionModel(FusionConfig("projection", out_dim=2), [3])
        with pytest.raises(ShapeError):
            fm.transform([rng.standard_normal((4, 2))])

    def test_concat_model_rejected(self, rng):
        fm = FusionModel(FusionConfig("concatenation"), [2])
        with pytest.raises(ParameterError):
            projection_fuse(fm, [rng.standard_normal(2)])

    def test_batch_equals_per_sample(self, rng):
        fm = FusionModel(FusionConfig("projection", out_dim=5), [3, 2])
        fm.params["w"] = rng.standard_normal((5, 5))
        fm.params["b"] = rng.standard_normal(5)
        za, zb = rng.standard_normal((6, 3)), rng.standard_normal((6, 2))
        batch = fm.transform([za, zb])
        rows = np.stack([projection_fuse(fm, [za[i], zb[i]]) for i in range(6)])
        assert np.allclose(batch, rows)

    def test_gradients_reach_projection_params(self, rng):
        fm = FusionModel(FusionConfig("projection", out_dim=4), [3, 3])
        pt = fm.as_tensors(trainable=True)
        reprs = [Tensor(rng.standard_normal((5, 3))) for _ in range(2)]
        out = fm.fuse_tensors(reprs, pt)
        (out * out).sum().backward()
        assert pt["w"].grad is not None and np.any(pt["w"].grad != 0.0)

    def test_default_out_dim(self):
        fm = FusionModel(FusionConfig("projection"), [16, 16])
        assert fm.out_dim == 32

    def test_bad_kind(self):
        with pytest.raises(ParameterError):
            FusionConfig("attention")
