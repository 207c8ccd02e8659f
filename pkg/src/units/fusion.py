"""Combine the per-instance representations of a sample into one vector.

Concatenation is parameter-free; projection is a single affine map on the
concatenation whose parameters can join the fine-tuning gradients.  The
projection starts identity-like (truncated to the output width) so early
fine-tuning behaves like plain concatenation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat
from .errors import ParameterError, ShapeError

FUSION_KINDS = ("concatenation", "projection")
DEFAULT_PROJECTION_DIM = 32


@dataclass(frozen=True)
class FusionConfig:
    kind: str = "concatenation"
    out_dim: int | None = None  # projection only; None = DEFAULT_PROJECTION_DIM
    learnable: bool = True

    def __post_init__(self):
        if self.kind not in FUSION_KINDS:
            raise ParameterError(f"unknown fusion kind {self.kind!r}")
        if self.out_dim is not None and self.out_dim < 1:
            raise ParameterError("projection output dim must be >= 1")


class FusionModel:
    def __init__(self, config: FusionConfig, k_dims: list[int],
                 params: dict[str, np.ndarray] | None = None):
        if not k_dims:
            raise ParameterError("fusion needs at least one representation stream")
        self.config = config
        self.k_dims = [int(k) for k in k_dims]
        self.in_dim = int(sum(self.k_dims))
        if config.kind == "concatenation":
            self.out_dim = self.in_dim
            self.params = {}
        else:
            self.out_dim = int(config.out_dim or DEFAULT_PROJECTION_DIM)
            if params is not None:
                self.params = params
            else:
                w = np.zeros((self.in_dim, self.out_dim))
                rank = min(self.in_dim, self.out_dim)
                w[np.arange(rank), np.arange(rank)] = 1.0
                self.params = {"w": w, "b": np.zeros(self.out_dim)}

    @property
    def learnable(self) -> bool:
        return self.config.kind == "projection" and self.config.learnable

    def as_tensors(self, trainable: bool) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=trainable) for k, v in self.params.items()}

    def _check(self, reprs):
        if len(reprs) != len(self.k_dims):
            raise ShapeError(f"expected {len(self.k_dims)} streams, got {len(reprs)}")
        for r, k in zip(reprs, self.k_dims):
            if r.shape[-1] != k:
                raise ShapeError(f"stream with dim {r.shape[-1]} bound to K={k}")

    def fuse_tensors(self, reprs: list[Tensor], pt: dict[str, Tensor]) -> Tensor:
        """Fuse along the last axis; leading axes (batch, time) pass through."""
        self._check(reprs)
        z = reprs[0] if len(reprs) == 1 else concat(reprs, axis=reprs[0].ndim - 1)
        if self.config.kind == "concatenation":
            return z
        lead = z.shape[:-1]
        if len(lead) == 1:
            return z @ pt["w"] + pt["b"]
        flat = z.reshape(int(np.prod(lead)), self.in_dim)
        out = flat @ pt["w"] + pt["b"]
        return out.reshape(*lead, self.out_dim)

    def transform(self, reprs: list[np.ndarray]) -> np.ndarray:
        """Numpy-only fusion of (N, K_m) matrices into (N, K')."""
        self._check(reprs)
        z = np.concatenate(reprs, axis=-1)
        if self.config.kind == "concatenation":
            return z
        return z @ self.params["w"] + self.params["b"]


def concat_fuse(reprs: list[np.ndarray]) -> np.ndarray:
    """Concatenate one sample's representations in registration order."""
    if not reprs:
        raise ParameterError("concat_fuse needs at least one representation")
    return np.concatenate([np.asarray(r, dtype=np.float64) for r in reprs])


def projection_fuse(fm: FusionModel, reprs: list[np.ndarray]) -> np.ndarray:
    """Affine projection of the concatenation for one sample."""
    if fm.config.kind != "projection":
        raise ParameterError("projection_fuse requires a projection fusion model")
    z = concat_fuse(reprs)
    if z.shape[0] != fm.in_dim:
        raise ShapeError(f"concatenated dim {z.shape[0]} does not match {fm.in_dim}")
    return z @ fm.params["w"] + fm.params["b"]
