"""Differentiable building blocks: encoders, decoders, optimizers.

Encoders map a (D, T) sample to per-timestep features (T, K); the pooled
K-vector is the column-wise max over time.  Max pooling keeps the pooled
output well defined when pre-training and fine-tuning windows differ in
length.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor, conv1d_causal
from .errors import DivergenceError, ParameterError, ShapeError

ARCHITECTURES = ("dilated_conv", "mlp")


@dataclass(frozen=True)
class EncoderConfig:
    architecture: str = "dilated_conv"
    in_channels: int = 1
    depth: int = 3
    hidden_width: int = 64
    repr_dim: int = 64
    kernel_size: int = 3
    dilation_base: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ParameterError(f"unknown architecture {self.architecture!r}")
        for name in ("in_channels", "depth", "hidden_width", "repr_dim", "kernel_size"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")

    def with_seed(self, seed):
        return replace(self, seed=seed)


def _init(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Encoder:
    """A deterministic map from (D, T) samples to K-dim representations."""

    def __init__(self, config: EncoderConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        self.params = params if params is not None else self._init_params(config)

    @staticmethod
    def _init_params(cfg: EncoderConfig) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(cfg.seed)
        params: dict[str, np.ndarray] = {}
        width_in = cfg.in_channels
        if cfg.architecture == "dilated_conv":
            k = cfg.kernel_size
            for i in range(cfg.depth):
                params[f"conv{i}_w"] = _init(rng, (k, width_in, cfg.hidden_width), k * width_in)
                params[f"conv{i}_b"] = np.zeros(cfg.hidden_width)
                width_in = cfg.hidden_width
        else:
            for i in range(cfg.depth):
                params[f"lin{i}_w"] = _init(rng, (width_in, cfg.hidden_width), width_in)
                params[f"lin{i}_b"] = np.zeros(cfg.hidden_width)
                width_in = cfg.hidden_width
        params["proj_w"] = _init(rng, (width_in, cfg.repr_dim), width_in)
        params["proj_b"] = np.zeros(cfg.repr_dim)
        return params

    def as_tensors(self, trainable: bool) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=trainable) for k, v in self.params.items()}

    def sequence_features(self, x: np.ndarray, pt: dict[str, Tensor]) -> Tensor:
        """Per-timestep features for a batch.  x: (B, D, T) -> (B, T, K)."""
        cfg = self.config
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1] != cfg.in_channels:
            raise ShapeError(
                f"expected (B, {cfg.in_channels}, T) input, got {x.shape}"
            )
        h = Tensor(np.ascontiguousarray(x.transpose(0, 2, 1)))  # (B, T, D)
        if cfg.architecture == "dilated_conv":
            for i in range(cfg.depth):
                d = cfg.dilation_base**i
                h = conv1d_causal(h, pt[f"conv{i}_w"], pt[f"conv{i}_b"], dilation=d)
                h = h.relu()
        else:
            B, T, _ = h.shape
            flat = h.reshape(B * T, h.shape[2])
            for i in range(cfg.depth):
                flat = (flat @ pt[f"lin{i}_w"] + pt[f"lin{i}_b"]).relu()
            h = flat.reshape(B, T, cfg.hidden_width)
        B, T, _ = h.shape
        out = h.reshape(B * T, h.shape[2]) @ pt["proj_w"] + pt["proj_b"]
        return out.reshape(B, T, cfg.repr_dim)

    def pooled_features(self, x: np.ndarray, pt: dict[str, Tensor]) -> Tensor:
        return self.sequence_features(x, pt).max(axis=1)

    # plain-numpy evaluation, no graph

    def encode_sequence_batch(self, x: np.ndarray) -> np.ndarray:
        out = self.sequence_features(x, self.as_tensors(trainable=False))
        return out.data

    def encode_batch(self, x: np.ndarray) -> np.ndarray:
        return self.encode_sequence_batch(x).max(axis=1)


def encode(enc: Encoder, x: np.ndarray) -> np.ndarray:
    """Pooled representation of one (D, T) sample."""
    return enc.encode_batch(np.asarray(x)[None])[0]


def encode_sequence(enc: Encoder, x: np.ndarray) -> np.ndarray:
    """Per-timestep (T, K) representation of one (D, T) sample."""
    return enc.encode_sequence_batch(np.asarray(x)[None])[0]


class Decoder:
    """Affine head mapping representations to task outputs.

    kind="per_timestep": (B, T, K) -> (B, D, T) via a shared K->D map.
    kind="pooled":       (B, K)    -> (B, *out_shape) via one affine map.
    """

    def __init__(self, kind: str, in_dim: int, out_shape: tuple[int, ...], seed: int = 0,
                 params: dict[str, np.ndarray] | None = None):
        if kind not in ("per_timestep", "pooled"):
            raise ParameterError(f"unknown decoder kind {kind!r}")
        self.kind = kind
        self.in_dim = in_dim
        self.out_shape = tuple(int(s) for s in out_shape)
        self.seed = seed
        if params is not None:
            self.params = params
        else:
            rng = np.random.default_rng(seed)
            out_dim = int(np.prod(self.out_shape)) if kind == "pooled" else self.out_shape[0]
            self.params = {
                "w": rng.standard_normal((in_dim, out_dim)) / np.sqrt(in_dim),
                "b": np.zeros(out_dim),
            }

    def as_tensors(self, trainable: bool) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=trainable) for k, v in self.params.items()}

    def forward(self, z: Tensor, pt: dict[str, Tensor]) -> Tensor:
        if self.kind == "per_timestep":
            B, T, K = z.shape
            if K != self.in_dim:
                raise ShapeError(f"decoder expects K={self.in_dim}, got {K}")
            out = z.reshape(B * T, K) @ pt["w"] + pt["b"]
            return out.reshape(B, T, self.out_shape[0]).transpose(0, 2, 1)  # (B, D, T)
        B, K = z.shape
        if K != self.in_dim:
            raise ShapeError(f"decoder expects K={self.in_dim}, got {K}")
        out = z @ pt["w"] + pt["b"]
        return out.reshape(B, *self.out_shape)


@dataclass
class OptimizerState:
    algorithm: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.algorithm not in ("adam", "sgd"):
            raise ParameterError(f"unknown optimizer {self.algorithm!r}")


def gradient_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                  opt: OptimizerState) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One optimizer update.  Returns the updated parameter dict and state."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for tensor {name!r}")
    opt.step += 1
    out = dict(params)
    if opt.algorithm == "sgd":
        for name, g in grads.items():
            out[name] = params[name] - opt.learning_rate * g
        return out, opt
    t = opt.step
    for name, g in grads.items():
        m = opt.m.get(name)
        v = opt.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = opt.beta1 * m + (1.0 - opt.beta1) * g
        v = opt.beta2 * v + (1.0 - opt.beta2) * g * g
        opt.m[name] = m
        opt.v[name] = v
        mhat = m / (1.0 - opt.beta1**t)
        vhat = v / (1.0 - opt.beta2**t)
        out[name] = params[name] - opt.learning_rate * mhat / (np.sqrt(vhat) + opt.eps)
    return out, opt


def finite_difference_gradient(loss_fn, params: dict[str, np.ndarray],
                               epsilon: float = 1e-6) -> dict[str, np.ndarray]:
    """Central-difference gradient of ``loss_fn(params)`` per coordinate."""
    grads = {}
    work = {k: v.copy() for k, v in params.items()}
    for name, arr in work.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = loss_fn(work)
            flat[i] = orig - epsilon
            lo = loss_fn(work)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * epsilon)
        grads[name] = g
    return grads
