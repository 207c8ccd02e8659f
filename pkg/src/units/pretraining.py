"""Self-supervised pre-training templates.

Five families share one fit/transform contract: whole-series contrast on
augmented views, sub-series logistic contrast, timestamp-level contrast on
overlapping crops, masked autoregression, and a contrastive+masked hybrid.
Labels are never an input; fit only ever sees the raw series.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor
from .data import TimeSeriesDataset, sample_binary_mask
from .errors import DivergenceError, ParameterError, ShapeError, StateError
from .losses import (
    hybrid_loss,
    masked_reconstruction_loss,
    nt_xent_loss,
    timestamp_contrastive_loss,
    triplet_logistic_loss,
)
from .nn import Encoder, EncoderConfig, OptimizerState, gradient_step

FAMILIES = (
    "contrastive_series",
    "contrastive_subsequence",
    "contrastive_timestamp",
    "autoregressive_mask",
    "hybrid",
)

AUGMENTATIONS = ("jitter", "scale", "crop_resize", "permute_segments")


@dataclass(frozen=True)
class PretrainTemplateConfig:
    family: str = "contrastive_series"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    epochs: int = 8
    batch_size: int = 16
    learning_rate: float = 1e-3
    temperature: float = 0.2
    masking_rate: float = 0.15
    mask_geometry: str = "contiguous_spans"
    hybrid_weight: float | None = None
    n_negatives: int = 10
    augmentations: tuple = (("jitter", 0.1), ("scale", 0.1))
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown template family {self.family!r}")
        if self.temperature <= 0:
            raise ParameterError("temperature must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ParameterError("epochs must be >= 0 and batch_size >= 1")
        if self.family == "hybrid":
            if self.hybrid_weight is None:
                raise ParameterError("hybrid family requires hybrid_weight")
            if not 0.0 <= self.hybrid_weight <= 1.0:
                raise ParameterError("hybrid_weight must be in [0, 1]")
        elif self.hybrid_weight is not None:
            raise ParameterError("hybrid_weight only applies to the hybrid family")
        if self.family in ("autoregressive_mask", "hybrid") and not 0.0 < self.masking_rate <= 1.0:
            raise ParameterError("masked objectives need masking_rate in (0, 1]")
        for policy in self.augmentations:
            _validate_policy(policy)

    def with_seed(self, seed: int) -> "PretrainTemplateConfig":
        return replace(self, seed=seed, encoder=self.encoder.with_seed(seed))


def _validate_policy(policy):
    if not (isinstance(policy, (tuple, list)) and len(policy) == 2):
        raise ParameterError(f"augmentation policy must be (name, value), got {policy!r}")
    name, value = policy
    if name not in AUGMENTATIONS:
        raise ParameterError(f"unknown augmentation policy {name!r}")
    if name == "crop_resize" and not 0.0 < value <= 1.0:
        raise ParameterError("crop_resize ratio must be in (0, 1]")
    if name == "permute_segments" and int(value) < 1:
        raise ParameterError("permute_segments needs at least one segment")


def augment(x: np.ndarray, policy, rng: np.random.Generator) -> np.ndarray:
    """Apply one augmentation policy to a (D, T) sample."""
    _validate_policy(policy)
    name, value = policy
    x = np.asarray(x, dtype=np.float64)
    d, t = x.shape
    if name == "jitter":
        return x + rng.normal(0.0, value, size=x.shape)
    if name == "scale":
        return x * (1.0 + rng.normal(0.0, value, size=(d, 1)))
    if name == "crop_resize":
        length = max(2, int(round(value * t)))
        start = int(rng.integers(0, t - length + 1))
        crop = x[:, start : start + length]
        grid = np.linspace(0.0, length - 1.0, t)
        return np.stack([np.interp(grid, np.arange(length), crop[j]) for j in range(d)])
    n_seg = int(value)
    bounds = np.linspace(0, t, n_seg + 1).astype(int)
    order = rng.permutation(n_seg)
    return np.concatenate([x[:, bounds[s] : bounds[s + 1]] for s in order], axis=1)


def _augment_batch(xb, policies, rng):
    out = np.empty_like(xb)
    for i in range(xb.shape[0]):
        view = xb[i]
        for policy in policies:
            view = augment(view, policy, rng)
        out[i] = view
    return out


# ---------------------------------------------------------------------------
# per-family batch objectives


def _series_views(xb, cfg, rng):
    return _augment_batch(xb, cfg.augmentations, rng), _augment_batch(xb, cfg.augmentations, rng)


def _loss_series(encoder, pt, auxt, xb, cfg, rng):
    if xb.shape[0] < 2:
        raise ParameterError("whole-series contrast needs a batch of at least 2")
    va, vb = _series_views(xb, cfg, rng)
    za = encoder.pooled_features(va, pt)
    zb = encoder.pooled_features(vb, pt)
    return nt_xent_loss(za, zb, cfg.temperature)


def _loss_subsequence(encoder, pt, auxt, xb, cfg, rng):
    b, _, t = xb.shape
    if t < 8:
        raise ParameterError("sub-series contrast needs T >= 8")
    if b < 2 and cfg.n_negatives > 0:
        raise ParameterError("negatives require at least 2 samples in the batch")
    len_ref = int(rng.integers(max(2, t // 4), t + 1))
    len_pos = int(rng.integers(2, len_ref + 1))
    ref_start = rng.integers(0, t - len_ref + 1, size=b)
    pos_off = rng.integers(0, len_ref - len_pos + 1, size=b)
    refs = np.stack([xb[i, :, s : s + len_ref] for i, s in enumerate(ref_start)])
    poss = np.stack(
        [xb[i, :, ref_start[i] + o : ref_start[i] + o + len_pos] for i, o in enumerate(pos_off)]
    )
    z_ref = encoder.pooled_features(refs, pt)
    z_pos = encoder.pooled_features(poss, pt)
    z_neg = None
    if cfg.n_negatives > 0:
        src = rng.integers(0, b - 1, size=(b, cfg.n_negatives))
        src = src + (src >= np.arange(b)[:, None])  # skip the anchor itself
        neg_start = rng.integers(0, t - len_pos + 1, size=(b, cfg.n_negatives))
        negs = np.stack(
            [
                xb[src[i, k], :, neg_start[i, k] : neg_start[i, k] + len_pos]
                for i in range(b)
                for k in range(cfg.n_negatives)
            ]
        )
        zf = encoder.pooled_features(negs, pt)
        z_neg = zf.reshape(b, cfg.n_negatives, zf.shape[1])
    return triplet_logistic_loss(z_ref, z_pos, z_neg)


def _loss_timestamp(encoder, pt, auxt, xb, cfg, rng):
    b, _, t = xb.shape
    if t < 2:
        raise ParameterError("timestamp contrast needs T >= 2")
    lo = int(rng.integers(0, t - 1))
    hi = int(rng.integers(lo + 2, t + 1))
    a_start = int(rng.integers(0, lo + 1))
    b_end = int(rng.integers(hi, t + 1))
    ra = encoder.sequence_features(xb[:, :, a_start:hi], pt)
    rb = encoder.sequence_features(xb[:, :, lo:b_end], pt)
    total = None
    for i in range(b):
        li = timestamp_contrastive_loss(
            ra[i, lo - a_start : hi - a_start, :], rb[i, 0 : hi - lo, :], cfg.temperature
        )
        total = li if total is None else total + li
    return total / float(b)


def _mask_batch(xb, cfg, rng):
    b, d, t = xb.shape
    bits = np.empty((b, d, t), dtype=bool)
    for i in range(b):
        m = sample_binary_mask((d, t), cfg.masking_rate, rng, cfg.mask_geometry)
        bits[i] = m.bits
    if bits.all():  # rare at tiny rates: redraw so the objective is non-empty
        bits[0, rng.integers(0, d), rng.integers(0, t)] = False
    return bits


def _loss_masked(encoder, pt, auxt, xb, cfg, rng):
    bits = _mask_batch(xb, cfg, rng)
    feats = encoder.sequence_features(xb * bits, pt)
    bsz, t, k = feats.shape
    dec = feats.reshape(bsz * t, k) @ auxt["dec_w"] + auxt["dec_b"]
    xhat = dec.reshape(bsz, t, xb.shape[1]).transpose(0, 2, 1)
    return masked_reconstruction_loss(xb, xhat, bits)


def _loss_hybrid(encoder, pt, auxt, xb, cfg, rng):
    contrastive = _loss_series(encoder, pt, auxt, xb, cfg, rng)
    reconstruction = _loss_masked(encoder, pt, auxt, xb, cfg, rng)
    return hybrid_loss(contrastive, reconstruction, cfg.hybrid_weight)


_LOSS_FNS = {
    "contrastive_series": _loss_series,
    "contrastive_subsequence": _loss_subsequence,
    "contrastive_timestamp": _loss_timestamp,
    "autoregressive_mask": _loss_masked,
    "hybrid": _loss_hybrid,
}

_NEEDS_DECODER = ("autoregressive_mask", "hybrid")


class PretrainedInstance:
    """One pre-training instance: config + encoder + fit/transform."""

    def __init__(self, config: PretrainTemplateConfig,
                 encoder: Encoder | None = None,
                 aux_params: dict[str, np.ndarray] | None = None,
                 loss_curve: list[float] | None = None,
                 fitted: bool = False):
        self.config = config
        self.encoder = encoder if encoder is not None else Encoder(config.encoder)
        self.aux_params = aux_params if aux_params is not None else self._init_aux(config)
        self.loss_curve = list(loss_curve) if loss_curve else []
        self.fitted = fitted

    @staticmethod
    def _init_aux(cfg: PretrainTemplateConfig) -> dict[str, np.ndarray]:
        if cfg.family not in _NEEDS_DECODER:
            return {}
        rng = np.random.default_rng(cfg.seed + 1)
        k, d = cfg.encoder.repr_dim, cfg.encoder.in_channels
        return {
            "dec_w": rng.standard_normal((k, d)) / np.sqrt(k),
            "dec_b": np.zeros(d),
        }

    @property
    def repr_dim(self) -> int:
        return self.config.encoder.repr_dim

    def aux_tensors(self, trainable: bool) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=trainable) for k, v in self.aux_params.items()}

    def batch_loss(self, pt: dict[str, Tensor], auxt: dict[str, Tensor],
                   xb: np.ndarray, rng: np.random.Generator) -> Tensor:
        """The instance's own objective on one batch (also used by the
        clustering fine-tune as its mandatory pre-training term)."""
        return _LOSS_FNS[self.config.family](self.encoder, pt, auxt, xb, self.config, rng)

    def fit(self, X, on_step=None) -> "PretrainedInstance":
        values = X.values if isinstance(X, TimeSeriesDataset) else np.asarray(X, dtype=np.float64)
        if values.ndim != 3 or values.shape[0] < 1:
            raise ParameterError("fit needs a nonempty (N, D, T) dataset")
        if values.shape[1] != self.config.encoder.in_channels:
            raise ShapeError(
                f"dataset has D={values.shape[1]}, encoder expects "
                f"{self.config.encoder.in_channels}"
            )
        cfg = self.config
        n = values.shape[0]
        if cfg.family != "autoregressive_mask" and n < 2 and cfg.epochs > 0:
            raise ParameterError(f"{cfg.family} needs at least 2 samples to contrast")
        rng = np.random.default_rng(cfg.seed)
        opt = OptimizerState(algorithm="adam", learning_rate=cfg.learning_rate)
        step_idx = 0
        self.loss_curve = []
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            step_losses = []
            for lo in range(0, n, cfg.batch_size):
                idx = order[lo : lo + cfg.batch_size]
                if len(idx) < 2 and n >= 2:
                    continue
                xb = values[idx]
                pt = self.encoder.as_tensors(trainable=True)
                auxt = self.aux_tensors(trainable=True)
                loss = self.batch_loss(pt, auxt, xb, rng)
                val = loss.item()
                if not np.isfinite(val):
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch}, step {step_idx}"
                    )
                loss.backward()
                params = {f"enc/{k}": v for k, v in self.encoder.params.items()}
                params.update({f"aux/{k}": v for k, v in self.aux_params.items()})
                grads = {}
                for k, tns in pt.items():
                    grads[f"enc/{k}"] = tns.grad if tns.grad is not None else np.zeros_like(tns.data)
                for k, tns in auxt.items():
                    grads[f"aux/{k}"] = tns.grad if tns.grad is not None else np.zeros_like(tns.data)
                params, opt = gradient_step(params, grads, opt)
                self.encoder.params = {
                    k[len("enc/") :]: v for k, v in params.items() if k.startswith("enc/")
                }
                self.aux_params = {
                    k[len("aux/") :]: v for k, v in params.items() if k.startswith("aux/")
                }
                step_losses.append(val)
                if on_step is not None:
                    on_step(step_idx, val)
                step_idx += 1
            self.loss_curve.append(float(np.mean(step_losses)) if step_losses else float("nan"))
        self.fitted = True
        return self

    def transform(self, X) -> np.ndarray:
        """Map a dataset to its (N, K) pooled representations."""
        if not self.fitted:
            raise StateError("transform called before fit")
        values = X.values if isinstance(X, TimeSeriesDataset) else np.asarray(X, dtype=np.float64)
        if values.ndim == 2:
            values = values[None]
        out = np.empty((values.shape[0], self.repr_dim))
        for lo in range(0, values.shape[0], 256):
            out[lo : lo + 256] = self.encoder.encode_batch(values[lo : lo + 256])
        if not np.all(np.isfinite(out)):
            raise DivergenceError("non-finite representation")
        return out


def fit(cfg: PretrainTemplateConfig, X, on_step=None) -> PretrainedInstance:
    """Train one pre-training instance on unlabeled data."""
    return PretrainedInstance(cfg).fit(X, on_step=on_step)


def transform(inst: PretrainedInstance, X) -> np.ndarray:
    return inst.transform(X)
