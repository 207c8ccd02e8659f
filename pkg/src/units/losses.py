"""Differentiable objectives for pre-training and fine-tuning.

All functions take and return autodiff Tensors so gradients flow into the
encoders; every one of them is covered by the central-difference oracle.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concat, l2_normalize, log_softmax
from .data import BinaryMask
from .errors import ParameterError

NEG_INF = -1e30  # large negative logit; exp underflows to exactly 0


def nt_xent_loss(view_a: Tensor, view_b: Tensor, temperature: float) -> Tensor:
    """Normalized-temperature cross entropy over 2B paired embeddings.

    Rows are L2-normalized internally.  For each of the 2B anchors the
    positive is its counterpart view; the other 2B-2 embeddings are
    negatives.
    """
    if temperature <= 0:
        raise ParameterError("temperature must be positive")
    b = view_a.shape[0]
    if b < 2:
        raise ParameterError("nt_xent_loss needs a batch of at least 2 (no negatives otherwise)")
    if view_a.shape != view_b.shape:
        raise ParameterError(f"view shapes differ: {view_a.shape} vs {view_b.shape}")
    u = concat([l2_normalize(view_a, axis=1), l2_normalize(view_b, axis=1)], axis=0)
    sim = (u @ u.transpose(1, 0)) / temperature
    sim = sim + Tensor(np.eye(2 * b) * NEG_INF)
    logp = log_softmax(sim, axis=1)
    pos = np.concatenate([np.arange(b) + b, np.arange(b)])
    picked = logp[np.arange(2 * b), pos]
    return -picked.mean()


def triplet_logistic_loss(z_ref: Tensor, z_pos: Tensor, z_neg: Tensor | None) -> Tensor:
    """Logistic triplet objective on pooled window encodings.

    z_ref, z_pos: (B, K); z_neg: (B, n, K) or None.  Per anchor:
    softplus(-ref.pos) + sum_k softplus(ref.neg_k), averaged over the batch.
    """
    pos_dot = (z_ref * z_pos).sum(axis=1)
    loss = (-pos_dot).softplus()
    if z_neg is not None and z_neg.shape[1] > 0:
        neg_dot = (z_ref.reshape(z_ref.shape[0], 1, z_ref.shape[1]) * z_neg).sum(axis=2)
        loss = loss + neg_dot.softplus().sum(axis=1)
    return loss.mean()


def timestamp_contrastive_loss(repr_a: Tensor, repr_b: Tensor,
                               temperature: float = 1.0) -> Tensor:
    """Temporal contrast on the aligned overlap of two crops.

    repr_a, repr_b: (T', K) per-timestep encodings aligned on the overlap.
    Each timestep must match its counterpart in the other view against all
    other timesteps of both views (2T'-1 candidates per anchor), averaged
    symmetrically over the 2T' anchors.
    """
    if temperature <= 0:
        raise ParameterError("temperature must be positive")
    if repr_a.ndim != 2 or repr_a.shape != repr_b.shape:
        raise ParameterError(f"need matching (T', K) inputs, got {repr_a.shape} and {repr_b.shape}")
    tp = repr_a.shape[0]
    if tp < 2:
        raise ParameterError("overlap must span at least 2 timesteps")
    u = concat([repr_a, repr_b], axis=0)
    sim = (u @ u.transpose(1, 0)) / temperature
    sim = sim + Tensor(np.eye(2 * tp) * NEG_INF)
    logp = log_softmax(sim, axis=1)
    pos = np.concatenate([np.arange(tp) + tp, np.arange(tp)])
    picked = logp[np.arange(2 * tp), pos]
    return -picked.mean()


def masked_reconstruction_loss(x: np.ndarray, xhat: Tensor, mask_bits: np.ndarray) -> Tensor:
    """Mean squared error over masked cells only (mask bit 0 = masked)."""
    x = np.asarray(x, dtype=np.float64)
    if isinstance(mask_bits, BinaryMask):
        mask_bits = mask_bits.bits
    mask_bits = np.asarray(mask_bits, dtype=bool)
    if x.shape != tuple(xhat.shape) or x.shape != mask_bits.shape:
        raise ParameterError(
            f"shape mismatch: x {x.shape}, xhat {tuple(xhat.shape)}, mask {mask_bits.shape}"
        )
    masked = ~mask_bits
    count = int(masked.sum())
    if count == 0:
        raise ParameterError("mask has no masked cells; the objective is empty")
    diff = xhat - Tensor(x)
    return (diff * diff * Tensor(masked.astype(np.float64))).sum() / float(count)


def hybrid_loss(contrastive: Tensor, reconstruction: Tensor, lam: float) -> Tensor:
    """Convex combination lam * contrastive + (1 - lam) * reconstruction."""
    if not 0.0 <= lam <= 1.0:
        raise ParameterError(f"hybrid weight must be in [0, 1], got {lam}")
    return contrastive * lam + reconstruction * (1.0 - lam)


def cross_entropy_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Softmax cross entropy; labels are integer class ids."""
    labels = np.asarray(labels, dtype=int)
    b, c = logits.shape
    onehot = np.zeros((b, c))
    onehot[np.arange(b), labels] = 1.0
    logp = log_softmax(logits, axis=1)
    return -(logp * Tensor(onehot)).sum() / float(b)


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    diff = pred - Tensor(np.asarray(target, dtype=np.float64))
    return (diff * diff).mean()


def mae_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    diff = pred - Tensor(np.asarray(target, dtype=np.float64))
    return diff.abs().mean()


def reconstruction_loss(x: np.ndarray, xhat: Tensor) -> Tensor:
    """Full-input reconstruction error (MSE over every cell)."""
    return mse_loss(xhat, x)


def kmeans_penalty_tensor(zp: Tensor, centroids: np.ndarray, assignments: np.ndarray) -> Tensor:
    """Sum of L2 distances to fixed centroids (constants for the gradient)."""
    c = np.asarray(centroids, dtype=np.float64)[np.asarray(assignments, dtype=int)]
    diff = zp - Tensor(c)
    return (diff * diff).sum(axis=1).safe_sqrt().sum()


def cluster_fit_loss(pretrain_loss: Tensor, penalty: Tensor, beta: float) -> Tensor:
    """Pre-training objective plus beta-weighted clustering penalty.

    The pre-training term is mandatory — minimizing the penalty alone
    collapses every representation onto its centroid, so beta is capped.
    """
    if beta < 0:
        raise ParameterError("beta must be >= 0")
    if beta > 1e3:
        raise ParameterError("beta > 1e3 would drown the pre-training objective")
    return pretrain_loss + penalty * beta
