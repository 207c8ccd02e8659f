"""Deterministic k-means (k-means++ init, restarts, Lloyd iterations).

Own implementation rather than a library one so the restart schedule,
seeding and tie handling are fully pinned — clustering predictions must be
reproducible bit-for-bit given (data, seed).
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError

N_RESTARTS = 10
MAX_ITER = 100


def _kmeans_pp_init(x, c, rng):
    n = x.shape[0]
    centers = np.empty((c, x.shape[1]))
    centers[0] = x[rng.integers(0, n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for i in range(1, c):
        total = d2.sum()
        if total <= 0:
            centers[i:] = x[rng.integers(0, n, size=c - i)]
            break
        probs = d2 / total
        centers[i] = x[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, ((x - centers[i]) ** 2).sum(axis=1))
    return centers


def _lloyd(x, centers):
    n, c = x.shape[0], centers.shape[0]
    assign = np.zeros(n, dtype=int)
    for _ in range(MAX_ITER):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        for j in range(c):
            members = new_assign == j
            if members.any():
                centers[j] = x[members].mean(axis=0)
            else:  # re-seed an empty cluster at the farthest point
                far = d2.min(axis=1).argmax()
                centers[j] = x[far]
                new_assign[far] = j
        if np.array_equal(new_assign, assign):
            assign = new_assign
            break
        assign = new_assign
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assign = d2.argmin(axis=1)
    inertia = d2[np.arange(n), assign].sum()
    return centers, assign, inertia


def kmeans(x: np.ndarray, c: int, seed: int = 0,
           restarts: int = N_RESTARTS) -> tuple[np.ndarray, np.ndarray, float]:
    """Cluster (N, K) points into c groups; returns (centroids, assignments, inertia)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if c < 1:
        raise ParameterError("cluster count must be >= 1")
    if c > n:
        raise ParameterError(f"cannot form {c} clusters from {n} points")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        centers = _kmeans_pp_init(x, c, rng)
        centers, assign, inertia = _lloyd(x, centers.copy())
        if best is None or inertia < best[2]:
            best = (centers, assign, inertia)
    return best


def l2_penalty(x: np.ndarray, centroids: np.ndarray, assignments: np.ndarray) -> float:
    """Sum of L2 norms between points and their assigned centroids."""
    diff = x - centroids[np.asarray(assignments, dtype=int)]
    return float(np.sqrt((diff**2).sum(axis=1)).sum())
