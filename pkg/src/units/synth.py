"""Seeded synthetic datasets for benchmarks, demos and the test suite."""

from __future__ import annotations

import numpy as np

from .data import LabelSet, MissingIndex, TimeSeriesDataset


def three_class_waves(n: int = 600, t: int = 64, seed: int = 0,
                      amp_scale: float = 1.0, noise: float = 0.15):
    """Three classes with distinct frequency/warp patterns, random phase and
    amplitude.  Raw flattened distances are dominated by phase, so the classes
    are easy for a frequency-aware encoder and hard for naive nearest
    neighbours."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, size=n)
    labels[:3] = [0, 1, 2]  # guarantee all three classes appear
    grid = np.linspace(0.0, 1.0, t)
    values = np.empty((n, 1, t))
    freqs = (3.0, 6.0, 9.0)
    for i, c in enumerate(labels):
        phase = rng.uniform(0.0, 2 * np.pi)
        amp = amp_scale * rng.uniform(0.7, 1.3)
        warp = 1.0 + 0.2 * rng.standard_normal() * (c == 2)
        wave = np.sin(2 * np.pi * freqs[c] * grid**warp + phase)
        if c == 1:
            wave = np.sign(wave) * np.abs(wave) ** 0.5  # flattened crests
        values[i, 0] = amp * wave + noise * rng.standard_normal(t)
    ds = TimeSeriesDataset(values, sampling_meta=f"three_class_waves(seed={seed})")
    return ds, LabelSet("class", class_labels=labels, num_classes=3)


def two_regime(n: int = 200, t: int = 64, seed: int = 0, noise: float = 0.2,
               bump_height: float = 2.5):
    """Two regimes on a shared noisy-sine carrier: plain, or carrying one
    short transient at a random position.

    Raw flattened distances are governed by the carrier's random phase and
    frequency, so nearest-neighbour on raw values sits near chance while a
    translation-covariant encoder separates the regimes easily.
    """
    rng = np.random.default_rng(seed)
    labels = (np.arange(n) % 2).astype(int)
    grid = np.linspace(0.0, 1.0, t)
    values = np.empty((n, 1, t))
    for i, c in enumerate(labels):
        freq = rng.uniform(2.0, 3.0)
        phase = rng.uniform(0.0, 2 * np.pi)
        base = np.sin(2 * np.pi * freq * grid + phase) + noise * rng.standard_normal(t)
        if c == 1:
            pos = int(rng.integers(4, t - 4))
            base[pos - 1 : pos + 2] += bump_height * np.array([0.4, 1.0, 0.4])
        values[i, 0] = base
    order = rng.permutation(n)
    ds = TimeSeriesDataset(values[order], sampling_meta=f"two_regime(seed={seed})")
    return ds, LabelSet("class", class_labels=labels[order], num_classes=2)


def sinusoid_bank(n: int = 200, t: int = 64, d: int = 1, seed: int = 0, noise: float = 0.05):
    """Clean sinusoids with random phase and mild frequency spread."""
    rng = np.random.default_rng(seed)
    grid = np.linspace(0.0, 1.0, t)
    values = np.empty((n, d, t))
    for i in range(n):
        for j in range(d):
            freq = rng.uniform(2.0, 4.0)
            phase = rng.uniform(0.0, 2 * np.pi)
            values[i, j] = np.sin(2 * np.pi * freq * grid + phase)
    values += noise * rng.standard_normal(values.shape)
    return TimeSeriesDataset(values, sampling_meta=f"sinusoid_bank(seed={seed})")


def spiked_sinusoids(n: int = 120, t: int = 64, seed: int = 0, spike_rate: float = 0.01,
                     spike_sigma: float = 5.0):
    """Sinusoid windows with rare point spikes of fixed magnitude.

    Spike magnitude is spike_sigma times the clean-signal std; flags mark
    injected positions.
    """
    rng = np.random.default_rng(seed)
    ds = sinusoid_bank(n=n, t=t, seed=seed, noise=0.05)
    values = ds.values.copy()
    sigma = float(values.std())
    flags = np.zeros((n, t), dtype=bool)
    n_spikes = max(1, int(round(spike_rate * n * t)))
    cells = rng.choice(n * t, size=n_spikes, replace=False)
    for cell in cells:
        i, k = divmod(int(cell), t)
        values[i, 0, k] += spike_sigma * sigma * (1 if rng.random() < 0.5 else -1)
        flags[i, k] = True
    return (
        TimeSeriesDataset(values, sampling_meta=f"spiked_sinusoids(seed={seed})"),
        LabelSet("anomaly_flags", anomaly_flags=flags),
    )


def mcar_missing(ds: TimeSeriesDataset, rate: float = 0.2, seed: int = 0) -> MissingIndex:
    """Missing-completely-at-random index over a dataset."""
    rng = np.random.default_rng(seed)
    positions = []
    for _ in range(ds.n):
        mask = rng.random((ds.d, ds.t)) < rate
        positions.append([(int(j), int(k)) for j, k in zip(*np.nonzero(mask))])
    return MissingIndex.from_lists(positions)


def domain_pair(n_source: int = 400, n_target: int = 200, t: int = 64, seed: int = 0):
    """Domain-shift pair: clean source classes; amplitude-scaled noisy target."""
    source, source_labels = three_class_waves(n=n_source, t=t, seed=seed, amp_scale=1.0,
                                              noise=0.05)
    target, target_labels = three_class_waves(n=n_target, t=t, seed=seed + 1,
                                              amp_scale=2.5, noise=0.35)
    return source, source_labels, target, target_labels
