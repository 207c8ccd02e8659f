"""Hyper-parameter configuration: default, manual and smart modes.

Smart mode runs a tree-structured density-ratio proposer (TPE-style): the
first quarter of the budget is random, after that candidates are drawn from
a KDE over the best 25% of trials and ranked by the good/bad density ratio.
The proposer sits behind ``bayes_optimize`` so a different strategy can be
swapped in.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

# Documented defaults (the "default mode" table).  Keys are flat; encoder
# hyper-parameters carry an encoder_ prefix.
DEFAULTS = {
    "family": "contrastive_series",
    "epochs": 8,
    "batch_size": 16,
    "learning_rate": 1e-3,
    "temperature": 0.2,
    "masking_rate": 0.15,
    "mask_geometry": "contiguous_spans",
    "hybrid_weight": 0.5,
    "n_negatives": 10,
    "encoder_architecture": "dilated_conv",
    "encoder_depth": 3,
    "encoder_hidden_width": 64,
    "encoder_repr_dim": 64,
    "encoder_kernel_size": 3,
    "encoder_dilation_base": 2,
    "finetune_epochs": 25,
    "finetune_batch_size": 16,
    "finetune_learning_rate": 1e-4,
    "beta": 0.1,
    "anomaly_quantile": 0.99,
    "imputation_masking_rate": 0.2,
    "fusion": "concatenation",
    "projection_dim": 32,
}


@dataclass(frozen=True)
class Real:
    low: float
    high: float
    log: bool = False

    def __post_init__(self):
        if not self.low < self.high:
            raise ParameterError(f"empty range [{self.low}, {self.high}]")
        if self.log and self.low <= 0:
            raise ParameterError("log-scaled ranges must be strictly positive")


@dataclass(frozen=True)
class Integer:
    low: int
    high: int

    def __post_init__(self):
        if not self.low <= self.high:
            raise ParameterError(f"empty range [{self.low}, {self.high}]")


@dataclass(frozen=True)
class Categorical:
    options: tuple

    def __post_init__(self):
        if not self.options:
            raise ParameterError("categorical dimension needs at least one option")


@dataclass(frozen=True)
class SearchSpace:
    dims: dict

    def __post_init__(self):
        if not self.dims:
            raise ParameterError("search space has no dimensions")
        for name, dim in self.dims.items():
            if not isinstance(dim, (Real, Integer, Categorical)):
                raise ParameterError(f"dimension {name!r} has unsupported type {type(dim)}")

    def sample(self, rng: np.random.Generator) -> dict:
        cfg = {}
        for name, dim in self.dims.items():
            if isinstance(dim, Real):
                if dim.log:
                    cfg[name] = float(10 ** rng.uniform(np.log10(dim.low), np.log10(dim.high)))
                else:
                    cfg[name] = float(rng.uniform(dim.low, dim.high))
            elif isinstance(dim, Integer):
                cfg[name] = int(rng.integers(dim.low, dim.high + 1))
            else:
                cfg[name] = dim.options[int(rng.integers(0, len(dim.options)))]
        return cfg


@dataclass
class TuningRecord:
    trial_id: int
    config: dict
    objective: float | None
    failed: bool = False
    wall_time: float = 0.0

    def to_json(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "config": self.config,
            "objective": self.objective,
            "failed": self.failed,
            "wall_time": self.wall_time,
        }


def resolve_config(mode: str, overrides: dict | None = None, space: SearchSpace | None = None,
                   budget: int | None = None, objective=None, seed: int = 0) -> dict:
    """Produce a full configuration under one of the three modes."""
    if mode not in ("default", "manual", "smart"):
        raise ParameterError(f"unknown configuration mode {mode!r}")
    cfg = dict(DEFAULTS)
    if mode == "default":
        if overrides:
            raise ParameterError("default mode takes no overrides")
        return cfg
    if mode == "manual":
        overrides = overrides or {}
        for key in overrides:
            if key not in cfg:
                raise ParameterError(
                    f"unknown config key {key!r}; valid keys: {', '.join(sorted(cfg))}"
                )
        cfg.update(overrides)
        return cfg
    if space is None or budget is None or objective is None:
        raise ParameterError("smart mode needs a search space, a budget and an objective")
    best, _ = bayes_optimize(objective, space, budget, seed=seed)
    for key in best:
        if key not in cfg:
            raise ParameterError(
                f"unknown config key {key!r}; valid keys: {', '.join(sorted(cfg))}"
            )
    cfg.update(best)
    return cfg


N_CANDIDATES = 24
GOOD_FRACTION = 0.25


def _kde_logpdf(x, points, low, high):
    points = np.asarray(points, dtype=np.float64)
    bw = max((high - low) / max(np.sqrt(len(points)), 1.0), 1e-12 * (high - low) + 1e-300)
    # mixture of gaussians at observed points plus one flat prior component
    comps = np.exp(-0.5 * ((x - points[:, None]) / bw) ** 2) / (bw * np.sqrt(2 * np.pi))
    prior = np.full(np.shape(x), 1.0 / (high - low))
    dens = (comps.sum(axis=0) + prior) / (len(points) + 1)
    return np.log(dens)


def _propose(space: SearchSpace, good: list[dict], bad: list[dict], rng) -> dict:
    cfg = {}
    for name, dim in space.dims.items():
        gvals = [g[name] for g in good]
        bvals = [b[name] for b in bad]
        if isinstance(dim, Categorical):
            opts = list(dim.options)
            gcounts = np.array([1.0 + sum(v == o for v in gvals) for o in opts])
            bcounts = np.array([1.0 + sum(v == o for v in bvals) for o in opts])
            gp = gcounts / gcounts.sum()
            bp = bcounts / bcounts.sum()
            cand = rng.choice(len(opts), size=N_CANDIDATES, p=gp)
            scores = np.log(gp[cand]) - np.log(bp[cand])
            cfg[name] = opts[int(cand[int(np.argmax(scores))])]
            continue
        if isinstance(dim, Real) and dim.log:
            lo, hi = np.log10(dim.low), np.log10(dim.high)
            gv = np.log10(gvals)
            bv = np.log10(bvals)
        elif isinstance(dim, Real):
            lo, hi = dim.low, dim.high
            gv, bv = np.array(gvals, dtype=float), np.array(bvals, dtype=float)
        else:
            lo, hi = float(dim.low), float(dim.high) + 1.0
            gv = np.array(gvals, dtype=float)
            bv = np.array(bvals, dtype=float)
        bw = max((hi - lo) / max(np.sqrt(len(gv)), 1.0), 1e-9)
        cand = gv[rng.integers(0, len(gv), size=N_CANDIDATES)] + rng.normal(
            0.0, bw, size=N_CANDIDATES
        )
        cand = np.clip(cand, lo, hi if isinstance(dim, Real) else hi - 1e-9)
        scores = _kde_logpdf(cand, gv, lo, hi) - _kde_logpdf(cand, bv, lo, hi)
        pick = float(cand[int(np.argmax(scores))])
        if isinstance(dim, Integer):
            cfg[name] = int(np.clip(int(np.floor(pick)), dim.low, dim.high))
        elif dim.log:
            cfg[name] = float(10**pick)
        else:
            cfg[name] = pick
    return cfg


def bayes_optimize(objective, space: SearchSpace, budget: int,
                   seed: int = 0) -> tuple[dict, list[TuningRecord]]:
    """Minimize objective(config) within a trial budget; returns (best, records)."""
    if budget < 1:
        raise ParameterError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    n_random = max(1, budget // 4)
    records: list[TuningRecord] = []
    for trial in range(budget):
        done = [r for r in records if not r.failed]
        if trial < n_random or len(done) < 2:
            cfg = space.sample(rng)
        else:
            ordered = sorted(done, key=lambda r: r.objective)
            n_good = max(1, int(np.ceil(GOOD_FRACTION * len(ordered))))
            good = [r.config for r in ordered[:n_good]]
            bad = [r.config for r in ordered[n_good:]] or good
            cfg = _propose(space, good, bad, rng)
        t0 = time.perf_counter()
        try:
            val = float(objective(cfg))
            if not np.isfinite(val):
                raise ValueError(f"objective returned non-finite value {val}")
        except Exception:
            records.append(TuningRecord(trial, cfg, None, failed=True,
                                        wall_time=time.perf_counter() - t0))
            continue
        records.append(TuningRecord(trial, cfg, val, wall_time=time.perf_counter() - t0))
    done = [r for r in records if not r.failed]
    if not done:
        raise ParameterError("every trial failed; nothing to return")
    best = min(done, key=lambda r: r.objective)
    return dict(best.config), records


# ---------------------------------------------------------------------------
# flat-config materialization shared by the CLI and the HTTP service


def template_config_from_flat(flat: dict, family: str | None = None, in_channels: int = 1,
                              seed: int = 0):
    from .nn import EncoderConfig
    from .pretraining import PretrainTemplateConfig

    family = family or flat.get("family", DEFAULTS["family"])
    enc = EncoderConfig(
        architecture=flat.get("encoder_architecture", DEFAULTS["encoder_architecture"]),
        in_channels=in_channels,
        depth=int(flat.get("encoder_depth", DEFAULTS["encoder_depth"])),
        hidden_width=int(flat.get("encoder_hidden_width", DEFAULTS["encoder_hidden_width"])),
        repr_dim=int(flat.get("encoder_repr_dim", DEFAULTS["encoder_repr_dim"])),
        kernel_size=int(flat.get("encoder_kernel_size", DEFAULTS["encoder_kernel_size"])),
        dilation_base=int(flat.get("encoder_dilation_base", DEFAULTS["encoder_dilation_base"])),
        seed=seed,
    )
    return PretrainTemplateConfig(
        family=family,
        encoder=enc,
        epochs=int(flat.get("epochs", DEFAULTS["epochs"])),
        batch_size=int(flat.get("batch_size", DEFAULTS["batch_size"])),
        learning_rate=float(flat.get("learning_rate", DEFAULTS["learning_rate"])),
        temperature=float(flat.get("temperature", DEFAULTS["temperature"])),
        masking_rate=float(flat.get("masking_rate", DEFAULTS["masking_rate"])),
        mask_geometry=flat.get("mask_geometry", DEFAULTS["mask_geometry"]),
        hybrid_weight=(
            float(flat.get("hybrid_weight", DEFAULTS["hybrid_weight"]))
            if family == "hybrid"
            else None
        ),
        n_negatives=int(flat.get("n_negatives", DEFAULTS["n_negatives"])),
        seed=seed,
    )


def task_spec_from_flat(task: str, flat: dict, seed: int = 0):
    from .tasks import TaskSpec

    kwargs = dict(
        task=task,
        epochs=int(flat.get("finetune_epochs", DEFAULTS["finetune_epochs"])),
        batch_size=int(flat.get("finetune_batch_size", DEFAULTS["finetune_batch_size"])),
        learning_rate=float(flat.get("finetune_learning_rate", DEFAULTS["finetune_learning_rate"])),
        beta=float(flat.get("beta", DEFAULTS["beta"])),
        threshold_value=float(flat.get("anomaly_quantile", DEFAULTS["anomaly_quantile"])),
        imputation_masking_rate=float(
            flat.get("imputation_masking_rate", DEFAULTS["imputation_masking_rate"])
        ),
        seed=seed,
    )
    for key in ("num_classes", "horizon", "forecast_loss", "threshold_kind", "trainable"):
        if key in flat and flat[key] is not None:
            kwargs[key] = tuple(flat[key]) if key == "trainable" else flat[key]
    return TaskSpec(**kwargs)
