"""The two practical pipelines: partial labeling and domain shift.

Each pipeline runs a pre-trained arm and a from-scratch arm on byte-identical
splits and reports both metrics side by side.
"""

from __future__ import annotations

import hashlib
from dataclasses import replace

import numpy as np

from .data import LabelSet, TimeSeriesDataset
from .errors import ParameterError
from .fusion import FusionConfig
from .metrics import classification_metrics
from .pretraining import PretrainedInstance, PretrainTemplateConfig
from .tasks import TaskModel, TaskSpec, build_from_scratch


def _stratified_indices(labels: np.ndarray, fraction: float, rng) -> np.ndarray:
    picked = []
    for c in np.unique(labels):
        members = np.nonzero(labels == c)[0]
        k = max(1, int(round(fraction * len(members))))
        picked.append(rng.permutation(members)[:k])
    return np.sort(np.concatenate(picked))


def _split_hash(*index_arrays) -> str:
    h = hashlib.sha256()
    for arr in index_arrays:
        h.update(np.asarray(arr, dtype=np.int64).tobytes())
    return h.hexdigest()[:16]


def _seeded_cfgs(template_cfgs, seed):
    return [cfg.with_seed(seed + 1000 * (m + 1)) for m, cfg in enumerate(template_cfgs)]


def _fit_arm(instances_or_cfgs, fusion_cfg, spec, train_ds, train_labels, pretrained: bool):
    if pretrained:
        tm = TaskModel(instances_or_cfgs, fusion_cfg, spec)
    else:
        tm = build_from_scratch(instances_or_cfgs, fusion_cfg, spec)
    tm.fine_tune(train_ds, train_labels)
    return tm


def pipeline_partial_labeling(ds: TimeSeriesDataset, labels: LabelSet, rho: float,
                              task_spec: TaskSpec,
                              template_cfgs: list[PretrainTemplateConfig],
                              seed: int = 0, test_fraction: float = 0.25) -> dict:
    """Compare pre-train+fine-tune against from-scratch on a label budget.

    Pre-training sees the unlabeled training split; both arms fine-tune on
    the same stratified rho-fraction of training labels and are scored on
    the same held-out split.
    """
    if not 0.0 < rho <= 1.0:
        raise ParameterError(f"label fraction must be in (0, 1], got {rho}")
    if labels.kind != "class":
        raise ParameterError("partial labeling needs class labels")
    y = labels.class_labels
    c = int(labels.num_classes)
    rng = np.random.default_rng(seed)
    test_idx = _stratified_indices(y, test_fraction, rng)
    train_idx = np.setdiff1d(np.arange(ds.n), test_idx)
    if int(rho * len(train_idx)) < c:
        raise ParameterError(
            f"rho={rho} keeps fewer labeled samples than the {c} classes"
        )
    labeled_rel = _stratified_indices(y[train_idx], rho, rng)
    labeled_idx = train_idx[labeled_rel]

    train_ds = ds.subset(train_idx)
    labeled_ds = ds.subset(labeled_idx)
    labeled_labels = labels.subset(labeled_idx)
    test_ds = ds.subset(test_idx)
    test_labels = labels.subset(test_idx)

    cfgs = _seeded_cfgs(template_cfgs, seed)
    spec = replace(task_spec, seed=seed)
    fusion_cfg = FusionConfig(kind="concatenation")

    instances = [PretrainedInstance(cfg).fit(train_ds) for cfg in cfgs]
    arms = {}
    for arm, payload in (("pretrained", instances), ("scratch", cfgs)):
        tm = _fit_arm(payload, fusion_cfg, spec, labeled_ds, labeled_labels,
                      pretrained=(arm == "pretrained"))
        pred, _ = tm.classify_predict(test_ds)
        arms[arm] = {
            "metrics": classification_metrics(test_labels.class_labels, pred),
            "final_loss": tm.history["loss"][-1] if tm.history["loss"] else None,
        }
    return {
        "pipeline": "partial_labeling",
        "rho": rho,
        "seed": seed,
        "n_labeled": int(len(labeled_idx)),
        "n_test": int(len(test_idx)),
        "split_hash": _split_hash(train_idx, labeled_idx, test_idx),
        "arms": arms,
    }


def pipeline_domain_shift(source_ds: TimeSeriesDataset, source_labels: LabelSet,
                          target_ds: TimeSeriesDataset, target_labels: LabelSet,
                          n: int, task_spec: TaskSpec,
                          template_cfgs: list[PretrainTemplateConfig],
                          seed: int = 0) -> dict:
    """Pre-train on source + fine-tune on n target samples, against a
    from-scratch model trained on source plus the same n target samples.

    n=0 is the zero-shot mode: the pre-trained arm fine-tunes on source
    labels only.
    """
    if source_ds.d != target_ds.d:
        raise ParameterError(
            f"source has D={source_ds.d}, target has D={target_ds.d}"
        )
    if n > target_ds.n:
        raise ParameterError(f"target budget {n} exceeds target size {target_ds.n}")
    if source_labels.kind != "class" or target_labels.kind != "class":
        raise ParameterError("domain shift pipeline needs class labels on both domains")
    rng = np.random.default_rng(seed)
    y_t = target_labels.class_labels
    if n > 0:
        budget_idx = rng.permutation(target_ds.n)[:n]
    else:
        budget_idx = np.array([], dtype=int)
    eval_idx = np.setdiff1d(np.arange(target_ds.n), budget_idx)
    eval_ds = target_ds.subset(eval_idx)
    eval_labels = target_labels.subset(eval_idx)

    cfgs = _seeded_cfgs(template_cfgs, seed)
    spec = replace(task_spec, seed=seed)
    fusion_cfg = FusionConfig(kind="concatenation")

    instances = [PretrainedInstance(cfg).fit(source_ds) for cfg in cfgs]

    if n > 0:
        ft_ds = target_ds.subset(budget_idx)
        ft_labels = target_labels.subset(budget_idx)
    else:
        ft_ds, ft_labels = source_ds, source_labels
    pretrained_tm = _fit_arm(instances, fusion_cfg, spec, ft_ds, ft_labels, pretrained=True)

    combined_values = np.concatenate([source_ds.values, target_ds.values[budget_idx]], axis=0)
    combined_ds = TimeSeriesDataset(combined_values)
    combined_labels = LabelSet(
        "class",
        class_labels=np.concatenate([source_labels.class_labels, y_t[budget_idx]]),
        num_classes=source_labels.num_classes,
    )
    scratch_tm = _fit_arm(cfgs, fusion_cfg, spec, combined_ds, combined_labels,
                          pretrained=False)

    arms = {}
    for arm, tm in (("pretrained", pretrained_tm), ("scratch", scratch_tm)):
        pred, _ = tm.classify_predict(eval_ds)
        arms[arm] = {"metrics": classification_metrics(eval_labels.class_labels, pred)}
    return {
        "pipeline": "domain_shift",
        "n_target": int(n),
        "seed": seed,
        "n_eval": int(len(eval_idx)),
        "split_hash": _split_hash(budget_idx, eval_idx),
        "arms": arms,
    }
