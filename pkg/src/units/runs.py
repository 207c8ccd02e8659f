"""Run orchestration on top of the registry: pre-train runs, fine-tune runs
and the evaluation payloads the result views render."""

from __future__ import annotations

import traceback
from dataclasses import asdict

import numpy as np

from . import metrics as metrics_mod
from .errors import ParameterError
from .export import export_model_json, import_model_json
from .fusion import FusionConfig
from .pretraining import PretrainedInstance, PretrainTemplateConfig
from .registry import Registry
from .tasks import TaskModel, TaskSpec, anomaly_decide, build_from_scratch


def _config_snapshot(cfg: PretrainTemplateConfig) -> dict:
    d = asdict(cfg)
    d["augmentations"] = [list(p) for p in cfg.augmentations]
    return d


def create_pretrain_run(reg: Registry, cfg: PretrainTemplateConfig, dataset_id: str):
    return reg.create_run("pretrain", {"dataset_id": dataset_id, **_config_snapshot(cfg)})


def execute_pretrain_run(reg: Registry, run_id: str, cfg: PretrainTemplateConfig,
                         dataset_id: str, on_step=None) -> str | None:
    """Run one pre-training job to completion; returns the encoder id."""
    def emit(step, loss):
        reg.append_metric(run_id, step, loss)
        if on_step is not None:
            on_step(run_id, step, loss)

    try:
        ds, _ = reg.get_dataset(dataset_id)
        inst = PretrainedInstance(cfg).fit(ds, on_step=emit)
        encoder_id = reg.put_encoder(inst)
        reg.finish_run(run_id, "succeeded", artifacts={"encoder_id": encoder_id})
        return encoder_id
    except Exception as exc:  # noqa: BLE001 - the run record carries the failure
        reg.finish_run(run_id, "failed", error=f"{type(exc).__name__}: {exc}")
        return None


def run_pretrain(reg: Registry, configs: list[PretrainTemplateConfig], dataset_id: str,
                 on_step=None) -> list[str]:
    """One pre-training run per config; successful encoders join the registry."""
    if not configs:
        raise ParameterError("run_pretrain needs at least one template config")
    reg.get_dataset(dataset_id)  # fail fast on unknown datasets
    records = [create_pretrain_run(reg, cfg, dataset_id) for cfg in configs]
    for record, cfg in zip(records, configs):
        execute_pretrain_run(reg, record.run_id, cfg, dataset_id, on_step=on_step)
    return [r.run_id for r in records]


def _build_task_model(reg: Registry, encoder_ids, fusion_cfg, task_spec, from_scratch,
                      scratch_configs) -> TaskModel:
    if encoder_ids:
        instances = [reg.get_encoder(e) for e in encoder_ids]
        return TaskModel(instances, fusion_cfg, task_spec)
    if not from_scratch:
        raise ParameterError("no encoder ids given; pass from_scratch=True to train a baseline")
    if not scratch_configs:
        raise ParameterError("a from-scratch run needs template configs for its encoders")
    return build_from_scratch(scratch_configs, fusion_cfg, task_spec)


def create_finetune_run(reg: Registry, encoder_ids, fusion_cfg: FusionConfig,
                        task_spec: TaskSpec, dataset_id: str, from_scratch: bool):
    return reg.create_run(
        "finetune",
        {
            "dataset_id": dataset_id,
            "encoder_ids": list(encoder_ids),
            "from_scratch": from_scratch,
            "task_spec": {**asdict(task_spec), "trainable": list(task_spec.trainable)},
            "fusion": asdict(fusion_cfg),
        },
    )


def execute_finetune_run(reg: Registry, run_id: str, encoder_ids, fusion_cfg, task_spec,
                         dataset_id, from_scratch=False, scratch_configs=None,
                         on_step=None) -> str | None:
    def emit(step, loss):
        reg.append_metric(run_id, step, loss)
        if on_step is not None:
            on_step(run_id, step, loss)

    try:
        ds, labels = reg.get_dataset(dataset_id)
        tm = _build_task_model(reg, encoder_ids, fusion_cfg, task_spec, from_scratch,
                               scratch_configs)
        tm.fine_tune(ds, labels, on_step=emit)
        doc = export_model_json(tm)
        model_id = reg.put_model(doc)
        evaluation = build_evaluation(tm, ds, labels)
        reg.put_evaluation(model_id, evaluation)
        reg.finish_run(run_id, "succeeded", artifacts={"model_id": model_id})
        return model_id
    except Exception as exc:  # noqa: BLE001
        reg.finish_run(
            run_id,
            "failed",
            error=f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}",
        )
        return None


def run_finetune(reg: Registry, encoder_ids: list[str], fusion_cfg: FusionConfig,
                 task_spec: TaskSpec, dataset_id: str, from_scratch: bool = False,
                 scratch_configs: list[PretrainTemplateConfig] | None = None,
                 on_step=None):
    """Fine-tune a task model; returns (run_id, model_id or None on failure)."""
    reg.get_dataset(dataset_id)
    # validate inputs before the run record exists so bad requests fail loudly
    _build_task_model(reg, encoder_ids, fusion_cfg, task_spec, from_scratch, scratch_configs)
    record = create_finetune_run(reg, encoder_ids, fusion_cfg, task_spec, dataset_id,
                                 from_scratch)
    model_id = execute_finetune_run(reg, record.run_id, encoder_ids, fusion_cfg, task_spec,
                                    dataset_id, from_scratch, scratch_configs, on_step=on_step)
    return record.run_id, model_id


def load_model(reg: Registry, model_id: str) -> TaskModel:
    return import_model_json(reg.get_model_doc(model_id))


def _project_2d(z: np.ndarray) -> np.ndarray:
    """2-component linear (PCA) projection for the cluster scatter view."""
    centered = z - z.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return centered @ vt[:2].T


def build_evaluation(tm: TaskModel, ds, labels=None, missing=None) -> dict:
    """Task-specific evaluation + visualization payload (all server-computed)."""
    task = tm.spec.task
    values = ds.values
    if task == "classification":
        pred, probs = tm.classify_predict(ds)
        payload = {"task": task, "n": int(values.shape[0])}
        if labels is not None and labels.kind == "class":
            m = metrics_mod.classification_metrics(labels.class_labels, pred)
            payload["metrics"] = m
            payload["confusion"] = metrics_mod.confusion_matrix(
                labels.class_labels, pred, tm.spec.num_classes
            )
        payload["predictions"] = pred.tolist()
        payload["max_prob"] = probs.max(axis=1).round(6).tolist()
        return payload
    if task == "clustering":
        assign = tm.cluster_predict(ds)
        z = tm.fused_representations(ds)
        xy = _project_2d(z)
        payload = {
            "task": task,
            "assignments": assign.tolist(),
            "scatter": {"x": xy[:, 0].round(6).tolist(), "y": xy[:, 1].round(6).tolist()},
            "penalty_history": [float(p) for p in tm.history.get("penalty", [])],
        }
        if labels is not None and labels.kind == "class":
            payload["metrics"] = metrics_mod.clustering_metrics(labels.class_labels, assign)
        return payload
    if task == "forecasting":
        h = tm.spec.horizon
        pred = tm.forecast_predict(values[:, :, :-h])
        target = values[:, :, -h:]
        k = min(3, values.shape[0])
        return {
            "task": task,
            "metrics": metrics_mod.regression_metrics(target, pred),
            "overlay": {
                "history": values[:k, 0, :-h].round(6).tolist(),
                "truth": target[:k, 0].round(6).tolist(),
                "pred": pred[:k, 0].round(6).tolist(),
            },
        }
    if task == "anomaly_detection":
        result = anomaly_decide(
            tm.anomaly_scores(ds).scores,
            ("fixed", tm.tau) if tm.tau is not None else ("quantile", tm.spec.threshold_value),
            calibration_scores=tm.calibration_scores,
        )
        payload = {
            "task": task,
            "tau": result.tau,
            "timeline": {
                "scores": result.scores[:3].round(6).tolist(),
                "flags": result.flags[:3].astype(int).tolist(),
            },
            "flagged_fraction": float(result.flags.mean()),
        }
        if labels is not None and labels.kind == "anomaly_flags":
            payload["metrics"] = metrics_mod.flag_metrics(labels.anomaly_flags, result.flags)
        return payload
    # imputation
    recon = tm._reconstruct(values)
    payload = {
        "task": task,
        "metrics": metrics_mod.regression_metrics(values, recon),
        "overlay": {
            "truth": values[:2, 0].round(6).tolist(),
            "reconstruction": recon[:2, 0].round(6).tolist(),
        },
    }
    if missing is not None:
        completed, imputed = tm.impute_predict(ds, missing)
        payload["imputed_count"] = len(imputed)
    return payload
