"""HTTP service: dataset upload, run launch, live metric streams, model
predict/export/evaluation.

Runs execute on a bounded worker pool (default 2 workers); registry
mutations are serialized inside the registry, metric reads are snapshots.
Metric streaming uses server-sent events with a JSON polling fallback
(``?since=<step>``).
"""

from __future__ import annotations

import base64
import json
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse, StreamingResponse

from .data import LabelSet, MissingIndex, TimeSeriesDataset
from .errors import (
    NotFoundError,
    ParameterError,
    StateError,
    UnitsError,
    VersionError,
)
from .fusion import FusionConfig
from .pretraining import FAMILIES
from .registry import Registry
from .runs import (
    create_finetune_run,
    create_pretrain_run,
    execute_finetune_run,
    execute_pretrain_run,
    load_model,
)
from .tuning import DEFAULTS, template_config_from_flat, task_spec_from_flat

SSE_POLL_SECONDS = 0.15


def _error_status(exc: UnitsError) -> int:
    if isinstance(exc, NotFoundError):
        return 404
    if isinstance(exc, (StateError, VersionError)):
        return 409
    return 400


def _parse_dataset(body: dict) -> tuple[TimeSeriesDataset, LabelSet | None]:
    if "uts_b64" in body:
        from .data import _parse_uts

        raw = base64.b64decode(body["uts_b64"])
        ds, labels, _ = _parse_uts(raw, "<upload>")
        return ds, labels
    if "values" not in body:
        raise ParameterError("dataset upload needs 'values' or 'uts_b64'")
    ds = TimeSeriesDataset(np.asarray(body["values"], dtype=np.float64))
    labels = None
    if body.get("labels") is not None:
        lab = body["labels"]
        labels = LabelSet(
            "class",
            class_labels=np.asarray(lab["class_labels"], dtype=int),
            num_classes=int(lab["num_classes"]),
        )
    return ds, labels


def create_app(registry: Registry, max_workers: int = 2) -> FastAPI:
    app = FastAPI(title="units service")
    pool = ThreadPoolExecutor(max_workers=max_workers)
    app.state.registry = registry
    app.state.pool = pool

    @app.exception_handler(UnitsError)
    async def units_error_handler(request: Request, exc: UnitsError):
        return JSONResponse(
            status_code=_error_status(exc),
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.get("/templates")
    def templates():
        return {
            "families": list(FAMILIES),
            "defaults": DEFAULTS,
            "constraints": {
                "temperature": "> 0",
                "masking_rate": "in (0, 1] for masked objectives",
                "hybrid_weight": "in [0, 1], hybrid family only",
                "epochs": ">= 0",
            },
        }

    @app.post("/datasets")
    async def upload_dataset(request: Request):
        body = await request.json()
        ds, labels = _parse_dataset(body)
        dataset_id = registry.put_dataset(ds, labels, name=body.get("name"))
        return {"dataset_id": dataset_id, "n": ds.n, "d": ds.d, "t": ds.t,
                "has_labels": labels is not None}

    @app.get("/datasets")
    def list_datasets():
        return {"datasets": registry.list_datasets()}

    @app.post("/runs/pretrain")
    async def post_pretrain(request: Request):
        body = await request.json()
        dataset_id = body.get("dataset_id")
        configs_in = body.get("configs", [])
        if not configs_in:
            raise ParameterError("configs must be a nonempty list")
        ds, _ = registry.get_dataset(dataset_id)
        configs = [
            template_config_from_flat(c, in_channels=ds.d, seed=int(c.get("seed", 0)))
            for c in configs_in
        ]
        records = [create_pretrain_run(registry, cfg, dataset_id) for cfg in configs]
        for record, cfg in zip(records, configs):
            pool.submit(execute_pretrain_run, registry, record.run_id, cfg, dataset_id)
        return {"run_ids": [r.run_id for r in records]}

    @app.post("/runs/finetune")
    async def post_finetune(request: Request):
        body = await request.json()
        dataset_id = body.get("dataset_id")
        ds, _ = registry.get_dataset(dataset_id)
        spec_in = dict(body.get("task_spec", {}))
        task = spec_in.pop("task", None)
        if task is None:
            raise ParameterError("task_spec.task is required")
        spec = task_spec_from_flat(task, spec_in, seed=int(spec_in.get("seed", 0)))
        fusion_in = body.get("fusion", {"kind": "concatenation"})
        if isinstance(fusion_in, str):
            fusion_in = {"kind": fusion_in}
        fusion_cfg = FusionConfig(
            kind=fusion_in.get("kind", "concatenation"),
            out_dim=fusion_in.get("out_dim"),
            learnable=fusion_in.get("learnable", True),
        )
        encoder_ids = body.get("encoder_ids", [])
        from_scratch = bool(body.get("from_scratch", not encoder_ids))
        scratch_configs = None
        if not encoder_ids:
            scratch_configs = [
                template_config_from_flat(c, in_channels=ds.d, seed=int(c.get("seed", 0)))
                for c in body.get("scratch_configs", [])
            ]
        for e in encoder_ids:  # fail fast before creating the run
            registry.get_encoder(e)
        if not encoder_ids and not scratch_configs:
            raise ParameterError("finetune needs encoder_ids or scratch_configs")
        record = create_finetune_run(registry, encoder_ids, fusion_cfg, spec, dataset_id,
                                     from_scratch)
        pool.submit(execute_finetune_run, registry, record.run_id, encoder_ids, fusion_cfg,
                    spec, dataset_id, from_scratch, scratch_configs)
        return {"run_id": record.run_id}

    @app.get("/runs")
    def list_runs():
        return {"runs": [r.to_json() for r in registry._runs.values()]}

    @app.get("/runs/{run_id}")
    def get_run(run_id: str):
        return registry.get_run(run_id).to_json()

    @app.get("/runs/{run_id}/metrics")
    def get_metrics(run_id: str, since: int = 0, stream: bool = False):
        registry.get_run(run_id)
        if not stream:
            return {
                "run_id": run_id,
                "status": registry.get_run(run_id).status,
                "entries": registry.read_metrics(run_id, since=since),
            }

        def gen():
            cursor = since
            while True:
                entries = registry.read_metrics(run_id, since=cursor)
                for e in entries:
                    cursor = e["step"] + 1
                    yield f"data: {json.dumps(e)}\n\n"
                status = registry.get_run(run_id).status
                if status != "running" and not registry.read_metrics(run_id, since=cursor):
                    yield f"event: end\ndata: {json.dumps({'status': status})}\n\n"
                    return
                time.sleep(SSE_POLL_SECONDS)

        return StreamingResponse(gen(), media_type="text/event-stream")

    @app.get("/encoders")
    def list_encoders():
        return {"encoders": registry.list_encoders()}

    @app.post("/models/{model_id}/predict")
    async def predict(model_id: str, request: Request):
        body = await request.json()
        tm = load_model(registry, model_id)
        if "dataset_id" in body:
            ds, _ = registry.get_dataset(body["dataset_id"])
        elif "values" in body:
            ds = TimeSeriesDataset(np.asarray(body["values"], dtype=np.float64))
        else:
            raise ParameterError("predict needs 'values' or 'dataset_id'")
        task = tm.spec.task
        if task == "classification":
            labels, probs = tm.classify_predict(ds)
            return {"task": task, "labels": labels.tolist(), "probabilities": probs.tolist()}
        if task == "clustering":
            assign = tm.cluster_predict(ds)
            return {"task": task, "assignments": assign.tolist()}
        if task == "forecasting":
            pred = tm.forecast_predict(ds)
            return {"task": task, "predictions": pred.tolist()}
        if task == "anomaly_detection":
            from .tasks import anomaly_decide

            result = anomaly_decide(
                tm.anomaly_scores(ds).scores,
                ("fixed", tm.tau),
            )
            return {
                "task": task,
                "scores": result.scores.tolist(),
                "flags": result.flags.astype(int).tolist(),
                "tau": result.tau,
            }
        missing_in = body.get("missing")
        if missing_in is None:
            raise ParameterError("imputation predict needs 'missing' positions per sample")
        missing = MissingIndex.from_lists(missing_in)
        completed, imputed = tm.impute_predict(ds, missing)
        return {
            "task": task,
            "completed": completed.values.tolist(),
            "imputed": [[i, j, k, v] for i, j, k, v in imputed],
        }

    @app.get("/models/{model_id}/export")
    def export_model(model_id: str):
        return Response(content=registry.get_model_bytes(model_id),
                        media_type="application/json")

    @app.get("/models/{model_id}/evaluation")
    def get_evaluation(model_id: str):
        return registry.get_evaluation(model_id)

    return app


def serve(store_root, host: str = "127.0.0.1", port: int = 8000, max_workers: int = 2):
    import uvicorn

    app = create_app(Registry(store_root), max_workers=max_workers)
    uvicorn.run(app, host=host, port=port, log_level="warning")
