"""On-disk registry: datasets, encoders, models, runs and metric streams.

A directory of JSON documents and raw blobs, content-addressed for
artifacts (id = truncated sha256 of the serialized content) so identical
objects dedupe and immutability is checkable by hashing files.  Runs are
mutable (status transitions, append-only metric streams) and get counter
ids instead.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field

from .data import LabelSet, TimeSeriesDataset, load_dataset_full, save_uts
from .errors import NotFoundError, ParameterError, StateError
from .export import export_instance_json, import_instance_json
from .pretraining import PretrainedInstance

RUN_STATUSES = ("running", "succeeded", "failed")


@dataclass
class RunRecord:
    run_id: str
    kind: str  # pretrain | finetune
    config: dict
    status: str = "running"
    created_at: float = 0.0
    finished_at: float | None = None
    artifacts: dict = field(default_factory=dict)
    error: str | None = None

    def to_json(self) -> dict:
        return {
            "run_id": self.run_id,
            "kind": self.kind,
            "config": self.config,
            "status": self.status,
            "created_at": self.created_at,
            "finished_at": self.finished_at,
            "artifacts": self.artifacts,
            "error": self.error,
        }


def _content_id(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()[:12]


class Registry:
    def __init__(self, root):
        from pathlib import Path

        self.root = Path(root)
        for sub in ("datasets", "encoders", "models", "runs"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        self._metrics: dict[str, list[dict]] = {}
        self._runs: dict[str, RunRecord] = {}
        self._load_runs()

    def _load_runs(self):
        for path in sorted((self.root / "runs").glob("*.json")):
            record = json.loads(path.read_text())
            self._runs[record["run_id"]] = RunRecord(**record)
            mpath = path.with_suffix(".metrics.jsonl")
            entries = []
            if mpath.exists():
                for line in mpath.read_text().splitlines():
                    if line.strip():
                        entries.append(json.loads(line))
            self._metrics[record["run_id"]] = entries

    # -- datasets -----------------------------------------------------------

    def put_dataset(self, ds: TimeSeriesDataset, labels: LabelSet | None = None,
                    name: str | None = None) -> str:
        path_tmp = self.root / "datasets" / "_tmp.uts"
        with self._lock:
            save_uts(path_tmp, ds, labels if labels is not None and labels.kind == "class" else None)
            payload = path_tmp.read_bytes()
            dataset_id = _content_id(payload)
            final = self.root / "datasets" / f"{dataset_id}.uts"
            path_tmp.rename(final)
            meta = {"name": name or dataset_id, "n": ds.n, "d": ds.d, "t": ds.t}
            (self.root / "datasets" / f"{dataset_id}.json").write_text(json.dumps(meta))
        return dataset_id

    def get_dataset(self, dataset_id: str):
        path = self.root / "datasets" / f"{dataset_id}.uts"
        if not path.exists():
            raise NotFoundError(f"dataset {dataset_id!r} not found")
        return load_dataset_full(path, "uts_binary")[:2]

    def list_datasets(self) -> list[dict]:
        out = []
        for path in sorted((self.root / "datasets").glob("*.json")):
            meta = json.loads(path.read_text())
            meta["dataset_id"] = path.stem
            out.append(meta)
        return out

    # -- encoders -------------------------------------------------------------

    def put_encoder(self, inst: PretrainedInstance) -> str:
        doc = export_instance_json(inst)
        payload = json.dumps(doc, sort_keys=True).encode()
        encoder_id = _content_id(payload)
        with self._lock:
            (self.root / "encoders" / f"{encoder_id}.json").write_bytes(payload)
        return encoder_id

    def get_encoder(self, encoder_id: str) -> PretrainedInstance:
        path = self.root / "encoders" / f"{encoder_id}.json"
        if not path.exists():
            raise NotFoundError(f"encoder {encoder_id!r} not found")
        return import_instance_json(json.loads(path.read_text()))

    def list_encoders(self) -> list[dict]:
        out = []
        for path in sorted((self.root / "encoders").glob("*.json")):
            doc = json.loads(path.read_text())
            out.append(
                {
                    "encoder_id": path.stem,
                    "template_family": doc["template_family"],
                    "repr_dim": doc["config"]["encoder"]["repr_dim"],
                    "loss_curve": doc.get("loss_curve", []),
                }
            )
        return out

    def encoder_checksum(self, encoder_id: str) -> str:
        path = self.root / "encoders" / f"{encoder_id}.json"
        if not path.exists():
            raise NotFoundError(f"encoder {encoder_id!r} not found")
        return hashlib.sha256(path.read_bytes()).hexdigest()

    # -- models -----------------------------------------------------------------

    def put_model(self, doc: dict) -> str:
        payload = json.dumps(doc, sort_keys=True).encode()
        model_id = _content_id(payload)
        with self._lock:
            (self.root / "models" / f"{model_id}.json").write_bytes(payload)
        return model_id

    def get_model_doc(self, model_id: str) -> dict:
        return json.loads(self.get_model_bytes(model_id))

    def get_model_bytes(self, model_id: str) -> bytes:
        """Raw stored bytes, so the export endpoint serves the exact document."""
        path = self.root / "models" / f"{model_id}.json"
        if not path.exists():
            raise NotFoundError(f"model {model_id!r} not found")
        return path.read_bytes()

    def put_evaluation(self, model_id: str, evaluation: dict):
        with self._lock:
            path = self.root / "models" / f"{model_id}.evaluation.json"
            path.write_text(json.dumps(evaluation))

    def get_evaluation(self, model_id: str) -> dict:
        path = self.root / "models" / f"{model_id}.evaluation.json"
        if not path.exists():
            raise NotFoundError(f"no evaluation stored for model {model_id!r}")
        return json.loads(path.read_text())

    # -- runs ----------------------------------------------------------------------

    def create_run(self, kind: str, config: dict) -> RunRecord:
        if kind not in ("pretrain", "finetune"):
            raise ParameterError(f"unknown run kind {kind!r}")
        with self._lock:
            run_id = f"run-{len(self._runs):06d}"
            record = RunRecord(run_id, kind, config, created_at=time.time())
            self._runs[run_id] = record
            self._metrics[run_id] = []
            self._flush_run(record)
        return record

    def _flush_run(self, record: RunRecord):
        path = self.root / "runs" / f"{record.run_id}.json"
        path.write_text(json.dumps(record.to_json()))

    def get_run(self, run_id: str) -> RunRecord:
        run = self._runs.get(run_id)
        if run is None:
            raise NotFoundError(f"run {run_id!r} not found")
        return run

    def append_metric(self, run_id: str, step: int, loss: float):
        run = self.get_run(run_id)
        with self._lock:
            stream = self._metrics[run_id]
            if stream and step <= stream[-1]["step"]:
                raise ParameterError("metric steps must be strictly increasing")
            entry = {"step": int(step), "loss": float(loss), "wall_time": time.time()}
            stream.append(entry)
            with open(self.root / "runs" / f"{run.run_id}.metrics.jsonl", "a") as f:
                f.write(json.dumps(entry) + "\n")

    def read_metrics(self, run_id: str, since: int = 0) -> list[dict]:
        self.get_run(run_id)
        stream = self._metrics[run_id]
        return [e for e in stream if e["step"] >= since]

    def finish_run(self, run_id: str, status: str, artifacts: dict | None = None,
                   error: str | None = None):
        if status not in ("succeeded", "failed"):
            raise ParameterError(f"terminal status must be succeeded or failed, got {status!r}")
        with self._lock:
            run = self.get_run(run_id)
            if run.status != "running":
                raise StateError(f"run {run_id} already {run.status}")
            run.status = status
            run.finished_at = time.time()
            if artifacts:
                run.artifacts.update(artifacts)
            run.error = error
            self._flush_run(run)
        return run
