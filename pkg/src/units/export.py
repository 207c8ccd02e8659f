"""JSON model export/import.

Parameter tensors are base64 of little-endian float32 plus a shape list, so
the document stays plain JSON while remaining compact.  Top-level keys:
schema_version, encoders, fusion, task_head, task_spec, normalization.
"""

from __future__ import annotations

import base64
from dataclasses import asdict

import numpy as np

from .data import NormalizationStats
from .errors import FormatError, StateError, VersionError
from .fusion import FusionConfig, FusionModel
from .nn import Decoder, Encoder, EncoderConfig
from .pretraining import PretrainedInstance, PretrainTemplateConfig
from .tasks import TaskModel, TaskSpec

SCHEMA_VERSION = "1"


def encode_array(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {
        "shape": list(a.shape),
        "data": base64.b64encode(a.astype("<f4").tobytes()).decode("ascii"),
    }


def decode_array(entry: dict, name: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in entry["shape"])
        raw = base64.b64decode(entry["data"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"parameter entry {name!r} is malformed: {exc}") from None
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise FormatError(
            f"parameter entry {name!r} holds {len(raw)} bytes, shape {shape} needs {expected}"
        )
    return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)


def _params_to_json(params: dict[str, np.ndarray]) -> dict:
    return {k: encode_array(v) for k, v in params.items()}


def _params_from_json(entry: dict, scope: str) -> dict[str, np.ndarray]:
    return {k: decode_array(v, f"{scope}/{k}") for k, v in entry.items()}


def export_instance_json(inst: PretrainedInstance) -> dict:
    cfg = asdict(inst.config)
    cfg["encoder"] = asdict(inst.config.encoder)
    cfg["augmentations"] = [list(p) for p in inst.config.augmentations]
    return {
        "template_family": inst.config.family,
        "config": cfg,
        "params": _params_to_json(inst.encoder.params),
        "aux_params": _params_to_json(inst.aux_params),
        "loss_curve": [float(v) for v in inst.loss_curve],
        "fitted": bool(inst.fitted),
    }


def import_instance_json(doc: dict) -> PretrainedInstance:
    cfg_dict = dict(doc["config"])
    enc_cfg = EncoderConfig(**cfg_dict.pop("encoder"))
    cfg_dict["augmentations"] = tuple(tuple(p) for p in cfg_dict.get("augmentations", ()))
    cfg = PretrainTemplateConfig(encoder=enc_cfg, **cfg_dict)
    encoder = Encoder(enc_cfg, _params_from_json(doc["params"], "encoder"))
    aux = _params_from_json(doc.get("aux_params", {}), "aux")
    return PretrainedInstance(cfg, encoder, aux, doc.get("loss_curve", []),
                              fitted=doc.get("fitted", True))


def export_model_json(tm: TaskModel) -> dict:
    if not tm.fitted:
        raise StateError("cannot export an unfitted model")
    fusion_entry = {
        "kind": tm.fusion.config.kind,
        "k_dims": tm.fusion.k_dims,
        "out_dim": tm.fusion.out_dim,
        "learnable": tm.fusion.config.learnable,
        "params": _params_to_json(tm.fusion.params),
    }
    head_entry = None
    if tm.head is not None:
        head_entry = {
            "kind": tm.head.kind,
            "in_dim": tm.head.in_dim,
            "out_shape": list(tm.head.out_shape),
            "params": _params_to_json(tm.head.params),
        }
    spec_entry = asdict(tm.spec)
    spec_entry["trainable"] = list(tm.spec.trainable)
    extras = {}
    if tm.tau is not None:
        extras["tau"] = float(tm.tau)
    if tm.calibration_scores is not None:
        extras["calibration_scores"] = encode_array(tm.calibration_scores)
    if tm.centroids is not None:
        extras["centroids"] = encode_array(tm.centroids)
    norm_entry = None
    if tm.norm_stats is not None:
        norm_entry = {
            "mode": tm.norm_stats.mode,
            "shift": encode_array(tm.norm_stats.shift),
            "scale": encode_array(tm.norm_stats.scale),
        }
    return {
        "schema_version": SCHEMA_VERSION,
        "encoders": [export_instance_json(inst) for inst in tm.instances],
        "fusion": fusion_entry,
        "task_head": {"decoder": head_entry, **extras},
        "task_spec": spec_entry,
        "normalization": norm_entry,
    }


def import_model_json(doc: dict) -> TaskModel:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise VersionError(
            f"document declares schema_version {version!r}, this build reads {SCHEMA_VERSION!r}"
        )
    for key in ("encoders", "fusion", "task_head", "task_spec"):
        if key not in doc:
            raise FormatError(f"missing top-level key {key!r}")
    instances = [import_instance_json(e) for e in doc["encoders"]]
    spec_dict = dict(doc["task_spec"])
    spec_dict["trainable"] = tuple(spec_dict.get("trainable", ()))
    spec = TaskSpec(**spec_dict)
    fe = doc["fusion"]
    fusion_cfg = FusionConfig(
        kind=fe["kind"],
        out_dim=fe["out_dim"] if fe["kind"] == "projection" else None,
        learnable=fe.get("learnable", True),
    )
    fusion = FusionModel(fusion_cfg, fe["k_dims"], params=_params_from_json(fe["params"], "fusion"))
    he = doc["task_head"]
    head = None
    if he.get("decoder") is not None:
        de = he["decoder"]
        head = Decoder(de["kind"], int(de["in_dim"]), tuple(de["out_shape"]),
                       params=_params_from_json(de["params"], "task_head"))
    norm = None
    if doc.get("normalization") is not None:
        ne = doc["normalization"]
        norm = NormalizationStats(
            ne["mode"],
            decode_array(ne["shift"], "normalization/shift"),
            decode_array(ne["scale"], "normalization/scale"),
        )
    tm = TaskModel(instances, fusion, spec, from_scratch=True, norm_stats=norm, head=head)
    tm.fitted = True
    if "tau" in he:
        tm.tau = float(he["tau"])
    if "calibration_scores" in he:
        tm.calibration_scores = decode_array(he["calibration_scores"], "task_head/calibration")
    if "centroids" in he:
        tm.centroids = decode_array(he["centroids"], "task_head/centroids")
    return tm
