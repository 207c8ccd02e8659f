"""The five analysis tasks on top of fused representations.

Every task is fit (fine-tuning) + predict.  Fine-tuning owns copies of the
pre-trained encoders, so registry entries are never mutated; parameter
groups left out of ``trainable`` stay bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .data import MissingIndex, TimeSeriesDataset, sample_binary_mask
from .errors import DivergenceError, ParameterError, ShapeError, StateError
from .fusion import FusionConfig, FusionModel
from .kmeans import kmeans, l2_penalty
from .losses import (
    cluster_fit_loss,
    cross_entropy_loss,
    kmeans_penalty_tensor,
    mae_loss,
    mse_loss,
    reconstruction_loss,
)
from .nn import Decoder, Encoder, OptimizerState, gradient_step
from .pretraining import PretrainedInstance, PretrainTemplateConfig

TASKS = ("classification", "clustering", "forecasting", "anomaly_detection", "imputation")
PARAM_GROUPS = ("encoders", "fusion", "head")


@dataclass(frozen=True)
class TaskSpec:
    task: str
    num_classes: int | None = None
    horizon: int | None = None
    forecast_loss: str = "mse"
    threshold_kind: str = "quantile"
    threshold_value: float = 0.99
    imputation_masking_rate: float = 0.2
    imputation_mask_geometry: str = "iid"
    beta: float = 0.1
    epochs: int = 25
    batch_size: int = 16
    learning_rate: float = 1e-4
    trainable: tuple[str, ...] = ("encoders", "fusion", "head")
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ParameterError(f"unknown task {self.task!r}")
        if self.task in ("classification", "clustering"):
            if self.num_classes is None or self.num_classes < 1:
                raise ParameterError(f"{self.task} requires a positive num_classes")
        if self.task == "forecasting" and (self.horizon is None or self.horizon < 1):
            raise ParameterError("forecasting requires a positive horizon")
        if self.forecast_loss not in ("mse", "mae"):
            raise ParameterError(f"unknown forecasting loss {self.forecast_loss!r}")
        if self.threshold_kind not in ("fixed", "quantile"):
            raise ParameterError(f"unknown threshold rule {self.threshold_kind!r}")
        if self.threshold_kind == "quantile" and not 0.0 < self.threshold_value < 1.0:
            raise ParameterError("quantile must be in (0, 1)")
        if not 0.0 <= self.imputation_masking_rate <= 1.0:
            raise ParameterError("imputation masking rate must be in [0, 1]")
        if self.beta < 0:
            raise ParameterError("beta must be >= 0")
        if self.beta > 1e3:
            raise ParameterError("beta > 1e3 would drown the pre-training objective")
        if self.epochs < 0 or self.batch_size < 1:
            raise ParameterError("epochs must be >= 0 and batch_size >= 1")
        for g in self.trainable:
            if g not in PARAM_GROUPS:
                raise ParameterError(f"unknown trainable group {g!r}")


@dataclass
class AnomalyResult:
    scores: np.ndarray  # (N, T), nonnegative
    flags: np.ndarray | None = None  # (N, T) booleans
    tau: float | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.flags is not None:
            self.flags = np.asarray(self.flags, dtype=bool)
            if self.tau is None:
                raise ParameterError("flags require the tau that produced them")
            if not np.array_equal(self.flags, self.scores > self.tau):
                raise ParameterError("flags must equal scores > tau cell-for-cell")


class TaskModel:
    """Fused encoders + fusion model + task head, per one TaskSpec."""

    def __init__(self, instances: list[PretrainedInstance], fusion: FusionConfig | FusionModel,
                 spec: TaskSpec, from_scratch: bool = False, norm_stats=None,
                 head: Decoder | None = None):
        if not instances:
            raise ParameterError("a task model needs at least one encoder instance")
        if not from_scratch:
            for inst in instances:
                if not inst.fitted:
                    raise StateError(
                        "encoders must be pre-trained (or pass from_scratch=True)"
                    )
        d_set = {inst.config.encoder.in_channels for inst in instances}
        if len(d_set) != 1:
            raise ShapeError(f"instances disagree on channel count: {sorted(d_set)}")
        self.instances = [_copy_instance(inst) for inst in instances]
        self.in_channels = d_set.pop()
        k_dims = [inst.repr_dim for inst in self.instances]
        if isinstance(fusion, FusionModel):
            self.fusion = fusion
        else:
            self.fusion = FusionModel(fusion, k_dims)
        self.spec = spec
        self.from_scratch = from_scratch
        self.norm_stats = norm_stats
        self.head = head if head is not None else self._build_head()
        self.fitted = False
        self.history: dict[str, list[float]] = {"loss": []}
        self.calibration_scores: np.ndarray | None = None
        self.tau: float | None = None
        self.centroids: np.ndarray | None = None

    def _build_head(self) -> Decoder | None:
        spec = self.spec
        kp = self.fusion.out_dim
        seed = spec.seed + 17
        if spec.task == "classification":
            return Decoder("pooled", kp, (spec.num_classes,), seed=seed)
        if spec.task == "forecasting":
            return Decoder("pooled", kp, (self.in_channels, spec.horizon), seed=seed)
        if spec.task in ("anomaly_detection", "imputation"):
            return Decoder("per_timestep", kp, (self.in_channels,), seed=seed)
        return None  # clustering works directly on the representations

    # -- parameter plumbing ------------------------------------------------

    def _tensors(self):
        t = self.spec.trainable
        enc = "encoders" in t
        fus = "fusion" in t and self.fusion.learnable
        hd = "head" in t and self.head is not None
        bundles = {
            "enc": [inst.encoder.as_tensors(enc) for inst in self.instances],
            "aux": [inst.aux_tensors(enc) for inst in self.instances],
            "fusion": self.fusion.as_tensors(fus),
            "head": self.head.as_tensors(hd) if self.head is not None else {},
        }
        return bundles

    def _flatten(self, bundles):
        flat = {}
        for m, pt in enumerate(bundles["enc"]):
            for k, v in pt.items():
                flat[f"enc{m}/{k}"] = v
        for m, pt in enumerate(bundles["aux"]):
            for k, v in pt.items():
                flat[f"aux{m}/{k}"] = v
        for k, v in bundles["fusion"].items():
            flat[f"fusion/{k}"] = v
        for k, v in bundles["head"].items():
            flat[f"head/{k}"] = v
        return flat

    def _write_back(self, arrays: dict[str, np.ndarray]):
        for name, value in arrays.items():
            scope, key = name.split("/", 1)
            if scope.startswith("enc"):
                self.instances[int(scope[3:])].encoder.params[key] = value
            elif scope.startswith("aux"):
                self.instances[int(scope[3:])].aux_params[key] = value
            elif scope == "fusion":
                self.fusion.params[key] = value
            else:
                self.head.params[key] = value

    # -- forward paths -------------------------------------------------------

    def _pooled_t(self, xb, bundles) -> Tensor:
        reprs = [
            inst.encoder.pooled_features(xb, pt)
            for inst, pt in zip(self.instances, bundles["enc"])
        ]
        return self.fusion.fuse_tensors(reprs, bundles["fusion"])

    def _sequence_t(self, xb, bundles) -> Tensor:
        reprs = [
            inst.encoder.sequence_features(xb, pt)
            for inst, pt in zip(self.instances, bundles["enc"])
        ]
        return self.fusion.fuse_tensors(reprs, bundles["fusion"])

    def fused_representations(self, X) -> np.ndarray:
        """Pooled fused representations, plain numpy. X: dataset or (N, D, T)."""
        values = X.values if isinstance(X, TimeSeriesDataset) else np.asarray(X, dtype=np.float64)
        reprs = []
        for inst in self.instances:
            out = np.empty((values.shape[0], inst.repr_dim))
            for lo in range(0, values.shape[0], 256):
                out[lo : lo + 256] = inst.encoder.encode_batch(values[lo : lo + 256])
            reprs.append(out)
        return self.fusion.transform(reprs)

    def _reconstruct(self, values: np.ndarray) -> np.ndarray:
        """Decode per-timestep representations back to (N, D, T)."""
        seqs = [inst.encoder.encode_sequence_batch(values) for inst in self.instances]
        fused = self.fusion.transform(seqs)
        out = fused @ self.head.params["w"] + self.head.params["b"]
        return out.transpose(0, 2, 1)

    # -- fine-tuning ---------------------------------------------------------

    def fine_tune(self, X: TimeSeriesDataset, Y=None, on_step=None) -> "TaskModel":
        values = X.values if isinstance(X, TimeSeriesDataset) else np.asarray(X, dtype=np.float64)
        spec = self.spec
        step_fn, epoch_hook = self._prepare(values, Y)
        rng = np.random.default_rng(spec.seed)
        opt = OptimizerState(algorithm="adam", learning_rate=spec.learning_rate)
        n = values.shape[0]
        step_idx = 0
        for epoch in range(spec.epochs):
            if epoch_hook is not None:
                epoch_hook()
            order = rng.permutation(n)
            step_losses = []
            for lo in range(0, n, spec.batch_size):
                idx = order[lo : lo + spec.batch_size]
                if len(idx) < 2 and n >= 2:
                    continue
                bundles = self._tensors()
                loss = step_fn(bundles, idx, rng)
                val = loss.item()
                if not np.isfinite(val):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}, step {step_idx}")
                loss.backward()
                flat = self._flatten(bundles)
                params = {k: t.data for k, t in flat.items() if t.requires_grad}
                grads = {
                    k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                    for k, t in flat.items()
                    if t.requires_grad
                }
                params, opt = gradient_step(params, grads, opt)
                self._write_back(params)
                step_losses.append(val)
                if on_step is not None:
                    on_step(step_idx, val)
                step_idx += 1
            self.history["loss"].append(float(np.mean(step_losses)) if step_losses else float("nan"))
        if epoch_hook is not None:
            epoch_hook()
        self._finalize(values)
        self.fitted = True
        return self

    def _prepare(self, values, Y):
        spec = self.spec
        task = spec.task
        if task == "classification":
            if Y is None or Y.kind != "class":
                raise ParameterError("classification fine-tuning requires class labels")
            if int(Y.num_classes) != int(spec.num_classes):
                raise ParameterError(
                    f"label set has C={Y.num_classes}, task spec says {spec.num_classes}"
                )
            labels = Y.class_labels

            def step(bundles, idx, rng):
                z = self._pooled_t(values[idx], bundles)
                logits = self.head.forward(z, bundles["head"])
                return cross_entropy_loss(logits, labels[idx])

            return step, None

        if task == "forecasting":
            h = spec.horizon
            if Y is not None and Y.kind == "horizon" and int(Y.horizon) != int(h):
                raise ParameterError(f"label set declares H={Y.horizon}, task spec says {h}")
            if h >= values.shape[2]:
                raise ParameterError(f"horizon {h} must be smaller than T={values.shape[2]}")
            loss_fn = mse_loss if spec.forecast_loss == "mse" else mae_loss

            def step(bundles, idx, rng):
                xb = values[idx]
                z = self._pooled_t(xb[:, :, :-h], bundles)
                pred = self.head.forward(z, bundles["head"])
                return loss_fn(pred, xb[:, :, -h:])

            return step, None

        if task == "anomaly_detection":

            def step(bundles, idx, rng):
                xb = values[idx]
                feats = self._sequence_t(xb, bundles)
                xhat = self.head.forward(feats, bundles["head"])
                return reconstruction_loss(xb, xhat)

            return step, None

        if task == "imputation":

            def step(bundles, idx, rng):
                xb = values[idx]
                bits = np.stack(
                    [
                        sample_binary_mask(
                            xb.shape[1:], spec.imputation_masking_rate, rng,
                            spec.imputation_mask_geometry,
                        ).bits
                        for _ in range(len(idx))
                    ]
                )
                feats = self._sequence_t(xb * bits, bundles)
                xhat = self.head.forward(feats, bundles["head"])
                return reconstruction_loss(xb, xhat)  # full input, not only masked cells

            return step, None

        # clustering: centroids recomputed each epoch, constant inside it
        c = spec.num_classes
        if c > values.shape[0]:
            raise ParameterError(f"cannot form {c} clusters from {values.shape[0]} samples")
        state = {}
        self.history["penalty"] = []

        def refresh():
            z = self.fused_representations(values)
            centroids, assign, _ = kmeans(z, c, seed=spec.seed)
            state["centroids"], state["assign"] = centroids, assign
            self.centroids = centroids
            self.history["penalty"].append(l2_penalty(z, centroids, assign))

        def step(bundles, idx, rng):
            xb = values[idx]
            pre = None
            for m, inst in enumerate(self.instances):
                term = inst.batch_loss(bundles["enc"][m], bundles["aux"][m], xb, rng)
                pre = term if pre is None else pre + term
            zp = self._pooled_t(xb, bundles)
            penalty = kmeans_penalty_tensor(zp, state["centroids"], state["assign"][idx])
            return cluster_fit_loss(pre, penalty, spec.beta)

        return step, refresh

    def _finalize(self, values):
        if self.spec.task == "anomaly_detection":
            result = self._score(values)
            self.calibration_scores = result
            if self.spec.threshold_kind == "fixed":
                self.tau = float(self.spec.threshold_value)
            else:
                self.tau = float(np.quantile(result.ravel(), self.spec.threshold_value))

    def _score(self, values) -> np.ndarray:
        xhat = self._reconstruct(values)
        return np.abs(xhat - values).mean(axis=1)  # mean over channels -> (N, T)

    # -- prediction ------------------------------------------------------------

    def _require_fitted(self):
        if not self.fitted:
            raise StateError("predict called before fine-tuning")

    def classify_predict(self, X):
        self._require_fitted()
        if self.spec.task != "classification":
            raise StateError(f"model was fitted for {self.spec.task}")
        z = self.fused_representations(X)
        logits = z @ self.head.params["w"] + self.head.params["b"]
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        probs = e / e.sum(axis=1, keepdims=True)
        labels = np.argmax(probs, axis=1)  # ties -> lowest index
        return labels, probs

    def cluster_predict(self, X) -> np.ndarray:
        if self.spec.task != "clustering":
            raise StateError(f"model was fitted for {self.spec.task}")
        z = self.fused_representations(X)
        if self.spec.num_classes > z.shape[0]:
            raise ParameterError(
                f"cannot form {self.spec.num_classes} clusters from {z.shape[0]} samples"
            )
        _, assign, _ = kmeans(z, self.spec.num_classes, seed=self.spec.seed)
        return assign

    def forecast_predict(self, X) -> np.ndarray:
        self._require_fitted()
        if self.spec.task != "forecasting":
            raise StateError(f"model was fitted for {self.spec.task}")
        z = self.fused_representations(X)
        out = z @ self.head.params["w"] + self.head.params["b"]
        n = z.shape[0]
        return out.reshape(n, self.in_channels, self.spec.horizon)

    def anomaly_scores(self, X) -> AnomalyResult:
        self._require_fitted()
        if self.spec.task != "anomaly_detection":
            raise StateError(f"model was fitted for {self.spec.task}")
        values = X.values if isinstance(X, TimeSeriesDataset) else np.asarray(X, dtype=np.float64)
        return AnomalyResult(scores=self._score(values))

    def impute_predict(self, X, missing: MissingIndex):
        self._require_fitted()
        if self.spec.task != "imputation":
            raise StateError(f"model was fitted for {self.spec.task}")
        ds = X if isinstance(X, TimeSeriesDataset) else TimeSeriesDataset(np.asarray(X))
        if len(missing.positions) != ds.n:
            raise ParameterError(
                f"missing index covers {len(missing.positions)} samples, dataset has {ds.n}"
            )
        missing.validate(ds.d, ds.t)
        filled = ds.values.copy()
        for i, pos in enumerate(missing.positions):
            for j, k in pos:
                filled[i, j, k] = 0.0
        xhat = self._reconstruct(filled)
        completed = ds.values.copy()
        imputed = []
        for i, pos in enumerate(missing.positions):
            for j, k in pos:
                completed[i, j, k] = xhat[i, j, k]
                imputed.append((i, j, k, float(xhat[i, j, k])))
        return ds.with_values(completed), imputed


def _copy_instance(inst: PretrainedInstance) -> PretrainedInstance:
    enc = Encoder(inst.config.encoder, {k: v.copy() for k, v in inst.encoder.params.items()})
    aux = {k: v.copy() for k, v in inst.aux_params.items()}
    return PretrainedInstance(inst.config, enc, aux, list(inst.loss_curve), inst.fitted)


def build_from_scratch(template_cfgs: list[PretrainTemplateConfig], fusion_cfg: FusionConfig,
                       spec: TaskSpec) -> TaskModel:
    """Baseline arm: same architecture, random initialization, no pre-training."""
    instances = [PretrainedInstance(cfg) for cfg in template_cfgs]
    return TaskModel(instances, fusion_cfg, spec, from_scratch=True)


# ---------------------------------------------------------------------------
# module-level operation aliases


def fine_tune(tm: TaskModel, X, Y=None, on_step=None) -> TaskModel:
    return tm.fine_tune(X, Y, on_step=on_step)


def classify_predict(tm: TaskModel, X):
    return tm.classify_predict(X)


def cluster_predict(tm: TaskModel, X):
    return tm.cluster_predict(X)


def forecast_predict(tm: TaskModel, X):
    return tm.forecast_predict(X)


def anomaly_scores(tm: TaskModel, X) -> AnomalyResult:
    return tm.anomaly_scores(X)


def impute_fit(tm: TaskModel, X, on_step=None) -> TaskModel:
    if tm.spec.task != "imputation":
        raise ParameterError("impute_fit requires an imputation task spec")
    return tm.fine_tune(X, None, on_step=on_step)


def impute_predict(tm: TaskModel, X, missing: MissingIndex):
    return tm.impute_predict(X, missing)


def kmeans_regularizer(zp: np.ndarray, c: int, seed: int = 0):
    """k-means penalty on representations; centroids are gradient constants."""
    zp = np.asarray(zp, dtype=np.float64)
    if c > zp.shape[0]:
        raise ParameterError(f"cannot form {c} clusters from {zp.shape[0]} points")
    centroids, assign, _ = kmeans(zp, c, seed=seed)
    return l2_penalty(zp, centroids, assign), centroids, assign


def anomaly_decide(scores: np.ndarray, rule: tuple[str, float],
                   calibration_scores: np.ndarray | None = None) -> AnomalyResult:
    """Threshold scores into flags.  rule = ("fixed", tau) | ("quantile", q)."""
    if isinstance(scores, AnomalyResult):
        scores = scores.scores
    scores = np.asarray(scores, dtype=np.float64)
    kind, value = rule
    if kind == "fixed":
        tau = float(value)
    elif kind == "quantile":
        if not 0.0 < value < 1.0:
            raise ParameterError("quantile must be in (0, 1)")
        if calibration_scores is None or np.asarray(calibration_scores).size == 0:
            raise ParameterError("quantile rule needs a nonempty calibration set")
        tau = float(np.quantile(np.asarray(calibration_scores, dtype=np.float64).ravel(), value))
    else:
        raise ParameterError(f"unknown threshold rule {kind!r}")
    return AnomalyResult(scores=scores, flags=scores > tau, tau=tau)
