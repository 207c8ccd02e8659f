"""units: universal time series analysis via self-supervised pre-training.

Pre-train task-independent encoders on unlabeled series, fuse their
representations, and fine-tune lightweight heads for classification,
clustering, forecasting, anomaly detection and missing-value imputation.
"""

from .data import (
    BinaryMask,
    LabelSet,
    MissingIndex,
    TimeSeriesDataset,
    apply_mask,
    load_dataset,
    normalize,
    sample_binary_mask,
    slice_windows,
)
from .fusion import FusionConfig, FusionModel, concat_fuse, projection_fuse
from .nn import Decoder, Encoder, EncoderConfig, encode, encode_sequence
from .pretraining import PretrainedInstance, PretrainTemplateConfig, augment, fit, transform
from .tasks import AnomalyResult, TaskModel, TaskSpec, anomaly_decide, build_from_scratch
from .tuning import SearchSpace, bayes_optimize, resolve_config

__version__ = "0.1.0"

__all__ = [
    "AnomalyResult",
    "BinaryMask",
    "Decoder",
    "Encoder",
    "EncoderConfig",
    "FusionConfig",
    "FusionModel",
    "LabelSet",
    "MissingIndex",
    "PretrainTemplateConfig",
    "PretrainedInstance",
    "SearchSpace",
    "TaskModel",
    "TaskSpec",
    "TimeSeriesDataset",
    "anomaly_decide",
    "apply_mask",
    "augment",
    "bayes_optimize",
    "build_from_scratch",
    "concat_fuse",
    "encode",
    "encode_sequence",
    "fit",
    "load_dataset",
    "normalize",
    "projection_fuse",
    "resolve_config",
    "sample_binary_mask",
    "slice_windows",
    "transform",
]
