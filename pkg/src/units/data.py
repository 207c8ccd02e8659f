"""Dataset container, file ingestion, normalization, windowing and masks.

Values live in an immutable (N, D, T) float64 tensor.  Missing entries are
tracked in a separate MissingIndex — never as NaN sentinels — so numeric
kernels stay branch-free.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, IngestionError, ParameterError, ShapeError

UTS_MAGIC = b"UTS1"
LABEL_MAGIC = b"LBL1"
CSV_HEADER_PREFIX = "#units-csv,v1,D="

NORMALIZATION_MODES = ("zscore_per_channel", "minmax_per_channel", "none")
MASK_GEOMETRIES = ("iid", "contiguous_spans")
DEGENERATE_VARIANCE = 1e-12
MEAN_MASK_SPAN = 5.0


@dataclass(frozen=True)
class TimeSeriesDataset:
    values: np.ndarray  # (N, D, T), read-only
    sample_ids: tuple[str, ...] = ()
    channel_names: tuple[str, ...] = ()
    sampling_meta: str | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ShapeError(f"values must be (N, D, T), got shape {v.shape}")
        n, d, t = v.shape
        if n < 1 or d < 1 or t < 2:
            raise ShapeError(f"need N>=1, D>=1, T>=2, got {v.shape}")
        if not np.all(np.isfinite(v)):
            i, j, k = (int(a[0]) for a in np.nonzero(~np.isfinite(v)))
            raise IngestionError(
                f"non-finite value at sample {i}, channel {j}, timestep {k}"
            )
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        ids = tuple(self.sample_ids) or tuple(f"s{i}" for i in range(n))
        chans = tuple(self.channel_names) or tuple(f"ch{j}" for j in range(d))
        if len(ids) != n:
            raise ShapeError(f"{len(ids)} sample ids for {n} samples")
        if len(chans) != d:
            raise ShapeError(f"{len(chans)} channel names for {d} channels")
        object.__setattr__(self, "sample_ids", ids)
        object.__setattr__(self, "channel_names", chans)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]

    @property
    def t(self):
        return self.values.shape[2]

    def subset(self, indices) -> "TimeSeriesDataset":
        indices = np.asarray(indices, dtype=int)
        return TimeSeriesDataset(
            self.values[indices],
            tuple(self.sample_ids[i] for i in indices),
            self.channel_names,
            self.sampling_meta,
        )

    def with_values(self, values) -> "TimeSeriesDataset":
        return TimeSeriesDataset(values, self.sample_ids, self.channel_names, self.sampling_meta)


LABEL_KINDS = ("class", "cluster_count", "horizon", "anomaly_flags", "missing_targets")


@dataclass(frozen=True)
class LabelSet:
    kind: str
    class_labels: np.ndarray | None = None
    num_classes: int | None = None
    horizon: int | None = None
    anomaly_flags: np.ndarray | None = None
    missing_targets: tuple[tuple[int, int, int, float], ...] | None = None

    def __post_init__(self):
        if self.kind not in LABEL_KINDS:
            raise ParameterError(f"unknown label kind {self.kind!r}")
        required = {
            "class": ("class_labels", "num_classes"),
            "cluster_count": ("num_classes",),
            "horizon": ("horizon",),
            "anomaly_flags": ("anomaly_flags",),
            "missing_targets": ("missing_targets",),
        }[self.kind]
        fields = ("class_labels", "num_classes", "horizon", "anomaly_flags", "missing_targets")
        for name in fields:
            val = getattr(self, name)
            if name in required and val is None:
                raise ParameterError(f"label kind {self.kind!r} requires {name}")
            if name not in required and val is not None:
                raise ParameterError(f"label kind {self.kind!r} does not take {name}")
        if self.kind == "class":
            labels = np.asarray(self.class_labels, dtype=int)
            c = int(self.num_classes)
            if c < 1:
                raise ParameterError("num_classes must be positive")
            present = np.unique(labels)
            if present.min() < 0 or present.max() >= c:
                raise ParameterError(f"class labels must lie in [0, {c})")
            if not np.array_equal(present, np.arange(c)):
                raise ParameterError("class labels must cover the contiguous range [0, C)")
            object.__setattr__(self, "class_labels", labels)
        if self.kind == "cluster_count" and int(self.num_classes) < 1:
            raise ParameterError("cluster count must be positive")
        if self.kind == "horizon" and int(self.horizon) < 1:
            raise ParameterError("horizon must be positive")
        if self.kind == "anomaly_flags":
            object.__setattr__(self, "anomaly_flags", np.asarray(self.anomaly_flags, dtype=bool))

    def subset(self, indices) -> "LabelSet":
        if self.kind == "class":
            labels = self.class_labels[np.asarray(indices, dtype=int)]
            return LabelSet("class", class_labels=labels, num_classes=self.num_classes)
        if self.kind == "anomaly_flags":
            return LabelSet("anomaly_flags", anomaly_flags=self.anomaly_flags[indices])
        return self


@dataclass(frozen=True)
class MissingIndex:
    """Per-sample sets of (channel, timestep) positions that are missing."""

    positions: tuple[frozenset, ...]

    @staticmethod
    def from_lists(lists) -> "MissingIndex":
        return MissingIndex(tuple(frozenset((int(j), int(k)) for j, k in p) for p in lists))

    def validate(self, d: int, t: int):
        for i, pos in enumerate(self.positions):
            for j, k in pos:
                if not (0 <= j < d and 0 <= k < t):
                    raise ParameterError(
                        f"missing position ({j}, {k}) of sample {i} outside {d}x{t}"
                    )

    def is_empty(self) -> bool:
        return all(len(p) == 0 for p in self.positions)


@dataclass(frozen=True)
class BinaryMask:
    """1 = observed/kept, 0 = masked, shaped like one (D, T) sample."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=bool)
        if b.ndim != 2:
            raise ShapeError(f"mask must be (D, T), got {b.shape}")
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)


@dataclass(frozen=True)
class NormalizationStats:
    mode: str
    shift: np.ndarray  # per-channel offset subtracted before scaling
    scale: np.ndarray  # per-channel divisor; 0 marks a degenerate channel

    def apply(self, values: np.ndarray) -> np.ndarray:
        shift = self.shift[None, :, None]
        scale = self.scale[None, :, None]
        safe = np.where(scale == 0.0, 1.0, scale)
        out = (values - shift) / safe
        return np.where(scale == 0.0, 0.0, out)

    def invert(self, values: np.ndarray) -> np.ndarray:
        shift = self.shift[None, :, None]
        scale = self.scale[None, :, None]
        return values * scale + shift


# ---------------------------------------------------------------------------
# operations


def normalize(ds: TimeSeriesDataset, mode: str = "zscore_per_channel"):
    """Per-channel normalization over all samples and timesteps.

    Returns the transformed dataset and stats sufficient to invert it.
    Channels with variance below 1e-12 (or zero range for minmax) map to
    zeros instead of erroring, so constant sensors do not abort pipelines.
    """
    if mode not in NORMALIZATION_MODES:
        raise ParameterError(f"unknown normalization mode {mode!r}")
    v = ds.values
    if mode == "none":
        stats = NormalizationStats("none", np.zeros(ds.d), np.ones(ds.d))
        return ds, stats
    if mode == "zscore_per_channel":
        mean = v.mean(axis=(0, 2))
        var = v.var(axis=(0, 2))
        scale = np.where(var < DEGENERATE_VARIANCE, 0.0, np.sqrt(var))
        stats = NormalizationStats(mode, mean, scale)
    else:
        lo = v.min(axis=(0, 2))
        hi = v.max(axis=(0, 2))
        rng_ = hi - lo
        scale = np.where(rng_ < DEGENERATE_VARIANCE, 0.0, rng_)
        stats = NormalizationStats(mode, lo, scale)
    return ds.with_values(stats.apply(v)), stats


def denormalize(ds: TimeSeriesDataset, stats: NormalizationStats) -> TimeSeriesDataset:
    return ds.with_values(stats.invert(ds.values))


def apply_mask(x: np.ndarray, m: BinaryMask) -> np.ndarray:
    """Element-wise multiplication of a sample by a binary mask."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != m.bits.shape:
        raise ShapeError(f"sample {x.shape} vs mask {m.bits.shape}")
    return x * m.bits


def sample_binary_mask(shape: tuple[int, int], masking_rate: float,
                       rng: np.random.Generator, geometry: str = "iid") -> BinaryMask:
    """Random mask with an expected masked fraction of ``masking_rate``.

    ``contiguous_spans`` draws masked runs with geometric length (mean 5
    timesteps) per channel, which matches how real gaps and the masked
    autoregression template behave; ``iid`` masks cells independently.
    """
    if not 0.0 <= masking_rate <= 1.0:
        raise ParameterError(f"masking_rate must be in [0, 1], got {masking_rate}")
    if geometry not in MASK_GEOMETRIES:
        raise ParameterError(f"unknown mask geometry {geometry!r}")
    d, t = shape
    if masking_rate == 0.0:
        return BinaryMask(np.ones(shape, dtype=bool))
    if masking_rate == 1.0:
        return BinaryMask(np.zeros(shape, dtype=bool))
    if geometry == "iid":
        return BinaryMask(rng.random(shape) >= masking_rate)
    p_leave_masked = 1.0 / MEAN_MASK_SPAN
    p_enter_masked = masking_rate / (MEAN_MASK_SPAN * (1.0 - masking_rate))
    p_enter_masked = min(p_enter_masked, 1.0)
    bits = np.ones(shape, dtype=bool)
    for j in range(d):
        masked = rng.random() < masking_rate
        for k in range(t):
            bits[j, k] = not masked
            if masked:
                if rng.random() < p_leave_masked:
                    masked = False
            elif rng.random() < p_enter_masked:
                masked = True
    return BinaryMask(bits)


def slice_windows(ds: TimeSeriesDataset, window: int, stride: int) -> TimeSeriesDataset:
    """Cut each sample into fixed-length windows (channel order preserved)."""
    if window < 2:
        raise ParameterError("window must be >= 2")
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    if window > ds.t:
        raise ParameterError(f"window {window} exceeds series length {ds.t}")
    starts = range(0, ds.t - window + 1, stride)
    chunks = []
    ids = []
    for i in range(ds.n):
        for s in starts:
            chunks.append(ds.values[i, :, s : s + window])
            ids.append(f"{ds.sample_ids[i]}@{s}")
    return TimeSeriesDataset(
        np.stack(chunks), tuple(ids), ds.channel_names, ds.sampling_meta
    )


def window_starts(t: int, window: int, stride: int) -> list[int]:
    return list(range(0, t - window + 1, stride))


# ---------------------------------------------------------------------------
# file formats


def save_uts(path, ds: TimeSeriesDataset, labels: LabelSet | None = None):
    """Write the bit-exact binary format (float32 little-endian payload)."""
    with open(path, "wb") as f:
        f.write(UTS_MAGIC)
        f.write(struct.pack("<III", ds.n, ds.d, ds.t))
        f.write(ds.values.astype("<f4").tobytes())
        if labels is not None:
            if labels.kind != "class":
                raise ParameterError("only class labels can be embedded in uts files")
            f.write(LABEL_MAGIC)
            f.write(struct.pack("<I", int(labels.num_classes)))
            f.write(labels.class_labels.astype("<u4").tobytes())


def _parse_uts(raw: bytes, path):
    if raw[:4] != UTS_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0 (expected {UTS_MAGIC!r})")
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header at byte {len(raw)}")
    n, d, t = struct.unpack("<III", raw[4:16])
    payload = n * d * t * 4
    if len(raw) < 16 + payload:
        raise ShapeError(
            f"{path}: payload holds {len(raw) - 16} bytes, header requires {payload}"
        )
    values = np.frombuffer(raw[16 : 16 + payload], dtype="<f4").astype(np.float64)
    if not np.all(np.isfinite(values)):
        bad = int(np.nonzero(~np.isfinite(values))[0][0])
        i, rem = divmod(bad, d * t)
        j, k = divmod(rem, t)
        raise IngestionError(f"{path}: non-finite value at sample {i}, channel {j}, timestep {k}")
    values = values.reshape(n, d, t)
    rest = raw[16 + payload :]
    labels = None
    if rest:
        if rest[:4] != LABEL_MAGIC:
            raise FormatError(f"{path}: unexpected trailing bytes at offset {16 + payload}")
        if len(rest) < 8 + 4 * n:
            raise ShapeError(f"{path}: label block holds {len(rest) - 8} bytes, needs {4 * n}")
        c = struct.unpack("<I", rest[4:8])[0]
        lab = np.frombuffer(rest[8 : 8 + 4 * n], dtype="<u4").astype(int)
        labels = LabelSet("class", class_labels=lab, num_classes=int(c))
        if len(rest) > 8 + 4 * n:
            raise FormatError(f"{path}: trailing bytes after label block")
    ds = TimeSeriesDataset(values)
    return ds, labels, MissingIndex.from_lists([[] for _ in range(n)])


def _parse_csv_wide(text: str, path):
    lines = text.splitlines()
    if not lines or not lines[0].startswith(CSV_HEADER_PREFIX):
        raise FormatError(f"{path}: line 1 must start with {CSV_HEADER_PREFIX!r}")
    try:
        d = int(lines[0][len(CSV_HEADER_PREFIX) :])
    except ValueError:
        raise FormatError(f"{path}: line 1 declares a non-integer channel count") from None
    if d < 1:
        raise FormatError(f"{path}: line 1 declares D={d}")
    rows = []
    missing_cells = []
    t = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if t is None:
            t = len(cells)
        elif len(cells) != t:
            raise ShapeError(f"{path}: line {lineno} has {len(cells)} cells, expected {t}")
        row = np.zeros(t)
        for k, cell in enumerate(cells):
            cell = cell.strip()
            if cell == "":
                missing_cells.append((len(rows), k))
                continue
            try:
                val = float(cell)
            except ValueError:
                raise IngestionError(f"{path}: line {lineno}, column {k + 1}: {cell!r}") from None
            if not np.isfinite(val):
                raise IngestionError(
                    f"{path}: line {lineno}, column {k + 1}: non-finite value"
                )
            row[k] = val
        rows.append(row)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    if len(rows) % d != 0:
        raise ShapeError(f"{path}: {len(rows)} rows is not a multiple of D={d}")
    n = len(rows) // d
    values = np.stack(rows).reshape(n, d, t)
    positions = [[] for _ in range(n)]
    for row_idx, k in missing_cells:
        positions[row_idx // d].append((row_idx % d, k))
    return TimeSeriesDataset(values), None, MissingIndex.from_lists(positions)


def load_dataset_full(path, format: str):
    """Parse a dataset file; returns (dataset, labels-or-None, missing index)."""
    if format == "uts_binary":
        with open(path, "rb") as f:
            return _parse_uts(f.read(), path)
    if format == "csv_wide":
        with open(path, "r", encoding="utf-8") as f:
            return _parse_csv_wide(f.read(), path)
    raise ParameterError(f"unknown format {format!r}")


def load_dataset(path, format: str) -> TimeSeriesDataset:
    return load_dataset_full(path, format)[0]


def load_labels(path, format: str = "uts_binary") -> LabelSet | None:
    return load_dataset_full(path, format)[1]


def load_missing_index(path, format: str) -> MissingIndex:
    return load_dataset_full(path, format)[2]


def zero_fill(ds: TimeSeriesDataset, missing: MissingIndex) -> TimeSeriesDataset:
    """Replace missing positions with 0 ahead of model input."""
    if len(missing.positions) != ds.n:
        raise ParameterError(
            f"missing index covers {len(missing.positions)} samples, dataset has {ds.n}"
        )
    missing.validate(ds.d, ds.t)
    v = ds.values.copy()
    for i, pos in enumerate(missing.positions):
        for j, k in pos:
            v[i, j, k] = 0.0
    return ds.with_values(v)
