"""Datasets: synthetic domain-shift tasks, IDX ingestion, normalization.

Target domains are handed to adaptation code as ``UnlabeledDataset``, which
has no label field at all.  When a target is synthesized from labeled data,
the labels travel separately in an evaluation-only ``LabeledDataset``.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError
from .ndcore import FLOAT, one_hot

log = logging.getLogger(__name__)

IDX_LABELS_MAGIC = 0x00000801
IDX_IMAGES_MAGIC = 0x00000803


@dataclass
class LabeledDataset:
    features: np.ndarray  # (n, d)
    labels: np.ndarray  # (n, k) one-hot
    name: str = "source"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=FLOAT)
        self.labels = np.asarray(self.labels, dtype=FLOAT)
        if self.features.ndim != 2 or self.labels.ndim != 2:
            raise DimensionError("features and labels must be 2-D")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DimensionError(f"{self.features.shape[0]} feature rows vs {self.labels.shape[0]} label rows")
        hot = (self.labels == 1.0).sum(axis=1)
        if not (np.all(hot == 1) and np.all((self.labels == 0.0) | (self.labels == 1.0))):
            raise ValueError("labels must be one-hot rows")
        missing = np.flatnonzero(self.labels.sum(axis=0) == 0)
        if missing.size:
            raise ValueError(f"classes {missing.tolist()} have no samples")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def k(self) -> int:
        return self.labels.shape[1]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def classes(self) -> np.ndarray:
        return np.argmax(self.labels, axis=1)

    def unlabeled(self, name: str | None = None) -> "UnlabeledDataset":
        return UnlabeledDataset(self.features.copy(), name or self.name)


@dataclass
class UnlabeledDataset:
    features: np.ndarray
    name: str = "target"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=FLOAT)
        if self.features.ndim != 2:
            raise DimensionError("features must be 2-D")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class DomainShiftSpec:
    rotation: float = 0.0  # radians, 2-D only
    translation: tuple[float, ...] | None = None
    scale: tuple[float, ...] | float = 1.0
    noise_std: float = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.scale, dtype=FLOAT) <= 0):
            raise ValueError("scale factors must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


def _shuffled(x: np.ndarray, cls: np.ndarray, k: int, rng, name: str) -> LabeledDataset:
    order = rng.permutation(x.shape[0])
    return LabeledDataset(x[order], one_hot(cls[order], k), name)


def gen_two_moons(n: int, noise_std: float, rng: np.random.Generator, name: str = "two-moons") -> LabeledDataset:
    """Two interleaved half circles, ``n // 2`` points each.

    Class 0 lies on the upper unit half circle, class 1 on the lower half
    circle centred at (1, 0.5).  Angles are uniform on [0, pi].
    """
    if n < 4 or n % 2:
        raise ValueError(f"two-moons needs an even n >= 4, got {n}")
    half = n // 2
    t0 = rng.uniform(0.0, np.pi, half)
    t1 = rng.uniform(0.0, np.pi, half)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    x = np.vstack([upper, lower])
    if noise_std > 0:
        x = x + noise_std * rng.standard_normal(x.shape)
    cls = np.repeat([0, 1], half)
    return _shuffled(x, cls, 2, rng, name)


def gen_blobs(k: int, n_per_class: int, centers, cov_scale: float, rng: np.random.Generator, name: str = "blobs") -> LabeledDataset:
    """Isotropic Gaussian cluster of ``n_per_class`` points around each center."""
    centers = np.asarray(centers, dtype=FLOAT)
    if k < 2 or centers.shape[0] != k:
        raise ValueError(f"need k >= 2 and one center per class, got k={k} with {centers.shape[0]} centers")
    for i in range(k):
        for j in range(i):
            if np.array_equal(centers[i], centers[j]):
                raise ValueError(f"centers {j} and {i} coincide")
    if cov_scale < 0:
        raise ValueError("cov_scale must be non-negative")
    x = np.repeat(centers, n_per_class, axis=0)
    if cov_scale > 0:
        x = x + np.sqrt(cov_scale) * rng.standard_normal(x.shape)
    cls = np.repeat(np.arange(k), n_per_class)
    return _shuffled(x, cls, k, rng, name)


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def apply_shift(dataset: LabeledDataset, spec: DomainShiftSpec, rng: np.random.Generator | None = None,
                name: str = "target") -> tuple[UnlabeledDataset, LabeledDataset]:
    """Map ``x -> scale * (R x) + translation + noise``.

    Returns the unlabeled view for adaptation and a labeled view reserved for
    evaluation.
    """
    x = dataset.features
    if spec.rotation != 0.0:
        if dataset.dim != 2:
            raise DimensionError(f"rotation is defined for 2-D data only, got d={dataset.dim}")
        x = x @ rotation_matrix(spec.rotation).T
    x = x * np.asarray(spec.scale, dtype=FLOAT)
    if spec.translation is not None:
        x = x + np.asarray(spec.translation, dtype=FLOAT)
    if spec.noise_std > 0:
        if rng is None:
            raise ValueError("noise requires an rng")
        x = x + spec.noise_std * rng.standard_normal(x.shape)
    x = np.array(x, dtype=FLOAT)
    return UnlabeledDataset(x, name), LabeledDataset(x.copy(), dataset.labels.copy(), name)


# --- IDX files ---------------------------------------------------------------
#   offset 0: magic (4 bytes big-endian): 0x00000801 labels, 0x00000803 images
#   offset 4: one 4-byte big-endian size per dimension
#   then unsigned-byte payload, row-major


def read_idx(path) -> np.ndarray:
    """Parse an unsigned-byte IDX file into a uint8 array of its declared shape."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short for an IDX header", len(raw))
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code != 0x08 or ndim == 0:
        raise FormatError(f"{path}: bad IDX magic 0x{raw[:4].hex()}", 0)
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated dimension header", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) < header + size:
        raise FormatError(f"{path}: payload truncated, expected {size} bytes", len(raw))
    if len(raw) > header + size:
        raise FormatError(f"{path}: {len(raw) - header - size} trailing bytes", header + size)
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def write_idx(path, array) -> None:
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise ValueError("only unsigned-byte IDX files are supported")
    head = struct.pack(">HBB", 0, 0x08, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(head + arr.tobytes(order="C"))


def load_idx(images_path, labels_path=None, n_classes: int | None = None, subsample: int | None = None,
             rng: np.random.Generator | None = None, name: str | None = None):
    """Load IDX images (pixel / 255, flattened row-major) with optional labels.

    Returns a LabeledDataset when ``labels_path`` is given, otherwise an
    UnlabeledDataset.  ``subsample`` keeps a seeded random subset in file order.
    """
    images = read_idx(images_path)
    if images.ndim < 2:
        raise FormatError(f"{images_path}: image file needs at least 2 dimensions, got {images.ndim}", 3)
    x = images.reshape(images.shape[0], -1).astype(FLOAT) / 255.0
    y = None
    if labels_path is not None:
        y = read_idx(labels_path)
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise FormatError(f"{labels_path}: expected {x.shape[0]} labels, got shape {y.shape}", 4)
    if subsample is not None and subsample < x.shape[0]:
        if rng is None:
            raise ValueError("subsample requires an rng")
        keep = np.sort(rng.choice(x.shape[0], size=subsample, replace=False))
        x = x[keep]
        y = None if y is None else y[keep]
    name = name or Path(images_path).name
    if y is None:
        return UnlabeledDataset(x, name)
    k = n_classes or int(y.max()) + 1
    return LabeledDataset(x, one_hot(y, k), name)


# --- normalization -----------------------------------------------------------


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    warnings: list[str] = field(default_factory=list)


def normalize(dataset, stats: NormStats | None = None):
    """Standardize features per column; returns ``(dataset, stats)``.

    Without ``stats`` they are computed from ``dataset`` (use the source
    domain); pass the returned stats to normalize the target the same way.
    Zero-variance columns get std 1 and a recorded warning.
    """
    x = dataset.features
    if stats is None:
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        warnings = []
        for j in np.flatnonzero(std == 0.0):
            msg = f"feature {j} has zero variance; std clamped to 1"
            log.warning(msg)
            warnings.append(msg)
        std = np.where(std == 0.0, 1.0, std)
        stats = NormStats(mean, std, warnings)
    z = (x - stats.mean) / stats.std
    if isinstance(dataset, LabeledDataset):
        return LabeledDataset(z, dataset.labels.copy(), dataset.name), stats
    return UnlabeledDataset(z, dataset.name), stats


def export_csv(dataset, path) -> None:
    """Write ``f0..f{d-1},label`` rows (label empty for unlabeled data)."""
    x = dataset.features
    labels = dataset.classes if isinstance(dataset, LabeledDataset) else None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{j}" for j in range(x.shape[1])] + ["label"])
        for i in range(x.shape[0]):
            w.writerow([repr(float(v)) for v in x[i]] + ["" if labels is None else int(labels[i])])
