"""Datasets: IDX binary loading/writing, synthetic geometry, and subsampling.

All datasets are immutable value objects carrying their value range, so the
boundary search and example generation always know the legal input cube.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

SYNTHETIC_KINDS = ("gaussian-blobs", "concentric-rings")


def _readonly(a):
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LabeledDataset:
    """Fixed-dimension real samples with integer class labels.

    ``value_range`` declares the legal per-component interval (for byte
    images, (0, 1) after scaling). ``image_shape`` is kept when the data
    came from (or should serialize as) a rows x cols byte image grid.
    """

    samples: np.ndarray  # (n, D)
    labels: np.ndarray   # (n,)
    num_classes: int
    value_range: tuple[float, float]
    name: str = ""
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "samples", _readonly(samples))
        object.__setattr__(self, "labels", _readonly(labels))
        if samples.ndim != 2:
            raise ValueError("samples must be a 2-D array")
        if labels.ndim != 1 or labels.shape[0] != samples.shape[0]:
            raise ValueError("labels must be 1-D with one entry per sample")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError("labels must lie in [0, num_classes)")
        lo, hi = self.value_range
        if not lo < hi:
            raise ValueError("value_range must satisfy lo < hi")
        if samples.size and (samples.min() < lo - 1e-12 or samples.max() > hi + 1e-12):
            raise ValueError("sample components must lie within value_range")
        if self.image_shape is not None:
            rows, cols = self.image_shape
            if rows * cols != samples.shape[1]:
                raise ValueError("image_shape does not match sample dimension")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def dimension(self):
        return self.samples.shape[1]


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a deterministic synthetic dataset with known geometry."""

    kind: str
    dimension: int
    num_classes: int
    points_per_class: int
    noise_sigma: float = 0.0
    centers: np.ndarray | None = None   # gaussian-blobs: (c, D) class centers
    radii: np.ndarray | None = None     # concentric-rings: (c,) ring radii
    value_range: tuple[float, float] = (-4.0, 4.0)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        if self.points_per_class < 1:
            raise ValueError("points_per_class must be at least 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.dimension < 1 or self.num_classes < 1:
            raise ValueError("dimension and num_classes must be positive")
        if self.kind == "concentric-rings" and self.dimension < 2:
            raise ValueError("concentric-rings needs dimension >= 2")


def _default_centers(c, dim, scale=2.0):
    """Axis-aligned centers: class i sits at ±scale along axis i mod dim."""
    centers = np.zeros((c, dim))
    for i in range(c):
        axis = i % dim
        sign = 1.0 if (i // dim) % 2 == 0 else -1.0
        centers[i, axis] = sign * scale * (1.0 + i // (2 * dim))
    return centers


def make_synthetic(spec):
    """Generate a deterministic synthetic dataset from a spec."""
    rng = np.random.default_rng(spec.seed)
    c, dim, per = spec.num_classes, spec.dimension, spec.points_per_class
    blocks, labels = [], []
    if spec.kind == "gaussian-blobs":
        centers = spec.centers
        if centers is None:
            centers = _default_centers(c, dim)
        centers = np.asarray(centers, dtype=np.float64)
        if centers.shape != (c, dim):
            raise ValueError("centers must have shape (num_classes, dimension)")
        for i in range(c):
            pts = centers[i] + spec.noise_sigma * rng.standard_normal((per, dim))
            blocks.append(pts)
            labels.append(np.full(per, i))
    else:  # concentric-rings
        radii = spec.radii
        if radii is None:
            radii = 1.0 + np.arange(c, dtype=np.float64)
        radii = np.asarray(radii, dtype=np.float64)
        if radii.shape != (c,):
            raise ValueError("radii must have one entry per class")
        for i in range(c):
            angles = rng.uniform(0.0, 2.0 * np.pi, size=per)
            pts = np.zeros((per, dim))
            pts[:, 0] = radii[i] * np.cos(angles)
            pts[:, 1] = radii[i] * np.sin(angles)
            pts += spec.noise_sigma * rng.standard_normal((per, dim))
            blocks.append(pts)
            labels.append(np.full(per, i))
    samples = np.clip(np.vstack(blocks), spec.value_range[0], spec.value_range[1])
    return LabeledDataset(samples=samples, labels=np.concatenate(labels),
                          num_classes=c, value_range=spec.value_range,
                          name=f"synthetic-{spec.kind}")


def subsample(data, n, seed):
    """Uniform draw of ``n`` samples without replacement.

    Returns ``(subset, indices)`` where ``indices`` are positions in the
    original dataset. The draw is the first ``n`` entries of one seeded
    shuffle, so for a fixed seed the n-sample set is always a subset of
    the (n+1)-sample set.
    """
    if not 1 <= n <= len(data):
        raise ValueError(f"n must be in [1, {len(data)}], got {n}")
    rng = np.random.default_rng(seed)
    indices = rng.permutation(len(data))[:n]
    subset = LabeledDataset(samples=data.samples[indices],
                            labels=data.labels[indices],
                            num_classes=data.num_classes,
                            value_range=data.value_range,
                            name=data.name,
                            image_shape=data.image_shape)
    return subset, indices


def split(data, n_test, seed):
    """Seeded shuffle split into (train, test) datasets."""
    if not 0 < n_test < len(data):
        raise ValueError("n_test must leave at least one training sample")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(data))
    test_idx, train_idx = order[:n_test], order[n_test:]
    def pick(idx, suffix):
        return LabeledDataset(samples=data.samples[idx], labels=data.labels[idx],
                              num_classes=data.num_classes,
                              value_range=data.value_range,
                              name=f"{data.name}{suffix}",
                              image_shape=data.image_shape)
    return pick(train_idx, "-train"), pick(test_idx, "-test")


# ---------------------------------------------------------------------------
# IDX binary format: big-endian; images = magic 0x00000803, u32 count/rows/
# cols, then row-major unsigned bytes; labels = magic 0x00000801, u32 count,
# then label bytes. Pixels scale to [0, 1] by division by 255 on load.
# ---------------------------------------------------------------------------

def load_idx(images_path, labels_path, name=""):
    """Load an images/labels IDX file pair as a dataset scaled to [0, 1]."""
    with open(images_path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise ValueError(f"truncated image header in {images_path}")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IMAGES_MAGIC:
            raise ValueError(f"bad image magic 0x{magic:08x} in {images_path}")
        raw = fh.read(count * rows * cols + 1)
    if len(raw) < count * rows * cols:
        raise ValueError(f"truncated image data in {images_path}")
    if len(raw) > count * rows * cols:
        raise ValueError(f"trailing bytes after image data in {images_path}")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows * cols)

    with open(labels_path, "rb") as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise ValueError(f"truncated label header in {labels_path}")
        magic, label_count = struct.unpack(">II", header)
        if magic != LABELS_MAGIC:
            raise ValueError(f"bad label magic 0x{magic:08x} in {labels_path}")
        raw_labels = fh.read(label_count + 1)
    if len(raw_labels) < label_count:
        raise ValueError(f"truncated label data in {labels_path}")
    if len(raw_labels) > label_count:
        raise ValueError(f"trailing bytes after label data in {labels_path}")
    if label_count != count:
        raise ValueError(
            f"image count {count} does not match label count {label_count}"
        )
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    num_classes = int(labels.max()) + 1 if count else 1
    return LabeledDataset(samples=pixels.astype(np.float64) / 255.0,
                          labels=labels, num_classes=num_classes,
                          value_range=(0.0, 1.0), name=name,
                          image_shape=(rows, cols))


def write_idx(data, images_path, labels_path):
    """Serialize a dataset back to an IDX file pair.

    Components are mapped to bytes via round(x * 255); a dataset loaded by
    :func:`load_idx` therefore re-serializes byte-identically.
    """
    lo, hi = data.value_range
    if lo < 0.0 or hi > 1.0:
        raise ValueError("IDX serialization requires value_range within [0, 1]")
    shape = data.image_shape if data.image_shape is not None else (1, data.dimension)
    rows, cols = shape
    pixels = np.rint(data.samples * 255.0).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGES_MAGIC, len(data), rows, cols))
        fh.write(pixels.tobytes(order="C"))
    if data.labels.size and data.labels.max() > 255:
        raise ValueError("IDX labels must fit in one byte")
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, len(data)))
        fh.write(data.labels.astype(np.uint8).tobytes(order="C"))
