"""Toy 2-D classification sets, seeded splits and an MNIST IDX reader."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, IDXFormatError

__all__ = [
    "LabeledDataset",
    "SplitSpec",
    "make_moons",
    "make_circles",
    "split_dataset",
    "load_mnist_idx",
    "write_idx",
    "load_mnist",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.shape[0] != self.labels.shape[0]:
            raise ConfigurationError("features and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ConfigurationError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.features[idx], self.labels[idx], self.class_count)

    def to_csv(self, path) -> None:
        """Write with header ``x0,x1,...,label``."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{j}" for j in range(self.features.shape[1])] + ["label"])
            for row, label in zip(self.features, self.labels):
                writer.writerow([repr(float(v)) for v in row] + [int(label)])


@dataclass(frozen=True)
class SplitSpec:
    train_n: int
    val_n: int
    test_n: int
    seed: int | None = None


def _halves(n):
    if n < 2:
        raise ConfigurationError(f"need n >= 2, got {n}")
    return (n + 1) // 2, n // 2


def make_moons(n: int = 10000, noise: float = 0.0, seed=None) -> LabeledDataset:
    """Two interleaving half circles.

    Moon 0: ``(cos t, sin t)``; moon 1: ``(1 - cos t, 0.5 - sin t)``, with
    ``t`` on an even grid over ``[0, pi]``. Gaussian noise of std `noise`
    is added to every coordinate.
    """
    n0, n1 = _halves(n)
    t0 = np.linspace(0.0, np.pi, n0)
    t1 = np.linspace(0.0, np.pi, n1)
    xy = np.vstack([
        np.column_stack([np.cos(t0), np.sin(t0)]),
        np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)]),
    ])
    labels = np.r_[np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)]
    if noise:
        xy = xy + np.random.default_rng(seed).normal(0.0, noise, size=xy.shape)
    return LabeledDataset(xy, labels, 2)


def make_circles(n: int = 10000, noise: float = 0.0, factor: float = 0.8, seed=None) -> LabeledDataset:
    """Outer unit circle (label 0) around an inner circle of radius `factor` (label 1)."""
    if not 0.0 < factor < 1.0:
        raise ConfigurationError(f"factor must lie in (0, 1), got {factor}")
    n0, n1 = _halves(n)
    t0 = np.linspace(0.0, 2 * np.pi, n0, endpoint=False)
    t1 = np.linspace(0.0, 2 * np.pi, n1, endpoint=False)
    xy = np.vstack([
        np.column_stack([np.cos(t0), np.sin(t0)]),
        factor * np.column_stack([np.cos(t1), np.sin(t1)]),
    ])
    labels = np.r_[np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)]
    if noise:
        xy = xy + np.random.default_rng(seed).normal(0.0, noise, size=xy.shape)
    return LabeledDataset(xy, labels, 2)


def split_dataset(ds: LabeledDataset, spec: SplitSpec):
    """Seeded random partition into ``(train, val, test)``."""
    sizes = (spec.train_n, spec.val_n, spec.test_n)
    if min(sizes) < 0:
        raise ConfigurationError(f"split sizes must be non-negative, got {sizes}")
    if sum(sizes) > len(ds):
        raise ConfigurationError(f"split sizes {sizes} exceed dataset size {len(ds)}")
    perm = np.random.default_rng(spec.seed).permutation(len(ds))
    a, b = spec.train_n, spec.train_n + spec.val_n
    return ds.subset(perm[:a]), ds.subset(perm[a:b]), ds.subset(perm[b:b + spec.test_n])


def _read_exact(fh, n, path):
    data = fh.read(n)
    if len(data) != n:
        raise OSError(f"{path}: truncated file, wanted {n} bytes, got {len(data)}")
    return data


def load_mnist_idx(images_path, labels_path) -> LabeledDataset:
    """Read an MNIST image/label IDX pair into a flat ``[0, 1]`` feature matrix.

    Raises
    ------
    IDXFormatError
        Wrong magic number or mismatched item counts.
    OSError
        Truncated payload.
    """
    with open(images_path, "rb") as fh:
        (magic,) = struct.unpack(">I", _read_exact(fh, 4, images_path))
        if magic != IMAGE_MAGIC:
            raise IDXFormatError(f"{images_path}: image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")
        n, rows, cols = struct.unpack(">III", _read_exact(fh, 12, images_path))
        pixels = np.frombuffer(_read_exact(fh, n * rows * cols, images_path), dtype=np.uint8)
    with open(labels_path, "rb") as fh:
        (magic,) = struct.unpack(">I", _read_exact(fh, 4, labels_path))
        if magic != LABEL_MAGIC:
            raise IDXFormatError(f"{labels_path}: label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")
        (n_labels,) = struct.unpack(">I", _read_exact(fh, 4, labels_path))
        labels = np.frombuffer(_read_exact(fh, n_labels, labels_path), dtype=np.uint8)
    if n != n_labels:
        raise IDXFormatError(f"{n} images but {n_labels} labels")
    if labels.size and labels.max() > 9:
        raise IDXFormatError("digit labels must lie in 0..9")
    features = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    return LabeledDataset(features, labels.astype(np.int64), 10)


def write_idx(path, array) -> None:
    """Write a uint8 array as IDX (magic 0x0801 for 1-D, 0x0803 for 3-D)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = {1: LABEL_MAGIC, 3: IMAGE_MAGIC}.get(array.ndim)
    if magic is None:
        raise ConfigurationError("only 1-D label and 3-D image arrays are supported")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I" + "I" * array.ndim, magic, *array.shape))
        fh.write(array.tobytes())


def load_mnist(directory, split="train") -> LabeledDataset:
    """Load ``train`` or ``t10k`` files from an MNIST directory.

    Accepts both ``train-images-idx3-ubyte`` and ``train-images.idx3-ubyte``
    naming.
    """
    directory = Path(directory)
    prefix = {"train": "train", "test": "t10k", "t10k": "t10k"}[split]
    for sep in ("-", "."):
        img = directory / f"{prefix}-images{sep}idx3-ubyte"
        lab = directory / f"{prefix}-labels{sep}idx1-ubyte"
        if img.exists() and lab.exists():
            return load_mnist_idx(img, lab)
    raise FileNotFoundError(f"no MNIST {prefix} files in {directory}")
