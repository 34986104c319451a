"""MNIST IDX parsing, noisy XOR generation and seeded minibatch iteration."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import FormatError, TruncatedError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

XOR_CORNERS = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels outside [0, {self.n_classes})")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, index) -> "Dataset":
        return Dataset(self.features[index], self.labels[index], self.n_classes)


def _read_header(buf: bytes, magic: int, ndims: int, path) -> tuple[int, ...]:
    if len(buf) < 4:
        raise TruncatedError(f"{path}: file too short for an IDX magic number")
    got = struct.unpack_from(">I", buf, 0)[0]
    if got != magic:
        raise FormatError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    need = 4 * (1 + ndims)
    if len(buf) < need:
        raise TruncatedError(f"{path}: header needs {need} bytes, file has {len(buf)}")
    return struct.unpack_from(f">{ndims}I", buf, 4)


def parse_idx_images(buf: bytes, path="<bytes>") -> np.ndarray:
    n, rows, cols = _read_header(buf, IMAGE_MAGIC, 3, path)
    size = n * rows * cols
    body = buf[16:]
    if len(body) < size:
        raise TruncatedError(f"{path}: expected {size} pixel bytes, found {len(body)}")
    pixels = np.frombuffer(body, dtype=np.uint8, count=size)
    return pixels.reshape(n, rows * cols).astype(np.float64) / 255.0


def parse_idx_labels(buf: bytes, path="<bytes>") -> np.ndarray:
    (n,) = _read_header(buf, LABEL_MAGIC, 1, path)
    body = buf[8:]
    if len(body) < n:
        raise TruncatedError(f"{path}: expected {n} label bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8, count=n).astype(np.int64)


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Read an uncompressed IDX image/label pair; pixels are scaled to [0, 1]."""
    with open(images_path, "rb") as f:
        features = parse_idx_images(f.read(), images_path)
    with open(labels_path, "rb") as f:
        labels = parse_idx_labels(f.read(), labels_path)
    if features.shape[0] != labels.shape[0]:
        raise FormatError(
            f"{images_path} has {features.shape[0]} images but {labels_path} has {labels.shape[0]} labels"
        )
    if labels.size and labels.max() >= 10:
        raise FormatError(f"{labels_path}: label {labels.max()} outside 0..9")
    return Dataset(features, labels, 10)


def load_mnist(data_dir, split: str = "train") -> Dataset:
    images, labels = MNIST_FILES[split]
    return load_mnist_idx(os.path.join(data_dir, images), os.path.join(data_dir, labels))


def gen_xor(n: int, noise_std: float, seed: int) -> Dataset:
    """Noisy XOR: corners taken round-robin, isotropic Gaussian jitter, label = XOR of the corner."""
    if n % 4:
        raise ValueError(f"n must be divisible by 4, got {n}")
    if noise_std < 0:
        raise ValueError(f"noise_std must be >= 0, got {noise_std}")
    rng = np.random.default_rng(seed)
    corner = np.arange(n) % 4
    centers = XOR_CORNERS[corner]
    features = centers + noise_std * rng.standard_normal((n, 2))
    labels = (centers[:, 0] != centers[:, 1]).astype(np.int64)
    return Dataset(features, labels, 2)


def xor_split(n: int = 20000, noise_std: float = 0.15, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Generate ``n`` XOR samples and split them in half, train then test."""
    ds = gen_xor(n, noise_std, seed)
    # rows cycle through the corners, so a contiguous split keeps classes balanced
    half = n // 2
    return ds.subset(slice(0, half)), ds.subset(slice(half, n))


def minibatches(ds: Dataset, batch_size: int, seed: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Endless stream of minibatches; each epoch is a fresh seeded permutation.

    The last batch of an epoch is short when ``batch_size`` does not divide
    the dataset size.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(ds)
    if n == 0:
        raise ValueError("cannot draw minibatches from an empty dataset")
    rng = np.random.default_rng(seed)
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            yield ds.features[idx], ds.labels[idx]
