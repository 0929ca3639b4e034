"""Dataset readers (CIFAR-10 binary batches, IDX) and a synthetic image generator."""

from __future__ import annotations

import gzip
import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InputError

CIFAR_RECORD = 1 + 3 * 32 * 32
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CIFAR_MEAN, CIFAR_STD = (0.5, 0.5, 0.5), (0.5, 0.5, 0.5)
FMNIST_MEAN, FMNIST_STD = (0.2860,), (0.3530,)


@dataclass
class Dataset:
    images: np.ndarray  # (n, C, H, W) float64
    labels: np.ndarray  # (n,) int64
    n_classes: int

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.n_classes)

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.images).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()


def _open(path):
    path = os.fspath(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def read_cifar_batch(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse a CIFAR-10 binary batch: records of one label byte + 3072 CHW pixel bytes."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) % CIFAR_RECORD:
        raise InputError(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    return rec[:, 1:].reshape(-1, 3, 32, 32).copy(), rec[:, 0].astype(np.int64)


def read_idx(path) -> np.ndarray:
    """Parse an unsigned-byte IDX file (big-endian header) into an array."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise InputError(f"{path}: bad IDX magic")
    dtype_code, ndim = raw[2], raw[3]
    if dtype_code != 0x08:
        raise InputError(f"{path}: only unsigned-byte IDX data is supported (code {dtype_code:#x})")
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    body = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim)
    if body.size != int(np.prod(dims)):
        raise InputError(f"{path}: header promises {dims} but payload has {body.size} bytes")
    return body.reshape(dims).copy()


def read_idx_pair(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    with _open(images_path) as f:
        magic = struct.unpack(">I", f.read(4))[0]
    if magic != IDX_IMAGES_MAGIC:
        raise InputError(f"{images_path}: magic {magic:#010x} is not an IDX image file")
    with _open(labels_path) as f:
        magic = struct.unpack(">I", f.read(4))[0]
    if magic != IDX_LABELS_MAGIC:
        raise InputError(f"{labels_path}: magic {magic:#010x} is not an IDX label file")
    images = read_idx(images_path)
    labels = read_idx(labels_path).astype(np.int64)
    if len(images) != len(labels):
        raise InputError(f"{len(images)} images but {len(labels)} labels")
    return images[:, None], labels


def normalize(images: np.ndarray, mean, std) -> np.ndarray:
    x = images.astype(np.float64) / 255.0
    m = np.asarray(mean, dtype=np.float64)[None, :, None, None]
    s = np.asarray(std, dtype=np.float64)[None, :, None, None]
    return (x - m) / s


def pad_to(images: np.ndarray, size: int) -> np.ndarray:
    """Zero-pad square images symmetrically up to ``size``."""
    h = images.shape[-1]
    if h >= size:
        return images
    lo = (size - h) // 2
    hi = size - h - lo
    return np.pad(images, ((0, 0), (0, 0), (lo, hi), (lo, hi)))


def synthetic_blobs(n: int, n_classes: int, rng: np.random.Generator, image_size: int = 8,
                    channels: int = 1, noise: float = 0.3, blob_width: float = 1.5,
                    centers: np.ndarray | None = None) -> tuple[Dataset, np.ndarray]:
    """Images holding one Gaussian bump whose location identifies the class.

    Returns the dataset and the per-class blob centres so a matching test split
    can be generated with ``centers=``.
    """
    if n < 1 or n_classes < 2:
        raise ConfigurationError("synthetic data needs n >= 1 and at least two classes")
    if centers is None:
        centers = rng.uniform(0, image_size - 1, size=(n_classes, channels, 2))
    yy, xx = np.mgrid[0:image_size, 0:image_size]
    templates = np.exp(
        -((yy[None, None] - centers[..., 0, None, None]) ** 2 + (xx[None, None] - centers[..., 1, None, None]) ** 2)
        / (2 * blob_width**2)
    )  # (classes, C, H, W)
    labels = np.arange(n) % n_classes
    rng.shuffle(labels)
    images = templates[labels] + noise * rng.standard_normal((n, channels, image_size, image_size))
    return Dataset(images, labels.astype(np.int64), n_classes), centers


def synthetic_split(n_train: int, n_test: int, n_classes: int, rng: np.random.Generator,
                    image_size: int = 8, channels: int = 1, noise: float = 0.3) -> tuple[Dataset, Dataset]:
    train, centers = synthetic_blobs(n_train, n_classes, rng, image_size, channels, noise)
    test, _ = synthetic_blobs(n_test, n_classes, rng, image_size, channels, noise, centers=centers)
    return train, test


def _limit(ds: Dataset, n: int | None) -> Dataset:
    return ds if not n or n >= len(ds) else ds.subset(np.arange(n))


def load_cifar10(root, n_train: int | None = None, n_test: int | None = None) -> tuple[Dataset, Dataset]:
    root = Path(root)
    batches = sorted(root.glob("data_batch_*"))
    if not batches:
        raise ConfigurationError(f"no CIFAR-10 data_batch_* files under {root}")
    parts = [read_cifar_batch(p) for p in batches]
    x = np.concatenate([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts])
    test_path = next(iter(sorted(root.glob("test_batch*"))), None)
    if test_path is None:
        raise ConfigurationError(f"no CIFAR-10 test_batch under {root}")
    tx, ty = read_cifar_batch(test_path)
    train = Dataset(normalize(x, CIFAR_MEAN, CIFAR_STD), y, 10)
    test = Dataset(normalize(tx, CIFAR_MEAN, CIFAR_STD), ty, 10)
    return _limit(train, n_train), _limit(test, n_test)


def load_fashion_mnist(root, n_train: int | None = None, n_test: int | None = None,
                       pad: int = 32) -> tuple[Dataset, Dataset]:
    """Fashion-MNIST from IDX files, normalized and zero-padded to ``pad`` pixels
    so three 2x2 pools divide the spatial size."""
    root = Path(root)

    def find(stem):
        for name in (stem, stem + ".gz"):
            if (root / name).exists():
                return root / name
        raise ConfigurationError(f"missing {stem} under {root}")

    out = []
    for prefix in ("train", "t10k"):
        x, y = read_idx_pair(find(f"{prefix}-images-idx3-ubyte"), find(f"{prefix}-labels-idx1-ubyte"))
        out.append(Dataset(pad_to(normalize(x, FMNIST_MEAN, FMNIST_STD), pad), y, 10))
    return _limit(out[0], n_train), _limit(out[1], n_test)
