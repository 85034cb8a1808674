"""Dataset loading and client partitioning.

IDX files (the classic big-endian image/label format) are read from a
configured directory; there is no network download path, so runs are
reproducible offline. Synthetic Gaussian-cluster classification data
serves as a stand-in when no image files are available.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "IdxError",
    "BadMagicError",
    "TruncatedError",
    "CountMismatchError",
    "load_idx_images",
    "load_idx_labels",
    "load_idx",
    "write_idx_images",
    "write_idx_labels",
    "DATA_DIR_ENV",
    "mnist_file",
    "load_mnist",
    "ClientShard",
    "Partition",
    "partition_iid",
    "partition_label_sorted",
    "synth_classification",
]

MAGIC_IMAGES = 0x00000803
MAGIC_LABELS = 0x00000801

DATA_DIR_ENV = "FEDSMOOTH_DATA_DIR"


class IdxError(Exception):
    """Malformed IDX file."""


class BadMagicError(IdxError):
    pass


class TruncatedError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


def _read_bytes(path: str) -> bytes:
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _unpack(buf: bytes, fmt: str, offset: int, path: str):
    size = struct.calcsize(fmt)
    if len(buf) < offset + size:
        raise TruncatedError(f"{path}: header cut short")
    return struct.unpack_from(fmt, buf, offset)


def load_idx_images(path: str) -> np.ndarray:
    """Raw uint8 images of shape (count, rows, cols)."""
    buf = _read_bytes(path)
    (magic,) = _unpack(buf, ">I", 0, path)
    if magic != MAGIC_IMAGES:
        raise BadMagicError(f"{path}: magic {magic:#010x}, expected {MAGIC_IMAGES:#010x}")
    count, rows, cols = _unpack(buf, ">III", 4, path)
    need = 16 + count * rows * cols
    if len(buf) < need:
        raise TruncatedError(f"{path}: payload {len(buf) - 16} bytes, need {need - 16}")
    data = np.frombuffer(buf, dtype=np.uint8, count=count * rows * cols, offset=16)
    return data.reshape(count, rows, cols).copy()


def load_idx_labels(path: str) -> np.ndarray:
    buf = _read_bytes(path)
    (magic,) = _unpack(buf, ">I", 0, path)
    if magic != MAGIC_LABELS:
        raise BadMagicError(f"{path}: magic {magic:#010x}, expected {MAGIC_LABELS:#010x}")
    (count,) = _unpack(buf, ">I", 4, path)
    if len(buf) < 8 + count:
        raise TruncatedError(f"{path}: payload {len(buf) - 8} bytes, need {count}")
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=8).astype(np.int64)


def load_idx(images_path: str, labels_path: str) -> tuple[np.ndarray, np.ndarray]:
    """Paired images/labels as (float64 [n, rows*cols] in [0,1], int64 [n])."""
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images.shape[0]} images vs {labels.shape[0]} labels"
        )
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return X, labels


def write_idx_images(path: str, images: np.ndarray) -> None:
    images = np.ascontiguousarray(images, dtype=np.uint8)
    assert images.ndim == 3
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", MAGIC_IMAGES, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path: str, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    assert labels.ndim == 1
    assert np.all((labels >= 0) & (labels <= 255))
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", MAGIC_LABELS, labels.shape[0]))
        fh.write(labels.astype(np.uint8).tobytes())


_MNIST_NAMES = {
    ("train", "images"): "train-images-idx3-ubyte",
    ("train", "labels"): "train-labels-idx1-ubyte",
    ("test", "images"): "t10k-images-idx3-ubyte",
    ("test", "labels"): "t10k-labels-idx1-ubyte",
}


def mnist_file(root: str, split: str, kind: str) -> str:
    """Path to an MNIST IDX file under `root`, accepting .gz variants."""
    base = os.path.join(root, _MNIST_NAMES[(split, kind)])
    for cand in (base, base + ".gz"):
        if os.path.exists(cand):
            return cand
    raise FileNotFoundError(f"missing {base}[.gz]")


def load_mnist(root: str | None = None):
    """(train_X, train_y, test_X, test_y) from IDX files under `root`.

    `root` defaults to the FEDSMOOTH_DATA_DIR environment variable.
    """
    root = root or os.environ.get(DATA_DIR_ENV)
    if not root:
        raise FileNotFoundError(
            f"no dataset root: pass one or set {DATA_DIR_ENV}"
        )
    train = load_idx(mnist_file(root, "train", "images"), mnist_file(root, "train", "labels"))
    test = load_idx(mnist_file(root, "test", "images"), mnist_file(root, "test", "labels"))
    return train[0], train[1], test[0], test[1]


@dataclass(frozen=True)
class ClientShard:
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class Partition:
    """Client shards plus the leftover samples held out for validation."""

    shards: tuple[ClientShard, ...]
    holdout_features: np.ndarray
    holdout_labels: np.ndarray
    scheme: str
    seed: int


def _chunk(
    X: np.ndarray,
    y: np.ndarray,
    order: np.ndarray,
    n_clients: int,
    per_client: int,
    scheme: str,
    seed: int,
) -> Partition:
    used = n_clients * per_client
    assert used <= len(y), "not enough samples for the requested partition"
    shards = []
    for j in range(n_clients):
        idx = order[j * per_client : (j + 1) * per_client]
        shards.append(ClientShard(features=X[idx], labels=y[idx]))
    rest = order[used:]
    return Partition(
        shards=tuple(shards),
        holdout_features=X[rest],
        holdout_labels=y[rest],
        scheme=scheme,
        seed=seed,
    )


def partition_iid(
    X: np.ndarray, y: np.ndarray, n_clients: int, per_client: int, seed: int
) -> Partition:
    """Random permutation, contiguous equal chunks, leftover to holdout."""
    order = np.random.default_rng(seed).permutation(len(y))
    return _chunk(X, y, order, n_clients, per_client, "iid", seed)


def partition_label_sorted(
    X: np.ndarray, y: np.ndarray, n_clients: int, per_client: int, seed: int
) -> Partition:
    """Label-sorted contiguous chunks: each client sees few classes."""
    rng = np.random.default_rng(seed)
    tie_break = rng.permutation(len(y))
    order = np.lexsort((tie_break, y))
    return _chunk(X, y, order, n_clients, per_client, "label_sorted", seed)


def synth_classification(
    n: int, dim: int, n_classes: int, separation: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Unit-variance Gaussian clusters around class means of norm `separation`.

    separation = 0 collapses every class onto the same cloud (chance-level
    is the best any classifier can do); separation >> 1 is near-separable.
    """
    assert n >= 1 and dim >= 1 and n_classes >= 2
    assert separation >= 0.0
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(n_classes, dim))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    y = rng.integers(0, n_classes, size=n)
    X = means[y] + rng.normal(size=(n, dim))
    return X, y
