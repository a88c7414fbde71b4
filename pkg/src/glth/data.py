"""Datasets: CIFAR-10 binary batches, synthetic Gaussian blobs, batching."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Dataset",
    "CifarFormatError",
    "RECORD_BYTES",
    "read_cifar_batch",
    "write_cifar_batch",
    "load_cifar10",
    "synthetic_blobs",
    "signal_coordinates",
    "batches",
]

RECORD_BYTES = 3073
CIFAR_SHAPE = (32, 32, 3)
RECORDS_PER_BATCH = 10_000
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILE = "test_batch.bin"


@dataclass
class Dataset:
    images: np.ndarray  # (N, height, width, channels) float32
    labels: np.ndarray  # (N,) int64
    split: str = "train"
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, H, W, C), got {self.images.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images and labels disagree on N")

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def input_shape(self):
        return tuple(self.images.shape[1:])


class CifarFormatError(ValueError):
    """Malformed CIFAR-10 binary file."""


def read_cifar_batch(path, expected_records=RECORDS_PER_BATCH):
    """Parse one binary batch into raw ``(labels uint8, pixels uint8 (N, 3072))``.

    Pixel bytes are kept in file order: 1024 R, 1024 G, 1024 B, row-major.
    """
    path = Path(path)
    if not path.is_file():
        raise CifarFormatError(f"{path}: missing file")
    raw = np.fromfile(path, dtype=np.uint8)
    if expected_records is not None and raw.size != expected_records * RECORD_BYTES:
        raise CifarFormatError(
            f"{path}: size {raw.size} bytes, expected {expected_records * RECORD_BYTES}"
        )
    if raw.size % RECORD_BYTES:
        raise CifarFormatError(f"{path}: size {raw.size} is not a multiple of {RECORD_BYTES}")
    records = raw.reshape(-1, RECORD_BYTES)
    labels = records[:, 0]
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise CifarFormatError(
            f"{path}: label byte {int(labels[bad[0]])} > 9 at offset {int(bad[0]) * RECORD_BYTES}"
        )
    return labels.copy(), records[:, 1:].copy()


def write_cifar_batch(path, labels, pixels):
    records = np.concatenate([np.asarray(labels, np.uint8)[:, None], np.asarray(pixels, np.uint8)], axis=1)
    records.tofile(path)


def _to_hwc(pixels):
    return pixels.reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1).astype(np.float32) / 255.0


def _find_cifar_dir(root):
    root = Path(root)
    for cand in (root, root / "cifar-10-batches-bin"):
        if (cand / TEST_FILE).exists():
            return cand
    return root


def load_cifar10(root=None):
    """Load the CIFAR-10 binary version and standardize per channel.

    Pixels are scaled to [0, 1]; per-channel mean/std come from the training
    split and are applied to both splits. ``root`` defaults to ``$GLT_DATA_DIR``.
    """
    if root is None:
        root = os.environ.get("GLT_DATA_DIR")
        if root is None:
            raise CifarFormatError("no CIFAR-10 directory given and GLT_DATA_DIR is unset")
    root = _find_cifar_dir(root)
    parts = [read_cifar_batch(root / name) for name in TRAIN_FILES]
    train_x = _to_hwc(np.concatenate([p for _, p in parts]))
    train_y = np.concatenate([lab for lab, _ in parts])
    test_y, test_p = read_cifar_batch(root / TEST_FILE)
    test_x = _to_hwc(test_p)

    mean = train_x.mean(axis=(0, 1, 2), dtype=np.float64)
    std = train_x.std(axis=(0, 1, 2), dtype=np.float64)
    stats = {"mean": mean.tolist(), "std": std.tolist()}
    norm = lambda x: ((x - mean) / std).astype(np.float32)
    return (
        Dataset(norm(train_x), train_y, "train", stats),
        Dataset(norm(test_x), test_y, "test", stats),
    )


def signal_coordinates(input_shape, noise_dims):
    """Flat (channel-planar) indices that carry class signal in :func:`synthetic_blobs`."""
    dim = int(np.prod(input_shape))
    return np.arange(dim - noise_dims)


def synthetic_blobs(classes, per_class, input_shape, noise_dims=0, seed=0, separation=3.0, test_fraction=0.2):
    """Class-conditional Gaussian blobs with trailing pure-noise coordinates.

    Coordinates are counted in the flattened channel-planar order the
    networks use. The first ``dim - noise_dims`` carry the class means, placed
    so that every pair of means is at least ``separation`` apart (exactly
    ``separation`` when there are at least as many signal coordinates as
    classes). The rest are standard normal noise independent of the label.
    Every class has exactly ``per_class`` examples, split per class into
    train/test.
    """
    input_shape = tuple(int(s) for s in input_shape)
    if len(input_shape) != 3 or min(input_shape) < 1:
        raise ValueError(f"input_shape must be (height, width, channels), got {input_shape}")
    dim = int(np.prod(input_shape))
    if classes < 1 or per_class < 2:
        raise ValueError("need classes >= 1 and per_class >= 2")
    if not 0 <= noise_dims <= dim:
        raise ValueError(f"noise_dims must lie in [0, {dim}]")
    rng = np.random.default_rng(seed)
    n_signal = dim - noise_dims
    means = np.zeros((classes, dim))
    if n_signal >= classes:
        q, _ = np.linalg.qr(rng.standard_normal((n_signal, classes)))
        means[:, :n_signal] = separation / np.sqrt(2.0) * q.T
    elif n_signal:
        # too few signal coordinates for orthogonal means: evenly spaced on a random line
        line = rng.standard_normal(n_signal)
        line /= np.linalg.norm(line)
        pos = (rng.permutation(classes) - (classes - 1) / 2.0) * separation
        means[:, :n_signal] = pos[:, None] * line
    x = rng.standard_normal((classes, per_class, dim)) + means[:, None, :]
    y = np.repeat(np.arange(classes), per_class).reshape(classes, per_class)

    n_test = max(1, int(round(test_fraction * per_class)))
    n_test = min(n_test, per_class - 1)
    h, w, c = input_shape

    def pack(xs, ys, split):
        xs = xs.reshape(-1, c, h, w).transpose(0, 2, 3, 1)
        order = rng.permutation(ys.size)
        return Dataset(xs[order], ys.reshape(-1)[order], split)

    train = pack(x[:, n_test:], y[:, n_test:], "train")
    test = pack(x[:, :n_test], y[:, :n_test], "test")
    return train, test


def batches(ds, batch_size, epoch_seed, epoch=0):
    """Yield shuffled ``(inputs, labels)`` minibatches; the last may be partial."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng([int(epoch_seed), int(epoch)]).permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        idx = order[start : start + batch_size]
        yield ds.images[idx], ds.labels[idx]
