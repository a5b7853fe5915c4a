"""Task generators and dataset loading.

The regression task draws x ~ Normal(mean, variance) and sets y = slope * x
(the second Gaussian parameter is interpreted as a variance; this is
recorded in the task metadata). MNIST-style data is read from IDX files and
normalized by scaling pixels to [0, 1] then standardizing with the training
pixel mean/std.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import Batch


class IdxFormatError(ValueError):
    """IDX parse failure; messages carry byte offsets."""


@dataclass(frozen=True)
class RegressionTask:
    slope: float = -1.0
    input_mean: float = 1.0
    input_variance: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.input_variance < 0.0:
            raise ValueError("input_variance must be nonnegative")

    def metadata(self) -> dict:
        return {
            "slope": self.slope,
            "input_mean": self.input_mean,
            "input_variance": self.input_variance,
            "variance_convention": "second Gaussian parameter is a variance",
            "seed": self.seed,
        }


def sample_regression(task: RegressionTask, n: int, draw=0) -> Batch:
    """Draw n samples; pure function of (task, n, draw).

    `draw` may be an int or a tuple of ints keying independent streams.
    Training uses draws (seed, 1), (seed, 2), ... per batch; draw index 0
    is reserved for held-out evaluation sets.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    key = tuple(draw) if isinstance(draw, (tuple, list)) else (draw,)
    rng = np.random.default_rng(np.random.SeedSequence((task.seed,) + key))
    x = task.input_mean + np.sqrt(task.input_variance) * rng.standard_normal(n)
    y = task.slope * x
    return Batch(x.reshape(-1, 1), y.reshape(-1, 1))


@dataclass
class Dataset:
    train_inputs: np.ndarray
    train_targets: np.ndarray
    test_inputs: np.ndarray
    test_targets: np.ndarray
    normalization: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.train_inputs.shape[0] != self.train_targets.shape[0]:
            raise ValueError("train inputs/targets row counts differ")
        if self.test_inputs.shape[0] != self.test_targets.shape[0]:
            raise ValueError("test inputs/targets row counts differ")


def _read_exact(f, n: int, offset: int, path) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise IdxFormatError(
            f"{path}: file truncated, expected {n} bytes at offset {offset}, found {len(buf)}"
        )
    return buf


def parse_idx_images(path) -> np.ndarray:
    """Parse an IDX3 ubyte image file into a (N, rows*cols) uint8 array."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = struct.unpack(">I", _read_exact(f, 4, 0, path))[0]
        if magic != 2051:
            raise IdxFormatError(f"{path}: expected magic 2051 at byte 0, found {magic}")
        n, rows, cols = struct.unpack(">III", _read_exact(f, 12, 4, path))
        data = _read_exact(f, n * rows * cols, 16, path)
    return np.frombuffer(data, dtype=np.uint8).reshape(n, rows * cols)


def parse_idx_labels(path) -> np.ndarray:
    """Parse an IDX1 ubyte label file into a (N,) uint8 array."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = struct.unpack(">I", _read_exact(f, 4, 0, path))[0]
        if magic != 2049:
            raise IdxFormatError(f"{path}: expected magic 2049 at byte 0, found {magic}")
        n = struct.unpack(">I", _read_exact(f, 4, 4, path))[0]
        data = _read_exact(f, n, 8, path)
    return np.frombuffer(data, dtype=np.uint8)


def one_hot(labels: np.ndarray, n_classes: int = 10) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and labels.max() >= n_classes:
        raise ValueError(f"label {labels.max()} out of range for {n_classes} classes")
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def load_mnist(image_path, label_path, test_image_path=None, test_label_path=None) -> Dataset:
    """Load IDX image/label files into a normalized Dataset.

    Pixels are scaled to [0, 1] and standardized with the mean/std of the
    training pixels; labels become {0, 1} one-hot vectors. Optional test
    files are normalized with the training statistics.
    """
    images = parse_idx_images(image_path)
    labels = parse_idx_labels(label_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"count mismatch: {images.shape[0]} images in {image_path} vs "
            f"{labels.shape[0]} labels in {label_path}"
        )
    scaled = images.astype(float) / 255.0
    mean = float(scaled.mean())
    std = float(scaled.std())
    if std == 0.0:
        raise ValueError("degenerate image data: zero pixel variance")
    train_x = (scaled - mean) / std
    train_y = one_hot(labels)

    if test_image_path is not None:
        test_images = parse_idx_images(test_image_path)
        test_labels = parse_idx_labels(test_label_path)
        if test_images.shape[0] != test_labels.shape[0]:
            raise IdxFormatError(
                f"count mismatch: {test_images.shape[0]} images in {test_image_path} vs "
                f"{test_labels.shape[0]} labels in {test_label_path}"
            )
        test_x = (test_images.astype(float) / 255.0 - mean) / std
        test_y = one_hot(test_labels)
    else:
        d = images.shape[1]
        test_x = np.zeros((0, d))
        test_y = np.zeros((0, 10))

    meta = {
        "pixel_scale": 255,
        "train_pixel_mean": mean,
        "train_pixel_std": std,
        "normalization": "scale to [0,1] then standardize with train pixel stats",
        "target_encoding": "one-hot over 10 classes, values {0,1}",
    }
    return Dataset(train_x, train_y, test_x, test_y, meta)


_CACHE_MAGIC = b"PCDS"
_CACHE_VERSION = 1


def save_dataset_cache(ds: Dataset, path) -> None:
    """Write a Dataset to a length-prefixed binary cache with a version
    header."""
    blocks = {
        "train_inputs": ds.train_inputs,
        "train_targets": ds.train_targets,
        "test_inputs": ds.test_inputs,
        "test_targets": ds.test_targets,
    }
    meta = json.dumps(ds.normalization).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CACHE_MAGIC)
        f.write(struct.pack(">I", _CACHE_VERSION))
        f.write(struct.pack(">I", len(blocks)))
        f.write(struct.pack(">I", len(meta)))
        f.write(meta)
        for name, arr in blocks.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            nb = name.encode("utf-8")
            f.write(struct.pack(">I", len(nb)))
            f.write(nb)
            f.write(struct.pack(">I", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack(">Q", d))
            payload = arr.tobytes()
            f.write(struct.pack(">Q", len(payload)))
            f.write(payload)


def load_dataset_cache(path) -> Dataset:
    path = Path(path)
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, 0, path)
        if magic != _CACHE_MAGIC:
            raise IdxFormatError(f"{path}: bad cache magic {magic!r} at byte 0")
        version = struct.unpack(">I", _read_exact(f, 4, 4, path))[0]
        if version != _CACHE_VERSION:
            raise IdxFormatError(f"{path}: unsupported cache version {version}")
        n_blocks = struct.unpack(">I", f.read(4))[0]
        meta_len = struct.unpack(">I", f.read(4))[0]
        meta = json.loads(f.read(meta_len).decode("utf-8"))
        blocks = {}
        for _ in range(n_blocks):
            name_len = struct.unpack(">I", f.read(4))[0]
            name = f.read(name_len).decode("utf-8")
            ndim = struct.unpack(">I", f.read(4))[0]
            shape = tuple(struct.unpack(">Q", f.read(8))[0] for _ in range(ndim))
            payload_len = struct.unpack(">Q", f.read(8))[0]
            payload = f.read(payload_len)
            blocks[name] = np.frombuffer(payload, dtype=np.float64).reshape(shape)
    return Dataset(
        blocks["train_inputs"],
        blocks["train_targets"],
        blocks["test_inputs"],
        blocks["test_targets"],
        meta,
    )
