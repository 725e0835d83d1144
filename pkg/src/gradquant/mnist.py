"""Reader for IDX-format image/label files (the MNIST container format)."""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import DecodeError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx_images(path) -> np.ndarray:
    """Return images as float64 in [0, 1], shape (n, rows*cols)."""
    with _open(path) as fh:
        magic, n, rows, cols = struct.unpack(">IIII", fh.read(16))
        if magic != IMAGE_MAGIC:
            raise DecodeError(f"bad image magic 0x{magic:08X} in {path}")
        raw = fh.read(n * rows * cols)
    if len(raw) != n * rows * cols:
        raise DecodeError(f"truncated image file {path}")
    data = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
    return data.reshape(n, rows * cols)


def read_idx_labels(path) -> np.ndarray:
    with _open(path) as fh:
        magic, n = struct.unpack(">II", fh.read(8))
        if magic != LABEL_MAGIC:
            raise DecodeError(f"bad label magic 0x{magic:08X} in {path}")
        raw = fh.read(n)
    if len(raw) != n:
        raise DecodeError(f"truncated label file {path}")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def load_mnist(images_path, labels_path):
    """Load an image/label pair and sanity-check that the counts agree."""
    x = read_idx_images(images_path)
    y = read_idx_labels(labels_path)
    if x.shape[0] != y.shape[0]:
        raise DecodeError(f"image/label count mismatch: {x.shape[0]} vs {y.shape[0]}")
    return x, y
