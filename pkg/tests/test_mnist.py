import gzip
import struct

import numpy as np
import pytest

from gradquant.errors import DecodeError
from gradquant.mnist import load_mnist, read_idx_images, read_idx_labels


def write_images(path, pixels, rows=2, cols=3, magic=0x00000803, compress=False):
    n = len(pixels) // (rows * cols)
    blob = struct.pack(">IIII", magic, n, rows, cols) + bytes(pixels)
    opener = gzip.open if compress else open
    with opener(path, "wb") as fh:
        fh.write(blob)


def write_labels(path, labels, magic=0x00000801):
    blob = struct.pack(">II", magic, len(labels)) + bytes(labels)
    path.write_bytes(blob)


def test_images_roundtrip(tmp_path):
    path = tmp_path / "imgs.idx"
    write_images(path, [0, 51, 102, 153, 204, 255, 255, 0, 0, 0, 0, 0])
    x = read_idx_images(path)
    assert x.shape == (2, 6)
    assert x.dtype == np.float64
    assert x[0, 0] == 0.0
    assert x[0, 5] == 1.0
    assert x[0, 1] == pytest.approx(51 / 255)
    assert x[1, 0] == 1.0


def test_gzip_transparent(tmp_path):
    plain = tmp_path / "imgs.idx"
    packed = tmp_path / "imgs.idx.gz"
    pixels = list(range(12))
    write_images(plain, pixels)
    write_images(packed, pixels, compress=True)
    assert np.array_equal(read_idx_images(plain), read_idx_images(packed))


def test_labels_roundtrip(tmp_path):
    path = tmp_path / "labels.idx"
    write_labels(path, [7, 0, 9])
    y = read_idx_labels(path)
    assert y.tolist() == [7, 0, 9]
    assert y.dtype == np.int64


def test_load_pair_and_count_mismatch(tmp_path):
    imgs, labels = tmp_path / "i.idx", tmp_path / "l.idx"
    write_images(imgs, [0] * 12)  # two 2x3 images
    write_labels(labels, [1, 0])
    x, y = load_mnist(imgs, labels)
    assert x.shape[0] == y.shape[0] == 2

    write_labels(labels, [1, 0, 1])
    with pytest.raises(DecodeError, match="count mismatch"):
        load_mnist(imgs, labels)


def test_bad_magic_rejected(tmp_path):
    imgs = tmp_path / "i.idx"
    write_images(imgs, [0] * 6, magic=0x00000804)
    with pytest.raises(DecodeError, match="magic"):
        read_idx_images(imgs)
    labels = tmp_path / "l.idx"
    write_labels(labels, [1], magic=0x00000803)
    with pytest.raises(DecodeError, match="magic"):
        read_idx_labels(labels)


def test_truncated_payload_rejected(tmp_path):
    imgs = tmp_path / "i.idx"
    blob = struct.pack(">IIII", 0x00000803, 2, 2, 3) + bytes(5)  # needs 12 bytes
    imgs.write_bytes(blob)
    with pytest.raises(DecodeError, match="truncated"):
        read_idx_images(imgs)
    labels = tmp_path / "l.idx"
    labels.write_bytes(struct.pack(">II", 0x00000801, 4) + bytes(2))
    with pytest.raises(DecodeError, match="truncated"):
        read_idx_labels(labels)
