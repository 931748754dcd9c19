"""Datasets: IDX reader/writer, synthetic generators and the MNIST desk preset."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

DATA_DIR = Path(os.environ.get("GRASPLAB_DATA", Path(__file__).resolve().parents[2] / "data"))


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray  # float32, pixels in [0, 1]
    y: np.ndarray  # int64 labels

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ValueError(f"{len(self.x)} inputs but {len(self.y)} labels")

    def __len__(self):
        return len(self.y)

    @property
    def sample_shape(self):
        return tuple(self.x.shape[1:])

    @property
    def num_classes(self):
        return int(self.y.max()) + 1 if len(self.y) else 0

    def subset(self, idx):
        return Dataset(self.x[idx], self.y[idx])


def _read_bytes(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] == b"\x1f\x8b":
        blob = gzip.decompress(blob)
    return blob


def _parse_idx(blob, magic, name):
    if len(blob) < 8:
        raise IdxFormatError(f"{name}: file truncated at byte {len(blob)} (header needs 8)")
    got = struct.unpack_from(">I", blob, 0)[0]
    if got != magic:
        raise IdxFormatError(f"{name}: bad magic {got} at byte 0, expected {magic}")
    ndim = blob[3]
    hdr = 4 + 4 * ndim
    if len(blob) < hdr:
        raise IdxFormatError(f"{name}: dimension header truncated at byte {len(blob)}")
    dims = struct.unpack_from(">" + "I" * ndim, blob, 4)
    need = hdr + int(np.prod(dims))
    if len(blob) < need:
        raise IdxFormatError(f"{name}: payload truncated at byte {len(blob)}, expected {need} bytes")
    if len(blob) > need:
        raise IdxFormatError(f"{name}: {len(blob) - need} unexpected trailing bytes at byte {need}")
    return np.frombuffer(blob, dtype=np.uint8, offset=hdr).reshape(dims)


def load_idx(images_path, labels_path):
    """Read an IDX image/label pair (optionally gzipped) into a Dataset.

    Images come back as float32 (N, 1, H, W) scaled by 1/255.
    """
    images = _parse_idx(_read_bytes(images_path), IMAGE_MAGIC, str(images_path))
    labels = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, str(labels_path))
    if images.ndim != 3:
        raise IdxFormatError(f"{images_path}: expected 3 dimensions, got {images.ndim}")
    if labels.ndim != 1:
        raise IdxFormatError(f"{labels_path}: expected 1 dimension, got {labels.ndim}")
    if len(images) != len(labels):
        raise IdxFormatError(f"{len(images)} images but {len(labels)} labels")
    if len(images) == 0:
        raise IdxFormatError(f"{images_path}: no images")
    if labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise IdxFormatError(f"{labels_path}: label {labels[bad]} > 9 at byte {8 + bad}")
    x = (images.astype(np.float32) / np.float32(255.0))[:, None, :, :]
    return Dataset(x, labels.astype(np.int64))


def write_idx(images_u8, labels, images_path, labels_path, compress=None):
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images_u8.shape
    img = struct.pack(">IIII", IMAGE_MAGIC, n, h, w) + images_u8.tobytes()
    lab = struct.pack(">II", LABEL_MAGIC, len(labels)) + labels.tobytes()
    for blob, path in ((img, images_path), (lab, labels_path)):
        path = str(path)
        gz = path.endswith(".gz") if compress is None else compress
        with open(path, "wb") as fh:
            fh.write(gzip.compress(blob, mtime=0) if gz else blob)


SYNTHETIC_KINDS = ("blobs", "stripes")


def synthetic_dataset(kind, n, seed, dim=16, size=12):
    """Seeded two-class toy data, balanced to within one sample.

    ``blobs``: flat vectors around 0.3 / 0.7 per coordinate.
    ``stripes``: (1, size, size) images with horizontal vs vertical stripes.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    y = y[rng.permutation(n)]
    if kind == "blobs":
        centers = np.where(y[:, None] == 0, 0.3, 0.7)
        x = centers + 0.05 * rng.standard_normal((n, dim))
    elif kind == "stripes":
        x = np.zeros((n, 1, size, size))
        phase = rng.integers(0, 3, size=n)
        level = rng.uniform(0.6, 1.0, size=n)
        coords = np.arange(size)
        for i in range(n):
            on = ((coords + phase[i]) % 3 == 0).astype(float) * level[i]
            x[i, 0] = on[:, None] if y[i] == 0 else on[None, :]
        x += 0.05 * rng.standard_normal(x.shape)
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    return Dataset(np.clip(x, 0.0, 1.0).astype(np.float32), y.astype(np.int64))


def mnist_paths(root=None):
    root = Path(root) if root is not None else DATA_DIR / "mnist3k"
    return {
        "train": (root / "train-images-idx3-ubyte.gz", root / "train-labels-idx1-ubyte.gz"),
        "test": (root / "test-images-idx3-ubyte.gz", root / "test-labels-idx1-ubyte.gz"),
    }


def load_mnist_desk(root=None, n_train=2000, n_test=1000, seed=0):
    """MNIST-2k preset: seeded subsample of the bundled train/test IDX files."""
    paths = mnist_paths(root)
    train = load_idx(*paths["train"])
    test = load_idx(*paths["test"])
    rng = np.random.default_rng(seed)
    if n_train < len(train):
        train = train.subset(np.sort(rng.permutation(len(train))[:n_train]))
    if n_test < len(test):
        test = test.subset(np.sort(rng.permutation(len(test))[:n_test]))
    return train, test
