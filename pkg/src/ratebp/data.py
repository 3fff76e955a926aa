"""Dataset ingestion: big-endian IDX containers and a synthetic generator."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tensor import DenseArray, RngState

IMAGES_MAGIC = 0x00000803  # unsigned bytes, 3 dimensions
LABELS_MAGIC = 0x00000801  # unsigned bytes, 1 dimension


class IdxFormatError(ValueError):
    pass


@dataclass
class DatasetHandle:
    images: DenseArray  # [N, F], scaled to [0, 1]
    labels: np.ndarray  # [N] int64
    n_classes: int
    source: str
    split: str = ""

    def __len__(self):
        return len(self.labels)


def load_idx(images_path, labels_path, n_classes: int | None = None) -> DatasetHandle:
    """Parse an IDX image/label file pair; pixel bytes are scaled by 1/255."""
    with open(images_path, "rb") as f:
        raw = f.read()
    if len(raw) < 16:
        raise IdxFormatError(f"truncated image header in {images_path}: {len(raw)} bytes")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGES_MAGIC:
        raise IdxFormatError(
            f"bad image magic 0x{magic:08x} in {images_path}, expected 0x{IMAGES_MAGIC:08x}"
        )
    payload = raw[16:]
    if len(payload) != n * rows * cols:
        raise IdxFormatError(
            f"image payload truncated in {images_path}: "
            f"expected {n * rows * cols} bytes, got {len(payload)}"
        )
    images = np.frombuffer(payload, dtype=np.uint8).astype(np.float64).reshape(n, rows * cols)
    images /= 255.0

    with open(labels_path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise IdxFormatError(f"truncated label header in {labels_path}: {len(raw)} bytes")
    magic, n_labels = struct.unpack(">II", raw[:8])
    if magic != LABELS_MAGIC:
        raise IdxFormatError(
            f"bad label magic 0x{magic:08x} in {labels_path}, expected 0x{LABELS_MAGIC:08x}"
        )
    payload = raw[8:]
    if len(payload) != n_labels:
        raise IdxFormatError(
            f"label payload truncated in {labels_path}: expected {n_labels} bytes, got {len(payload)}"
        )
    if n_labels != n:
        raise IdxFormatError(
            f"count mismatch: {n} images in {images_path} but {n_labels} labels in {labels_path}"
        )
    labels = np.frombuffer(payload, dtype=np.uint8).astype(np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if n else 0
    return DatasetHandle(images=images, labels=labels, n_classes=n_classes, source=f"idx:{images_path}")


def save_idx(handle: DatasetHandle, images_path, labels_path, rows: int, cols: int) -> None:
    """Write a handle back out as an IDX pair (pixels quantized to bytes)."""
    n = len(handle)
    if rows * cols != handle.images.shape[1]:
        raise ValueError(f"rows*cols = {rows * cols} != feature count {handle.images.shape[1]}")
    pixels = np.clip(np.rint(handle.images * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, n))
        f.write(handle.labels.astype(np.uint8).tobytes())


def gen_synthetic(
    rng: RngState,
    n: int,
    features: int,
    classes: int,
    separation: float,
    noise: float = 0.1,
) -> DatasetHandle:
    """Gaussian class clusters, centroids on a scaled unit sphere around 0.5.

    Labels are assigned round-robin before a deterministic shuffle, so the
    class histogram is balanced within one sample. Values are clipped to
    [0, 1].
    """
    if not separation > 0:
        raise ValueError(f"separation must be positive, got {separation}")
    g = rng.gen
    dirs = g.standard_normal((classes, features))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centroids = 0.5 + separation * dirs
    labels = np.arange(n, dtype=np.int64) % classes
    x = centroids[labels] + noise * g.standard_normal((n, features))
    np.clip(x, 0.0, 1.0, out=x)
    perm = g.permutation(n)
    return DatasetHandle(
        images=x[perm],
        labels=labels[perm],
        n_classes=classes,
        source=f"synthetic(n={n},features={features},classes={classes},sep={separation},noise={noise})",
    )


def split_dataset(handle: DatasetHandle, n_train: int) -> tuple[DatasetHandle, DatasetHandle]:
    train = DatasetHandle(
        images=handle.images[:n_train], labels=handle.labels[:n_train],
        n_classes=handle.n_classes, source=handle.source, split="train",
    )
    test = DatasetHandle(
        images=handle.images[n_train:], labels=handle.labels[n_train:],
        n_classes=handle.n_classes, source=handle.source, split="test",
    )
    return train, test
