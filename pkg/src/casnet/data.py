"""Bit-exact dataset readers, writers and deterministic batching.

Two on-disk formats are supported:

  * CIFAR-10 binary batches: records of exactly 3073 bytes, one label
    byte (0..9) followed by 3072 pixel bytes in R-plane, G-plane, B-plane
    order, each plane 32x32 row-major.
  * IDX (as used by MNIST): image file magic 0x00000803 followed by
    big-endian counts N, rows, cols and N*rows*cols pixel bytes; label
    file magic 0x00000801 followed by N and N label bytes.

Loaders emit float64 pixels equal to raw_byte / 255 exactly; no
normalization or resampling happens at load time.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError

_CIFAR_RECORD = 3073
_IDX_IMAGE_MAGIC = 0x00000803
_IDX_LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float64 in [0,1]
    labels: np.ndarray  # (N,) int64
    num_classes: int
    name: str = ""

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise DataFormatError(
                f"images {self.images.shape} / labels {self.labels.shape} mismatch")
        if self.images.shape[0] < 1:
            raise DataFormatError("dataset needs at least one example")

    def __len__(self) -> int:
        return self.images.shape[0]


def load_cifar10_binary(paths) -> Dataset:
    if isinstance(paths, (str, Path)):
        paths = [paths]
    images, labels = [], []
    for path in paths:
        raw = Path(path).read_bytes()
        if len(raw) == 0 or len(raw) % _CIFAR_RECORD:
            raise DataFormatError(
                f"{path}: size {len(raw)} is not a positive multiple of {_CIFAR_RECORD}")
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, _CIFAR_RECORD)
        lab = arr[:, 0]
        if lab.max(initial=0) > 9:
            raise DataFormatError(f"{path}: label byte {int(lab.max())} > 9")
        images.append(arr[:, 1:].reshape(-1, 3, 32, 32))
        labels.append(lab)
    pixels = np.concatenate(images).astype(np.float64) / 255.0
    return Dataset(images=pixels, labels=np.concatenate(labels).astype(np.int64),
                   num_classes=10, name="cifar10")


def write_cifar10_binary(path, dataset: Dataset):
    """Inverse of load_cifar10_binary for 3x32x32 byte-valued images."""
    pix = np.round(dataset.images * 255.0).astype(np.uint8).reshape(len(dataset), 3072)
    rec = np.concatenate([dataset.labels.astype(np.uint8)[:, None], pix], axis=1)
    Path(path).write_bytes(rec.tobytes())


def _read_idx_header(raw: bytes, path, magic: int, ndims: int):
    header = 4 * (1 + ndims)
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated IDX header")
    fields = struct.unpack(f">{1 + ndims}I", raw[:header])
    if fields[0] != magic:
        raise DataFormatError(f"{path}: magic 0x{fields[0]:08x} != 0x{magic:08x}")
    return fields[1:], raw[header:]


def load_mnist_idx(image_path, label_path) -> Dataset:
    img_raw = Path(image_path).read_bytes()
    (n, rows, cols), img_body = _read_idx_header(img_raw, image_path, _IDX_IMAGE_MAGIC, 3)
    if len(img_body) != n * rows * cols:
        raise DataFormatError(
            f"{image_path}: expected {n * rows * cols} pixel bytes, got {len(img_body)}")
    lab_raw = Path(label_path).read_bytes()
    (n_lab,), lab_body = _read_idx_header(lab_raw, label_path, _IDX_LABEL_MAGIC, 1)
    if n_lab != n:
        raise DataFormatError(f"image count {n} != label count {n_lab}")
    if len(lab_body) != n_lab:
        raise DataFormatError(f"{label_path}: expected {n_lab} label bytes, got {len(lab_body)}")
    images = np.frombuffer(img_body, dtype=np.uint8).reshape(n, 1, rows, cols)
    labels = np.frombuffer(lab_body, dtype=np.uint8).astype(np.int64)
    return Dataset(images=images.astype(np.float64) / 255.0, labels=labels,
                   num_classes=10, name="mnist")


def write_mnist_idx(image_path, label_path, dataset: Dataset):
    """Inverse of load_mnist_idx for single-channel byte-valued images."""
    n, c, rows, cols = dataset.images.shape
    if c != 1:
        raise DataFormatError(f"IDX images must be single-channel, got {c}")
    pix = np.round(dataset.images * 255.0).astype(np.uint8)
    with open(image_path, "wb") as fh:
        fh.write(struct.pack(">4I", _IDX_IMAGE_MAGIC, n, rows, cols))
        fh.write(pix.tobytes())
    with open(label_path, "wb") as fh:
        fh.write(struct.pack(">2I", _IDX_LABEL_MAGIC, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


@dataclass
class BatchPlan:
    batch_size: int
    shuffle_seed: int = 0
    subset_per_class: int | None = None
    subset_indices: list | None = None

    def to_dict(self) -> dict:
        return {"batch_size": self.batch_size, "shuffle_seed": self.shuffle_seed,
                "subset_per_class": self.subset_per_class,
                "subset_indices": self.subset_indices}

    @staticmethod
    def from_dict(d: dict) -> "BatchPlan":
        return BatchPlan(batch_size=d["batch_size"], shuffle_seed=d.get("shuffle_seed", 0),
                         subset_per_class=d.get("subset_per_class"),
                         subset_indices=d.get("subset_indices"))


def subset_indices(ds: Dataset, plan: BatchPlan) -> np.ndarray:
    """Resolve the plan's subset to unique dataset indices (unshuffled)."""
    if plan.subset_indices is not None:
        idx = np.asarray(plan.subset_indices, dtype=np.int64)
        if idx.size != np.unique(idx).size:
            raise ConfigError("subset indices must be unique")
    elif plan.subset_per_class is not None:
        per_class = []
        for c in range(ds.num_classes):
            rows = np.flatnonzero(ds.labels == c)[:plan.subset_per_class]
            per_class.append(rows)
        idx = np.sort(np.concatenate(per_class))
    else:
        idx = np.arange(len(ds), dtype=np.int64)
    if idx.size == 0:
        raise ConfigError("subset selected no examples")
    return idx


def batch_iter(ds: Dataset, plan: BatchPlan):
    """Seeded uniform shuffle of the subset, cut into consecutive batches.

    The final short batch is kept. The same seed always yields the same
    batch sequence.
    """
    idx = subset_indices(ds, plan)
    if plan.batch_size > idx.size:
        raise ConfigError(f"batch size {plan.batch_size} exceeds subset size {idx.size}")
    rng = np.random.default_rng(plan.shuffle_seed)
    order = idx[rng.permutation(idx.size)]
    for start in range(0, order.size, plan.batch_size):
        rows = order[start:start + plan.batch_size]
        yield ds.images[rows], ds.labels[rows]
