import struct

import numpy as np
import numpy.testing as npt
import pytest

from casnet.data import (BatchPlan, Dataset, batch_iter, load_cifar10_binary,
                         load_mnist_idx, subset_indices, write_cifar10_binary,
                         write_mnist_idx)
from casnet.errors import ConfigError, DataFormatError


def _cifar_record(label, pixel_bytes):
    return bytes([label]) + bytes(pixel_bytes)


def test_cifar_single_record_all_255(tmp_path):
    path = tmp_path / "batch.bin"
    path.write_bytes(_cifar_record(7, [255] * 3072))
    ds = load_cifar10_binary(path)
    assert len(ds) == 1
    assert ds.labels[0] == 7
    npt.assert_array_equal(ds.images, np.ones((1, 3, 32, 32)))


def test_cifar_truncated_file_rejected(tmp_path):
    path = tmp_path / "short.bin"
    path.write_bytes(bytes(3072))
    with pytest.raises(DataFormatError):
        load_cifar10_binary(path)


def test_cifar_two_records_in_order(tmp_path):
    path = tmp_path / "two.bin"
    path.write_bytes(_cifar_record(1, [10] * 3072) + _cifar_record(2, [20] * 3072))
    ds = load_cifar10_binary(path)
    assert len(ds) == 2
    npt.assert_array_equal(ds.labels, [1, 2])
    assert ds.images[0, 0, 0, 0] == 10 / 255.0


def test_cifar_bad_label_rejected(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(_cifar_record(10, [0] * 3072))
    with pytest.raises(DataFormatError):
        load_cifar10_binary(path)


def test_cifar_plane_order():
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, (3, 3, 32, 32)).astype(np.float64) / 255.0
    labels = np.array([0, 5, 9], dtype=np.int64)
    ds = Dataset(images, labels, 10)
    import tempfile, os
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "rt.bin")
        write_cifar10_binary(path, ds)
        raw = open(path, "rb").read()
        # record 1: label byte then R plane first
        assert raw[0] == 0
        assert raw[1] == round(images[0, 0, 0, 0] * 255)
        assert raw[1 + 1024] == round(images[0, 1, 0, 0] * 255)  # G plane offset
        back = load_cifar10_binary(path)
    npt.assert_array_equal(back.images, images)
    npt.assert_array_equal(back.labels, labels)


def _write_idx_pair(tmp_path, n=2, rows=4, cols=4, start=0):
    img = tmp_path / "img.idx"
    lab = tmp_path / "lab.idx"
    pixels = bytes((np.arange(n * rows * cols) + start) % 256)
    img.write_bytes(struct.pack(">4I", 0x803, n, rows, cols) + pixels)
    lab.write_bytes(struct.pack(">2I", 0x801, n) + bytes(range(n)))
    return img, lab


def test_mnist_idx_pixels_exact(tmp_path):
    img, lab = _write_idx_pair(tmp_path, n=1, rows=16, cols=16)
    ds = load_mnist_idx(img, lab)
    assert ds.images.shape == (1, 1, 16, 16)
    expect = (np.arange(256) % 256).reshape(1, 1, 16, 16) / 255.0
    npt.assert_array_equal(ds.images, expect)
    # every pixel is byte/255 exactly
    scaled = ds.images * 255.0
    npt.assert_array_equal(scaled, np.round(scaled))


def test_mnist_swapped_files_rejected(tmp_path):
    img, lab = _write_idx_pair(tmp_path)
    with pytest.raises(DataFormatError):
        load_mnist_idx(lab, img)


def test_mnist_count_mismatch_rejected(tmp_path):
    img, _ = _write_idx_pair(tmp_path, n=2)
    lab = tmp_path / "lab3.idx"
    lab.write_bytes(struct.pack(">2I", 0x801, 3) + bytes(3))
    with pytest.raises(DataFormatError):
        load_mnist_idx(img, lab)


def test_mnist_round_trip_value_exact(tmp_path):
    rng = np.random.default_rng(1)
    images = rng.integers(0, 256, (5, 1, 9, 9)).astype(np.float64) / 255.0
    labels = rng.integers(0, 10, 5).astype(np.int64)
    write_mnist_idx(tmp_path / "i.idx", tmp_path / "l.idx", Dataset(images, labels, 10))
    back = load_mnist_idx(tmp_path / "i.idx", tmp_path / "l.idx")
    npt.assert_array_equal(back.images, images)
    npt.assert_array_equal(back.labels, labels)


def _toy_dataset(n=40, classes=4):
    rng = np.random.default_rng(2)
    images = rng.uniform(0, 1, (n, 1, 2, 2))
    labels = np.tile(np.arange(classes), n // classes).astype(np.int64)
    return Dataset(images, labels, classes)


def test_batch_iter_deterministic():
    ds = _toy_dataset()
    plan = BatchPlan(batch_size=7, shuffle_seed=5)
    a = [lab.copy() for _, lab in batch_iter(ds, plan)]
    b = [lab.copy() for _, lab in batch_iter(ds, plan)]
    assert len(a) == 6  # final short batch kept
    for x, y in zip(a, b):
        npt.assert_array_equal(x, y)


def test_batch_iter_single_batch_is_permutation():
    ds = _toy_dataset()
    batches = list(batch_iter(ds, BatchPlan(batch_size=len(ds), shuffle_seed=0)))
    assert len(batches) == 1
    npt.assert_array_equal(np.sort(batches[0][1]), np.sort(ds.labels))


def test_batch_iter_epoch_covers_subset_exactly_once():
    ds = _toy_dataset()
    plan = BatchPlan(batch_size=6, shuffle_seed=3)
    seen = np.concatenate([im.reshape(len(lab), -1)[:, 0]
                           for im, lab in batch_iter(ds, plan)])
    all_first = ds.images.reshape(len(ds), -1)[:, 0]
    npt.assert_array_equal(np.sort(seen), np.sort(all_first))


def test_per_class_subset_counts():
    ds = _toy_dataset(n=80, classes=4)
    plan = BatchPlan(batch_size=10, shuffle_seed=0, subset_per_class=10)
    idx = subset_indices(ds, plan)
    assert idx.size == 40
    labels = ds.labels[idx]
    for c in range(4):
        assert np.sum(labels == c) == 10


def test_batch_iter_errors():
    ds = _toy_dataset()
    with pytest.raises(ConfigError):
        list(batch_iter(ds, BatchPlan(batch_size=100, shuffle_seed=0)))
    with pytest.raises(ConfigError):
        subset_indices(ds, BatchPlan(batch_size=1, subset_indices=[1, 1, 2]))
