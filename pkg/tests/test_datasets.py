import gzip
import struct
from pathlib import Path

import numpy as np
import pytest

from lipode.datasets import (
    IMAGES_MAGIC,
    LABELS_MAGIC,
    MNIST_FILES,
    Dataset,
    find_mnist_files,
    load_mnist,
    read_idx_images,
    read_idx_labels,
    subset,
    synth_dataset,
)
from lipode.errors import FormatError, InvalidArgumentError


def _images_blob(pixels: np.ndarray) -> bytes:
    count, rows, cols = pixels.shape
    head = struct.pack(">IIII", IMAGES_MAGIC, count, rows, cols)
    return head + pixels.astype(np.uint8).tobytes()


def _labels_blob(labels: np.ndarray) -> bytes:
    head = struct.pack(">II", LABELS_MAGIC, labels.size)
    return head + labels.astype(np.uint8).tobytes()


def _write_mnist(folder: Path, count: int = 6, gz: bool = False) -> None:
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, size=(count, 2, 3))
    labels = np.arange(count) % 10
    blobs = {
        "train_images": _images_blob(pixels),
        "train_labels": _labels_blob(labels),
        "test_images": _images_blob(pixels[:3]),
        "test_labels": _labels_blob(labels[:3]),
    }
    for key, stem in MNIST_FILES.items():
        if gz:
            with gzip.open(folder / f"{stem}.gz", "wb") as f:
                f.write(blobs[key])
        else:
            (folder / stem).write_bytes(blobs[key])


def test_reads_idx_pair(tmp_path):
    pixels = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
    (tmp_path / "img").write_bytes(_images_blob(pixels))
    (tmp_path / "lab").write_bytes(_labels_blob(np.array([3, 7])))
    images = read_idx_images(tmp_path / "img")
    assert images.shape == (2, 6)
    np.testing.assert_array_equal(images[1], np.arange(6, 12))
    np.testing.assert_array_equal(read_idx_labels(tmp_path / "lab"), [3, 7])

    data = load_mnist(tmp_path / "img", tmp_path / "lab", split="test")
    assert len(data) == 2 and data.dim == 6 and data.split == "test"
    assert data.inputs.max() == pytest.approx(11 / 255)


def test_bad_magic_and_truncation(tmp_path):
    (tmp_path / "lab").write_bytes(_labels_blob(np.array([1, 2])))
    with pytest.raises(FormatError) as exc:
        read_idx_images(tmp_path / "lab")
    assert exc.value.offset == 0
    assert exc.value.found == LABELS_MAGIC

    blob = _images_blob(np.zeros((3, 2, 2)))
    (tmp_path / "short").write_bytes(blob[:-1])
    with pytest.raises(FormatError) as exc:
        read_idx_images(tmp_path / "short")
    assert exc.value.offset == len(blob) - 1

    (tmp_path / "tiny").write_bytes(blob[:6])
    with pytest.raises(FormatError):
        read_idx_images(tmp_path / "tiny")


def test_image_label_count_mismatch(tmp_path):
    (tmp_path / "img").write_bytes(_images_blob(np.zeros((3, 2, 2))))
    (tmp_path / "lab").write_bytes(_labels_blob(np.array([1, 2])))
    with pytest.raises(FormatError):
        load_mnist(tmp_path / "img", tmp_path / "lab")


@pytest.mark.parametrize("gz", [False, True])
def test_find_mnist_files(tmp_path, gz):
    assert find_mnist_files(tmp_path) is None
    assert find_mnist_files(tmp_path / "missing") is None
    _write_mnist(tmp_path, gz=gz)
    files = find_mnist_files(tmp_path)
    assert set(files) == set(MNIST_FILES)
    train = load_mnist(files["train_images"], files["train_labels"])
    assert len(train) == 6 and train.dim == 6


def test_synth_dataset_shapes_and_determinism():
    a = synth_dataset(4, 25, 8, 1.5, seed=3)
    b = synth_dataset(4, 25, 8, 1.5, seed=3)
    assert len(a) == 100 and a.dim == 8 and a.classes == 4
    np.testing.assert_array_equal(a.inputs, b.inputs)
    np.testing.assert_array_equal(np.bincount(a.labels), [25] * 4)


def test_synth_splits_share_class_means():
    train = synth_dataset(3, 2000, 5, 3.0, seed=0)
    test = synth_dataset(3, 2000, 5, 3.0, seed=1, split="test")
    for c in range(3):
        mu_train = train.inputs[train.labels == c].mean(axis=0)
        mu_test = test.inputs[test.labels == c].mean(axis=0)
        np.testing.assert_allclose(mu_train, mu_test, atol=0.15)


def test_subset():
    data = synth_dataset(10, 10, 4, 1.0)
    small = subset(data, 30, seed=1)
    assert len(small) == 30
    np.testing.assert_array_equal(small.inputs, subset(data, 30, seed=1).inputs)
    assert subset(data, 500) is data


def test_dataset_validation():
    with pytest.raises(InvalidArgumentError):
        Dataset(np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(InvalidArgumentError):
        Dataset(np.zeros((2, 2)), np.array([0, 10]), classes=10)
    with pytest.raises(InvalidArgumentError):
        Dataset(np.zeros((2, 2)), np.zeros(2), split="valid")
    with pytest.raises(InvalidArgumentError):
        synth_dataset(0, 5, 3, 1.0)
