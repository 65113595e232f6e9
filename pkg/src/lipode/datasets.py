from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .errors import FormatError, InvalidArgumentError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

# canonical MNIST file names, looked up with and without a .gz suffix
MNIST_FILES: Dict[str, str] = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray = field(repr=False)  # (n, p) float64
    labels: np.ndarray = field(repr=False)  # (n,) int64 in 0..classes-1
    name: str = "dataset"
    split: str = "train"
    classes: int = 10

    def __post_init__(self) -> None:
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise InvalidArgumentError(
                f"inputs {x.shape} and labels {y.shape} do not pair up"
            )
        if self.split not in ("train", "test"):
            raise InvalidArgumentError(
                f"split must be train or test: {self.split!r}"
            )
        if y.size and (y.min() < 0 or y.max() >= self.classes):
            raise InvalidArgumentError(f"labels must lie in 0..{self.classes - 1}")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.inputs.shape[1])


def _read_blob(path: Path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _u32(blob: bytes, offset: int, what: str) -> int:
    if len(blob) < offset + 4:
        raise FormatError(
            f"truncated while reading {what} at byte offset {offset}",
            expected=offset + 4,
            found=len(blob),
            offset=offset,
        )
    return struct.unpack_from(">I", blob, offset)[0]


def _check_magic(blob: bytes, expected: int, path: Path) -> None:
    found = _u32(blob, 0, "magic")
    if found != expected:
        raise FormatError(
            f"{path.name}: magic 0x{found:08x}, expected 0x{expected:08x}",
            expected=expected,
            found=found,
            offset=0,
        )


def _payload(blob: bytes, offset: int, count: int, path: Path) -> np.ndarray:
    if len(blob) < offset + count:
        raise FormatError(
            f"{path.name}: truncated at byte offset {len(blob)}, "
            f"payload needs {offset + count} bytes",
            expected=offset + count,
            found=len(blob),
            offset=len(blob),
        )
    return np.frombuffer(blob, dtype=np.uint8, count=count, offset=offset)


def read_idx_images(path: Path) -> np.ndarray:
    """uint8 images, shape (count, rows * cols)."""
    blob = _read_blob(path)
    _check_magic(blob, IMAGES_MAGIC, Path(path))
    count = _u32(blob, 4, "image count")
    rows = _u32(blob, 8, "row count")
    cols = _u32(blob, 12, "column count")
    pixels = _payload(blob, 16, count * rows * cols, Path(path))
    return pixels.reshape(count, rows * cols)


def read_idx_labels(path: Path) -> np.ndarray:
    blob = _read_blob(path)
    _check_magic(blob, LABELS_MAGIC, Path(path))
    count = _u32(blob, 4, "label count")
    return _payload(blob, 8, count, Path(path))


def load_mnist(
    images_path: Path,
    labels_path: Path,
    split: str = "train",
    name: str = "mnist",
) -> Dataset:
    """Big-endian IDX image/label pair, pixels scaled to [0, 1]."""
    images = read_idx_images(Path(images_path))
    labels = read_idx_labels(Path(labels_path))
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"{images.shape[0]} images but {labels.shape[0]} labels",
            expected=images.shape[0],
            found=labels.shape[0],
        )
    classes = max(10, int(labels.max()) + 1) if labels.size else 10
    return Dataset(images / 255.0, labels.astype(np.int64), name, split, classes)


def find_mnist_files(data_dir: Path) -> Optional[Dict[str, Path]]:
    """Canonical MNIST files in ``data_dir`` (plain or gzipped), or None."""
    folder = Path(data_dir).resolve()
    if not folder.exists():
        return None
    found: Dict[str, Path] = {}
    for key, stem in MNIST_FILES.items():
        for candidate in (folder / stem, folder / f"{stem}.gz"):
            if candidate.is_file():
                found[key] = candidate
                break
        else:
            return None
    return found


def _class_means(classes: int, dim: int, separation: float) -> np.ndarray:
    # centered simplex vertices sqrt(2)-apart, scaled by separation
    vertices = np.eye(classes) - 1.0 / classes
    if dim >= classes:
        means = np.zeros((classes, dim))
        means[:, :classes] = vertices
    else:
        basis = np.random.default_rng(0).standard_normal((classes, dim))
        means = vertices @ basis / math.sqrt(dim)
    return separation * means


def synth_dataset(
    classes: int,
    per_class: int,
    dim: int,
    separation: float,
    seed: int = 0,
    split: str = "train",
) -> Dataset:
    """Gaussian blobs with unit covariance around scaled simplex vertices.

    The class means depend only on (classes, dim, separation), so datasets
    drawn with different seeds share them.
    """
    if min(classes, per_class, dim) < 1:
        raise InvalidArgumentError("classes, per_class and dim must be >= 1")
    rng = np.random.default_rng(seed)
    means = _class_means(classes, dim, separation)
    labels = np.repeat(np.arange(classes), per_class)
    inputs = means[labels] + rng.standard_normal((labels.size, dim))
    order = rng.permutation(labels.size)
    return Dataset(inputs[order], labels[order], "synth", split, classes)


def subset(data: Dataset, count: int, seed: int = 0) -> Dataset:
    """Random subset of ``count`` samples (all of them if count >= len)."""
    if count >= len(data):
        return data
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(data), size=count, replace=False))
    return Dataset(
        data.inputs[idx], data.labels[idx], data.name, data.split, data.classes
    )
