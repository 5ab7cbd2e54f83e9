"""Dataset loading, preprocessing, one-vs-all tasks and node partitioning."""
from __future__ import annotations

import csv
import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import RngStream, pca_top_k

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
COVERTYPE_FILE = "covtype.data"
COVERTYPE_TRAIN_SIZE = 464_809

DATASET_SOURCES = {
    "mnist": {
        "urls": [f"https://storage.googleapis.com/cvdf-datasets/mnist/{name}.gz"
                 for name in MNIST_FILES.values()],
        "expect": "IDX files: 60000 train / 10000 test images of 28x28, labels 0-9",
    },
    "covertype": {
        "urls": ["https://archive.ics.uci.edu/ml/machine-learning-databases/covtype/covtype.data.gz"],
        "expect": "581012 rows x 55 comma-separated integer columns, class 1-7 in the last",
    },
}


class DatasetError(ValueError):
    pass


@dataclass
class RawDataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    zero_rows: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labels) < 1 or self.features.shape[0] != len(self.labels):
            raise DatasetError("features and labels must have the same positive row count")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise DatasetError(f"labels must lie in [0, {self.class_count})")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "RawDataset":
        return RawDataset(self.features[idx], self.labels[idx], self.class_count)


@dataclass
class BinaryTask:
    X: np.ndarray
    y: np.ndarray  # +1 / -1
    positive_class: int

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class NodePartition:
    nodes: list[np.ndarray]
    per_node: int
    train_size: int = 0

    @property
    def M(self) -> int:
        return len(self.nodes)

    @property
    def total(self) -> int:
        return sum(len(ix) for ix in self.nodes)


@dataclass
class Split:
    train: RawDataset
    test: RawDataset
    info: dict = field(default_factory=dict)


def _open(path) -> object:
    path = Path(path)
    if not path.exists() and Path(str(path) + ".gz").exists():
        path = Path(str(path) + ".gz")
    if not path.exists():
        raise FileNotFoundError(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, expected_magic: int) -> np.ndarray:
    with _open(path) as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise DatasetError(f"{path}: truncated header at offset 0")
    magic = struct.unpack(">I", blob[:4])[0]
    if magic != expected_magic:
        raise DatasetError(f"{path}: bad magic 0x{magic:08x} at offset 0, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise DatasetError(f"{path}: truncated dimension header at offset 4")
    dims = struct.unpack(f">{ndim}I", blob[4:header])
    count = int(np.prod(dims))
    if len(blob) - header < count:
        raise DatasetError(
            f"{path}: truncated payload at offset {len(blob)}, need {header + count} bytes")
    return np.frombuffer(blob, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> RawDataset:
    """MNIST-style IDX pair; pixels scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DatasetError(
            f"count mismatch at offset 4: {images.shape[0]} images vs {labels.shape[0]} labels")
    feats = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return RawDataset(feats, labels.astype(np.int64), class_count=10)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array in IDX format (used to build fixtures)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def load_covertype_csv(path) -> RawDataset:
    """Covertype rows: 54 features then a class in 1..7 (remapped to 0..6)."""
    rows, labels = [], []
    with _open(path) as raw:
        text = (line.decode("ascii") for line in raw)
        for lineno, row in enumerate(csv.reader(text), start=1):
            if not row:
                continue
            if len(row) != 55:
                raise DatasetError(f"{path}: row {lineno} has {len(row)} columns, expected 55")
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise DatasetError(f"{path}: row {lineno}: non-numeric cell ({exc})") from None
            label = int(values[-1])
            if not 1 <= label <= 7 or label != values[-1]:
                raise DatasetError(f"{path}: row {lineno}: class {row[-1]!r} not in 1..7")
            rows.append(values[:-1])
            labels.append(label - 1)
    if not rows:
        raise DatasetError(f"{path}: no rows")
    return RawDataset(np.array(rows), np.array(labels), class_count=7)


def normalize_rows(X: np.ndarray) -> tuple[np.ndarray, int]:
    """Rescale each nonzero row to unit L2 norm; returns (rows, zero-row count)."""
    norms = np.linalg.norm(X, axis=1)
    zero = norms == 0
    out = X.copy()
    out[~zero] = X[~zero] / norms[~zero, None]
    # second pass pins norms to 1 within a couple of ulps
    n2 = np.linalg.norm(out[~zero], axis=1)
    out[~zero] /= n2[:, None]
    return out, int(zero.sum())


def preprocess(raw: RawDataset, pca_dims: int | None = None, rng: RngStream | None = None,
               pca=None) -> tuple[RawDataset, object]:
    """Optional PCA projection followed by projection onto the unit sphere.

    ``pca`` reuses an already fitted projection (fit on train, apply to test).
    Returns the processed dataset and the PCA result (or None).
    """
    X = raw.features
    if pca_dims is not None and pca is None:
        if pca_dims > raw.d:
            raise DatasetError(f"pca_dims={pca_dims} exceeds input dimension {raw.d}")
        pca = pca_top_k(X, pca_dims, rng=rng)
    if pca is not None:
        X = pca.transform(X)
    X, zeros = normalize_rows(X)
    out = RawDataset(X, raw.labels, raw.class_count)
    out.zero_rows = zeros
    return out, pca


def make_tasks(raw: RawDataset) -> list[BinaryTask]:
    if raw.class_count < 2:
        raise DatasetError("need at least two classes")
    return [BinaryTask(raw.features, np.where(raw.labels == c, 1.0, -1.0), c)
            for c in range(raw.class_count)]


def partition(train_size: int, M: int, per_node: int, rng: RngStream) -> NodePartition:
    """Give each of ``M`` nodes ``per_node`` distinct training indices."""
    if M < 1 or per_node < 1:
        raise ValueError("M and per_node must be positive")
    if M * per_node > train_size:
        raise ValueError(f"M*per_node = {M * per_node} exceeds training size {train_size}")
    perm = rng.permutation(np.arange(train_size, dtype=np.int64))
    nodes = [perm[m * per_node:(m + 1) * per_node].copy() for m in range(M)]
    return NodePartition(nodes, per_node, train_size)


def predict_scores(models: np.ndarray, X: np.ndarray) -> np.ndarray:
    return np.asarray(X, dtype=np.float64) @ np.asarray(models, dtype=np.float64).T


def predict_multiclass(models, x) -> int:
    """Class whose linear score is largest; ties go to the lowest index."""
    scores = np.asarray(models, dtype=np.float64) @ np.asarray(x, dtype=np.float64)
    return int(np.argmax(scores))  # argmax returns the first maximum


def accuracy(models, data: RawDataset) -> float:
    preds = np.argmax(predict_scores(models, data.features), axis=1)
    return float(np.mean(preds == data.labels))


def make_blobs(class_count: int = 3, dim: int = 5, separation: float = 4.0, n_train: int = 600,
               n_test: int = 300, seed: int = 0) -> Split:
    """Gaussian blobs with class centres on a scaled simplex-like layout.

    Each class gets a random unit-norm centre times ``separation``; points are
    centre plus standard normal noise.
    """
    rng = RngStream(seed).child("blobs")
    centres = rng.standard_normal(class_count * dim).reshape(class_count, dim)
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    centres *= separation

    def draw(n):
        labels = np.arange(n) % class_count
        labels = rng.permutation(labels)
        pts = centres[labels] + rng.standard_normal(n * dim).reshape(n, dim)
        return RawDataset(pts, labels, class_count)

    return Split(draw(n_train), draw(n_test), {"generator": "blobs"})


def make_logistic_task(n: int = 2000, dim: int = 5, seed: int = 0,
                       scale: float = 3.0) -> BinaryTask:
    """Unit-norm features with labels drawn from a logistic model.

    Label noise keeps the regularized optimum in the interior.
    """
    rng = RngStream(seed).child("logistic")
    X = rng.standard_normal(n * dim).reshape(n, dim)
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    w_true = rng.standard_normal(dim)
    w_true *= scale / np.linalg.norm(w_true)
    p = 1.0 / (1.0 + np.exp(-(X @ w_true)))
    y = np.where(rng.uniform(n) < p, 1.0, -1.0)
    return BinaryTask(X, y, positive_class=1)


def load_mnist(data_dir) -> Split:
    data_dir = Path(data_dir)
    try:
        train = load_idx(data_dir / MNIST_FILES["train_images"], data_dir / MNIST_FILES["train_labels"])
        test = load_idx(data_dir / MNIST_FILES["test_images"], data_dir / MNIST_FILES["test_labels"])
    except FileNotFoundError as exc:
        raise FileNotFoundError(
            f"MNIST file missing: {exc}. Run `collabdp datasets fetch mnist` for download URLs "
            f"and place the four IDX files (optionally .gz) in {data_dir}") from None
    return Split(train, test, {"dataset": "mnist"})


def load_covertype(data_dir, seed: int = 0) -> Split:
    data_dir = Path(data_dir)
    try:
        raw = load_covertype_csv(data_dir / COVERTYPE_FILE)
    except FileNotFoundError:
        raise FileNotFoundError(
            f"Covertype file missing under {data_dir}. Run `collabdp datasets fetch covertype` "
            f"for the download URL and save it as {COVERTYPE_FILE}(.gz)") from None
    order = RngStream(seed).child("covertype-split").permutation(np.arange(raw.n))
    cut = min(COVERTYPE_TRAIN_SIZE, raw.n - 1)
    return Split(raw.subset(order[:cut]), raw.subset(order[cut:]), {"dataset": "covertype"})


def default_data_dir() -> Path:
    return Path(os.environ.get("COLLABDP_DATA", "data"))
