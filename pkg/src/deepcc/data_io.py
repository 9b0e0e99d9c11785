"""Dataset ingestion (IDX images, numeric CSV) and seeded mini-batch scheduling."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, FormatError
from .numerics import Array, as_matrix, check_finite, make_rng

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
GZIP_MAGIC = b"\x1f\x8b"


@dataclass
class Dataset:
    """Feature matrix with optional integer labels."""

    features: Array
    labels: np.ndarray | None = None
    source: str = ""

    def __post_init__(self):
        self.features = as_matrix(self.features)
        check_finite("dataset features", self.features)
        if self.features.shape[0] < 1 or self.features.shape[1] < 1:
            raise ValueError("a dataset needs at least one row and one column")
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.int64).reshape(-1)
            if self.labels.shape[0] != self.features.shape[0]:
                raise ConsistencyError(
                    f"{self.labels.shape[0]} labels for {self.features.shape[0]} instances"
                )

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.features[idx], labels, self.source)


def _read_file(path: str) -> bytes:
    with open(path, "rb") as f:
        head = f.read(2)
        rest = f.read()
    raw = head + rest
    if head == GZIP_MAGIC:
        return gzip.decompress(raw)
    return raw


def _read_be32(buf: bytes, offset: int, path: str) -> int:
    if offset + 4 > len(buf):
        raise FormatError(f"{path}: truncated header at byte offset {offset}")
    return struct.unpack_from(">I", buf, offset)[0]


def _load_idx_images(path: str) -> np.ndarray:
    buf = _read_file(path)
    magic = _read_be32(buf, 0, path)
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"{path}: bad image magic 0x{magic:08x} at byte offset 0")
    count = _read_be32(buf, 4, path)
    rows = _read_be32(buf, 8, path)
    cols = _read_be32(buf, 12, path)
    expected = 16 + count * rows * cols
    if len(buf) < expected:
        raise FormatError(f"{path}: truncated pixel data at byte offset {len(buf)} (expected {expected} bytes)")
    pixels = np.frombuffer(buf, dtype=np.uint8, count=count * rows * cols, offset=16)
    return pixels.reshape(count, rows * cols)


def _load_idx_labels(path: str) -> np.ndarray:
    buf = _read_file(path)
    magic = _read_be32(buf, 0, path)
    if magic != IDX_LABEL_MAGIC:
        raise FormatError(f"{path}: bad label magic 0x{magic:08x} at byte offset 0")
    count = _read_be32(buf, 4, path)
    expected = 8 + count
    if len(buf) < expected:
        raise FormatError(f"{path}: truncated label data at byte offset {len(buf)} (expected {expected} bytes)")
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=8).astype(np.int64)


def load_idx(images_path: str, labels_path: str | None = None) -> Dataset:
    """Load an IDX image file (optionally gzipped) and scale pixels to [0, 1]."""
    pixels = _load_idx_images(images_path)
    labels = None
    if labels_path is not None:
        labels = _load_idx_labels(labels_path)
        if labels.shape[0] != pixels.shape[0]:
            raise ConsistencyError(
                f"{labels.shape[0]} labels in {labels_path} for {pixels.shape[0]} images in {images_path}"
            )
    features = pixels.astype(np.float64) / 255.0
    return Dataset(features, labels, source=images_path)


def write_idx_images(path: str, images: np.ndarray, compress: bool = False) -> None:
    """Write uint8 images of shape (n, rows, cols) in IDX format."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError("images must have shape (n, rows, cols)")
    header = struct.pack(">IIII", IDX_IMAGE_MAGIC, *images.shape)
    payload = header + images.tobytes()
    opener = gzip.open if compress else open
    with opener(path, "wb") as f:
        f.write(payload)


def write_idx_labels(path: str, labels, compress: bool = False) -> None:
    labels = np.ascontiguousarray(labels, dtype=np.uint8).reshape(-1)
    payload = struct.pack(">II", IDX_LABEL_MAGIC, labels.shape[0]) + labels.tobytes()
    opener = gzip.open if compress else open
    with opener(path, "wb") as f:
        f.write(payload)


def load_csv(path: str, has_labels: bool = False) -> Dataset:
    """Load a rectangular numeric CSV; labels, when flagged, are the last column."""
    rows: list[list[float]] = []
    with open(path, "r", newline="") as f:
        for lineno, record in enumerate(csv.reader(f), start=1):
            if not record or (len(record) == 1 and not record[0].strip()):
                continue
            try:
                rows.append([float(cell) for cell in record])
            except ValueError:
                raise FormatError(f"{path}: non-numeric cell in row {lineno}") from None
            if len(rows) > 1 and len(rows[-1]) != len(rows[0]):
                raise FormatError(
                    f"{path}: row {lineno} has {len(rows[-1])} cells, expected {len(rows[0])}"
                )
    if not rows:
        raise FormatError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=np.float64)
    if has_labels:
        if data.shape[1] < 2:
            raise FormatError(f"{path}: label column requires at least two columns")
        labels = data[:, -1]
        if not np.all(labels == np.round(labels)):
            raise FormatError(f"{path}: label column contains non-integer values")
        return Dataset(data[:, :-1], labels.astype(np.int64), source=path)
    return Dataset(data, None, source=path)


def load_labels(path: str) -> np.ndarray:
    """Load a label file: one integer per line (blank lines and # comments skipped)."""
    values = []
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            try:
                values.append(int(text))
            except ValueError:
                raise FormatError(f"{path}: line {lineno} is not an integer") from None
    if not values:
        raise FormatError(f"{path}: no labels")
    return np.asarray(values, dtype=np.int64)


def write_labels(path: str, labels) -> None:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    with open(path, "w") as f:
        for v in labels:
            f.write(f"{int(v)}\n")


@dataclass
class BatchSchedule:
    """A seeded permutation of [0, n) chunked into batches."""

    batches: list[np.ndarray]
    batch_size: int
    epoch_seed: int


def make_schedule(n: int, batch_size: int, rng: np.random.Generator) -> BatchSchedule:
    """Partition [0, n) into random batches; the last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    if batch_size > n:
        raise ValueError(f"batch_size {batch_size} exceeds dataset size {n}")
    epoch_seed = int(rng.integers(0, 2**63))
    perm = make_rng(epoch_seed).permutation(n)
    batches = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    return BatchSchedule(batches=batches, batch_size=batch_size, epoch_seed=epoch_seed)
