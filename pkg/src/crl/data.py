"""Datasets: Gaussian blobs, IDX (MNIST) and CSV files, seeded batching."""
from __future__ import annotations

import csv
import logging
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049


def substream(seed: int, name: str, *index: int) -> np.random.Generator:
    """Independent generator for a named purpose ("init", "shuffle", "blobs", "pool", ...)."""
    key = (zlib.crc32(name.encode()),) + tuple(int(i) for i in index)
    return np.random.default_rng(np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=key))


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    ids: np.ndarray = None  # type: ignore[assignment]
    split: str = "train"
    num_classes: int | None = None
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            self.inputs = self.inputs.reshape(len(self.labels), -1)
        if self.ids is None:
            self.ids = np.arange(len(self.labels), dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if not (len(self.inputs) == len(self.labels) == len(self.ids)):
            raise ValueError("inputs, labels and ids must have the same length")
        if len(np.unique(self.ids)) != len(self.ids):
            raise ValueError("sample ids must be unique")
        if self.num_classes is None:
            self.num_classes = int(self.labels.max()) + 1 if len(self.labels) else 0
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, positions, split: str | None = None) -> "Dataset":
        positions = np.asarray(positions, dtype=np.int64)
        return Dataset(self.inputs[positions], self.labels[positions], self.ids[positions],
                       split or self.split, self.num_classes)

    def by_ids(self, ids, split: str | None = None) -> "Dataset":
        lookup = {int(i): p for p, i in enumerate(self.ids)}
        return self.subset([lookup[int(i)] for i in ids], split)

    def translated(self, offset: float, split: str = "ood") -> "Dataset":
        """Copy with every coordinate shifted by ``offset``; used as the toy OOD set."""
        return replace(self, inputs=self.inputs + offset, split=split, notes=list(self.notes))


@dataclass
class BlobSpec:
    num_classes: int = 4
    dim: int = 2
    per_class: int = 500
    means: np.ndarray | None = None
    std: float = 1.0
    overlap_noise: float = 0.0
    seed: int = 0
    radius: float = 3.0

    def __post_init__(self):
        if not 0.0 <= self.overlap_noise < 0.5:
            raise ValueError("overlap_noise must lie in [0, 0.5)")
        if self.means is None:
            self.means = ring_means(self.num_classes, self.dim, self.radius)
        self.means = np.asarray(self.means, dtype=np.float64)
        if self.means.shape != (self.num_classes, self.dim):
            raise ValueError(f"means must have shape ({self.num_classes}, {self.dim}), got {self.means.shape}")


def ring_means(num_classes: int, dim: int, radius: float) -> np.ndarray:
    """Class means evenly spaced on a circle in the first two coordinates."""
    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    means = np.zeros((num_classes, dim))
    means[:, 0] = radius * np.cos(angles)
    if dim > 1:
        means[:, 1] = radius * np.sin(angles)
    return means


def gen_blobs(spec: BlobSpec, split: str = "train") -> Dataset:
    rng = substream(spec.seed, "blobs")
    k, n = spec.num_classes, spec.per_class
    labels = np.repeat(np.arange(k), n)
    inputs = spec.means[labels] + spec.std * rng.standard_normal((k * n, spec.dim))
    n_flip = int(round(spec.overlap_noise * k * n))
    if n_flip:
        flip = rng.choice(k * n, size=n_flip, replace=False)
        # shift by 1..k-1 so the new label always differs
        labels = labels.copy()
        labels[flip] = (labels[flip] + rng.integers(1, k, size=n_flip)) % k
    return Dataset(inputs, labels, split=split, num_classes=k)


def batch_schedule(n: int, batch_size: int, epoch: int, seed: int) -> list[np.ndarray]:
    if batch_size < 1:
        raise ValueError("batch size must be at least 1")
    perm = substream(seed, "shuffle", epoch).permutation(n)
    return [perm[s:s + batch_size] for s in range(0, n, batch_size)]


class IdxFormatError(ValueError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: byte offset {offset}: {message}")
        self.offset = offset


def _read_idx(path, magic: int, ndim: int) -> tuple[tuple[int, ...], bytes]:
    raw = Path(path).read_bytes()
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise IdxFormatError(path, 0, "file too short for magic number")
    (found,) = struct.unpack(">i", raw[:4])
    if found != magic:
        raise IdxFormatError(path, 0, f"bad magic number {found}, expected {magic}")
    if len(raw) < header:
        raise IdxFormatError(path, len(raw), f"header truncated, need {header} bytes")
    dims = struct.unpack(f">{ndim}i", raw[4:header])
    need = int(np.prod(dims))
    payload = raw[header:]
    if len(payload) < need:
        raise IdxFormatError(path, header + len(payload), f"payload truncated: {len(payload)} of {need} bytes")
    if len(payload) > need:
        raise IdxFormatError(path, header + need, f"{len(payload) - need} trailing bytes after payload")
    return dims, payload


def load_idx(images_path, labels_path, split: str = "train", num_classes: int | None = None) -> Dataset:
    """Read an IDX image/label file pair; pixels are scaled to [0, 1]."""
    (n_img, rows, cols), pix = _read_idx(images_path, IDX_IMAGE_MAGIC, 3)
    (n_lab,), lab = _read_idx(labels_path, IDX_LABEL_MAGIC, 1)
    if n_img != n_lab:
        raise IdxFormatError(labels_path, 4, f"label count {n_lab} does not match image count {n_img}")
    inputs = np.frombuffer(pix, dtype=np.uint8).reshape(n_img, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(lab, dtype=np.uint8).astype(np.int64)
    ds = Dataset(inputs, labels, split=split, num_classes=num_classes if num_classes else (10 if n_img == 0 else None))
    if n_img == 0:
        ds.notes.append("empty IDX dataset")
        log.warning("IDX file %s contains zero images", images_path)
    return ds


def write_idx(ds: Dataset, images_path, labels_path, shape: tuple[int, int] | None = None) -> None:
    """Write pixels (rounded to multiples of 1/255) and labels as IDX files."""
    if shape is None:
        side = int(round(np.sqrt(ds.dim)))
        shape = (side, ds.dim // side) if side and side * (ds.dim // side) == ds.dim else (1, ds.dim)
    pix = np.clip(np.rint(ds.inputs * 255.0), 0, 255).astype(np.uint8)
    Path(images_path).write_bytes(struct.pack(">4i", IDX_IMAGE_MAGIC, len(ds), *shape) + pix.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2i", IDX_LABEL_MAGIC, len(ds)) + ds.labels.astype(np.uint8).tobytes())


def load_csv(path, split: str = "train", num_classes: int | None = None) -> Dataset:
    """Read ``label,x1,...,xd`` rows (with a header line)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "label":
            raise ValueError(f"{path}: line 1: expected header starting with 'label'")
        labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                labels.append(int(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
    inputs = np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)
    return Dataset(inputs, np.array(labels, dtype=np.int64), split=split, num_classes=num_classes)


def write_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"x{j + 1}" for j in range(ds.dim)])
        for y, x in zip(ds.labels, ds.inputs):
            w.writerow([int(y)] + [repr(float(v)) for v in x])
