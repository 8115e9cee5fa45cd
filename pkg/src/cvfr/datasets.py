"""Datasets (synthetic letters, MNIST IDX files) and the two random attacks.

Attack A replaces a fraction p of the pixels with U[0, 1] draws; attack B adds
U[-p, p] noise to every pixel. Fractional pixel counts are rounded half-up,
so p*N = 9.8 gives 10 pixels and p*N = 24.5 gives 25.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attractors import load_patterns
from .errors import BadMagic, CountMismatch, DataError, TruncatedFile
from .rng import derive_seed, generator

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    items: np.ndarray  # (M, N) float64
    labels: np.ndarray  # (M,) int64

    def __post_init__(self):
        self.items = np.asarray(self.items, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.items.ndim != 2 or len(self.items) != len(self.labels):
            raise DataError(
                f"{len(self.items)} items vs {len(self.labels)} labels (items shape {self.items.shape})"
            )

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n(self) -> int:
        return self.items.shape[1]

    def head(self, count: int) -> "LabeledDataset":
        return LabeledDataset(self.items[:count].copy(), self.labels[:count].copy())

    def subset(self, index) -> "LabeledDataset":
        return LabeledDataset(self.items[index], self.labels[index])


def pixel_count(p: float, n: int) -> int:
    """Nearest-integer number of pixels for a fraction ``p`` of ``n`` (halves round up)."""
    return int(math.floor(p * n + 0.5))


def _replace_pixels(item: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    out = np.array(item, dtype=np.float64)
    m = pixel_count(fraction, out.size)
    if m == 0:
        return out
    idx = rng.choice(out.size, size=m, replace=False)
    out[idx] = rng.random(m)
    return out


def gen_letters(
    n_per_class: int,
    corruption_fraction: float = 0.2,
    seed: int = 0,
    templates: np.ndarray | None = None,
) -> LabeledDataset:
    """Corrupted copies of the A/B/C templates, classes in consecutive blocks.

    Item ``i`` uses the stream ``derive_seed(seed, i)``.
    """
    if not 0.0 <= corruption_fraction <= 1.0:
        raise ValueError(f"corruption fraction must lie in [0, 1], got {corruption_fraction}")
    templates = load_patterns("letters") if templates is None else np.asarray(templates, float)
    items, labels = [], []
    for cls, template in enumerate(templates):
        for j in range(n_per_class):
            i = cls * n_per_class + j
            items.append(_replace_pixels(template, corruption_fraction, generator(derive_seed(seed, i))))
            labels.append(cls)
    if not items:
        return LabeledDataset(np.zeros((0, templates.shape[1])), np.zeros(0, dtype=np.int64))
    return LabeledDataset(np.stack(items), np.array(labels))


def attack_a(item, p: float, seed: int) -> np.ndarray:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"attack A intensity must lie in [0, 1], got {p}")
    return _replace_pixels(item, p, generator(seed))


def attack_b(item, p: float, seed: int, clip: bool = False) -> np.ndarray:
    if p < 0.0:
        raise ValueError(f"attack B intensity must be non-negative, got {p}")
    out = np.array(item, dtype=np.float64)
    if p > 0.0:
        out = out + generator(seed).uniform(-p, p, size=out.shape)
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return out


def attack_dataset(
    dataset: LabeledDataset, kind: str, p: float, seed: int, clip: bool = False
) -> LabeledDataset:
    """Attack every item with its own stream ``derive_seed(seed, index)``."""
    kind = kind.upper()
    if kind not in ("A", "B"):
        raise ValueError(f"attack kind must be 'A' or 'B', got {kind!r}")
    out = np.empty_like(dataset.items)
    for i, item in enumerate(dataset.items):
        s = derive_seed(seed, i)
        out[i] = attack_a(item, p, s) if kind == "A" else attack_b(item, p, s, clip=clip)
    return LabeledDataset(out, dataset.labels.copy())


def _read_exact(buf: bytes, offset: int, size: int, path) -> bytes:
    if offset + size > len(buf):
        raise TruncatedFile(
            f"expected {size} bytes, only {len(buf) - offset} left", path=path, offset=offset
        )
    return buf[offset : offset + size]


def _read_header(path, magic: int, ndims: int):
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read IDX file: {exc.strerror}", path=path) from exc
    (found,) = struct.unpack(">I", _read_exact(buf, 0, 4, path))
    if found != magic:
        raise BadMagic(f"magic 0x{found:08x}, expected 0x{magic:08x}", path=path, offset=0)
    dims = struct.unpack(f">{ndims}I", _read_exact(buf, 4, 4 * ndims, path))
    return buf, dims, 4 + 4 * ndims


def read_idx_images(path) -> np.ndarray:
    """uint8 array of shape (count, rows, cols)."""
    buf, (count, rows, cols), offset = _read_header(path, IDX_IMAGES_MAGIC, 3)
    body = _read_exact(buf, offset, count * rows * cols, path)
    return np.frombuffer(body, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    buf, (count,), offset = _read_header(path, IDX_LABELS_MAGIC, 1)
    body = _read_exact(buf, offset, count, path)
    return np.frombuffer(body, dtype=np.uint8)


def load_mnist_idx(images_path, labels_path, limit: int | None = None) -> LabeledDataset:
    """Pixels scaled by 1/255 into [0, 1], flattened row-major."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise CountMismatch(
            f"{len(images)} images in {images_path} but {len(labels)} labels",
            path=labels_path,
            offset=4,
        )
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    items = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return LabeledDataset(items, labels.astype(np.int64))


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images (count, rows, cols) and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">2I", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def save_csv(dataset: LabeledDataset, path) -> None:
    """``label,px_1..px_N`` with shortest round-trip float formatting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"px_{i + 1}" for i in range(dataset.n)])
        for label, item in zip(dataset.labels, dataset.items):
            w.writerow([int(label)] + [repr(float(v)) for v in item])


def load_csv(path) -> LabeledDataset:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read dataset CSV: {exc.strerror}", path=path) from exc
    if not rows or rows[0][0] != "label":
        raise DataError("missing 'label,px_1..' header", path=path)
    body = rows[1:]
    try:
        labels = np.array([int(r[0]) for r in body], dtype=np.int64)
        items = np.array([[float(v) for v in r[1:]] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"malformed row: {exc}", path=path) from exc
    if len(body) == 0:
        items = np.zeros((0, len(rows[0]) - 1))
    return LabeledDataset(items, labels)
