"""MNIST IDX ingestion (plain or gzipped files)."""

from __future__ import annotations

import gzip
import hashlib
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ppnas.errors import FormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
BUNDLED = Path(__file__).resolve().parents[2] / "data" / "mnist5k"


@dataclass
class Dataset:
    """u8 images (n, h, w), integer labels, and named index splits."""

    images: np.ndarray
    labels: np.ndarray
    n_classes: int = 10
    splits: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.images.ndim != 3:
            raise FormatError(f"images must be (n, h, w), got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise FormatError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and int(self.labels.max()) >= self.n_classes:
            raise FormatError(f"label {int(self.labels.max())} outside {self.n_classes} classes")

    def __len__(self) -> int:
        return len(self.labels)

    def checksum(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.images).tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype=np.uint8).tobytes())
        return h.hexdigest()

    def features(self) -> np.ndarray:
        """Flattened float images in [0, 1]."""
        return self.images.reshape(len(self), -1).astype(np.float64) / 255.0

    def one_hot(self, classes: np.ndarray | None = None) -> np.ndarray:
        classes = np.arange(self.n_classes) if classes is None else np.asarray(classes)
        return (self.labels[:, None] == classes[None, :]).astype(np.float64)

    def select(self, classes) -> "Dataset":
        """Keep only ``classes``, relabelled 0..k-1 in the given order."""
        classes = list(classes)
        keep = np.isin(self.labels, classes)
        remap = np.zeros(max(classes) + 1, dtype=np.int64)
        remap[classes] = np.arange(len(classes))
        return Dataset(self.images[keep], remap[self.labels[keep]], len(classes))

    def take(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.n_classes)


def _read(path) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise FormatError(f"{path}: truncated gzip stream ({exc})") from exc
    return raw


def parse_idx(raw: bytes, magic: int, subset: int | None = None, name: str = "<idx>") -> np.ndarray:
    """Parse an IDX u8 tensor; errors name the offending byte offset."""
    if len(raw) < 4:
        raise FormatError(f"{name}: file too short for magic at offset 0")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise FormatError(f"{name}: bad magic 0x{got:08x} at offset 0 (expected 0x{magic:08x})")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise FormatError(f"{name}: dimension header truncated at offset {len(raw)} (needs {head} bytes)")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    n = dims[0] if subset is None else min(dims[0], int(subset))
    per = int(np.prod(dims[1:], dtype=np.int64))
    need = head + dims[0] * per
    if len(raw) < need:
        raise FormatError(f"{name}: payload truncated at offset {len(raw)} (expected {need} bytes)")
    data = np.frombuffer(raw, dtype=np.uint8, count=n * per, offset=head)
    return data.reshape((n,) + tuple(dims[1:]))


def downsample(images: np.ndarray, side: int) -> np.ndarray:
    """Average-pool square images down to ``side`` (must divide the input side)."""
    h = images.shape[-1]
    if h == side:
        return images
    if h % side:
        raise FormatError(f"cannot downsample {h}x{h} to {side}x{side}")
    k = h // side
    pooled = images.reshape(len(images), side, k, side, k).astype(np.float64).mean(axis=(2, 4))
    return np.rint(pooled).astype(np.uint8)


def ingest_mnist(images_path, labels_path, *, subset: int | None = None, downsample_to: int | None = None) -> Dataset:
    """Load an IDX image/label pair; ``subset`` keeps the first n records."""
    images = parse_idx(_read(images_path), IMAGE_MAGIC, subset, str(images_path))
    labels = parse_idx(_read(labels_path), LABEL_MAGIC, subset, str(labels_path))
    if len(images) != len(labels):
        raise FormatError(f"{images_path}: {len(images)} images but {len(labels)} labels")
    if downsample_to:
        images = downsample(images, downsample_to)
    return Dataset(np.ascontiguousarray(images), labels.astype(np.int64))


def find_mnist(directory=None, split: str = "train") -> tuple[Path, Path]:
    """Locate IDX files: ``directory``, then $MNIST_DIR, then the bundled 5k sample."""
    prefix = "t10k" if split == "test" else "train"
    for d in (directory, os.environ.get("MNIST_DIR")):
        if not d:
            continue
        d = Path(d)
        for ext in ("", ".gz"):
            img = d / f"{prefix}-images-idx3-ubyte{ext}"
            lab = d / f"{prefix}-labels-idx1-ubyte{ext}"
            if img.exists() and lab.exists():
                return img, lab
    return BUNDLED / "images-idx3-ubyte.gz", BUNDLED / "labels-idx1-ubyte.gz"


def load_default(subset: int | None = None, downsample_to: int | None = None, split: str = "train") -> Dataset:
    return ingest_mnist(*find_mnist(split=split), subset=subset, downsample_to=downsample_to)


def write_idx(path, arr: np.ndarray, magic: int) -> None:
    """Write a u8 tensor in IDX format (test fixtures, subset exports)."""
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    head = struct.pack(">I", magic) + struct.pack(f">{arr.ndim}I", *arr.shape)
    data = head + arr.tobytes()
    path = Path(path)
    path.write_bytes(gzip.compress(data, mtime=0) if path.suffix == ".gz" else data)
