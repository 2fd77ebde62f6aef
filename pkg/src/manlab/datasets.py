"""Small-image dataset loaders (MNIST IDX, CIFAR-10 binary) and a synthetic fixture.

Pixels are scaled to [0, 1] and fed to models as-is, so perturbation norms
are measured in the same units the models see.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    num_classes: int
    channels: int
    height: int
    width: int
    train_size: int
    test_size: int

    @property
    def dim(self) -> int:
        """Input dimensionality N = C * H * W."""
        return self.channels * self.height * self.width

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)


@dataclass
class Split:
    images: np.ndarray  # (n, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (n,) int64

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index) -> "Split":
        return Split(self.images[index], self.labels[index])


@dataclass
class Dataset:
    spec: DatasetSpec
    train: Split
    test: Split


def _make_spec(name, k, train: Split, test: Split) -> DatasetSpec:
    c, h, w = train.images.shape[1:]
    return DatasetSpec(name, k, c, h, w, len(train), len(test))


# -- MNIST IDX ------------------------------------------------------------------

def _read_bytes(path: Path) -> bytes:
    if path.exists():
        data = path.read_bytes()
    elif path.with_name(path.name + ".gz").exists():
        data = path.with_name(path.name + ".gz").read_bytes()
    else:
        raise FileNotFoundError(f"{path} (or {path.name}.gz) not found")
    return gzip.decompress(data) if data[:2] == b"\x1f\x8b" else data


def parse_idx_images(raw: bytes, source: str = "<idx>") -> np.ndarray:
    if len(raw) < 16:
        raise DatasetFormatError(f"{source}: header truncated at offset {len(raw)}")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DatasetFormatError(f"{source}: bad magic 0x{magic:08x} at offset 0 (want 0x{IDX_IMAGES_MAGIC:08x})")
    expected = 16 + count * rows * cols
    if len(raw) != expected:
        raise DatasetFormatError(f"{source}: length mismatch at offset {len(raw)}, header implies {expected} bytes")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, 1, rows, cols)
    return pixels


def parse_idx_labels(raw: bytes, source: str = "<idx>") -> np.ndarray:
    if len(raw) < 8:
        raise DatasetFormatError(f"{source}: header truncated at offset {len(raw)}")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DatasetFormatError(f"{source}: bad magic 0x{magic:08x} at offset 0 (want 0x{IDX_LABELS_MAGIC:08x})")
    if len(raw) != 8 + count:
        raise DatasetFormatError(f"{source}: length mismatch at offset {len(raw)}, header implies {8 + count} bytes")
    return np.frombuffer(raw, dtype=np.uint8, offset=8)


def encode_idx_images(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels, dtype=np.uint8)
    n, rows, cols = pixels.shape[0], pixels.shape[-2], pixels.shape[-1]
    return struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + pixels.tobytes()


def encode_idx_labels(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes()


def to_bytes(images: np.ndarray) -> np.ndarray:
    """Inverse of the loader scaling: [0, 1] floats back to uint8."""
    return np.rint(np.clip(images, 0, 1) * 255).astype(np.uint8)


def write_mnist(path: str | os.PathLike, train: Split, test: Split) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for tag, split in (("train", train), ("t10k", test)):
        (path / f"{tag}-images-idx3-ubyte").write_bytes(encode_idx_images(to_bytes(split.images)))
        (path / f"{tag}-labels-idx1-ubyte").write_bytes(encode_idx_labels(split.labels))


def _mnist_split(path: Path, tag: str) -> Split:
    img_path = path / f"{tag}-images-idx3-ubyte"
    lbl_path = path / f"{tag}-labels-idx1-ubyte"
    pixels = parse_idx_images(_read_bytes(img_path), str(img_path))
    labels = parse_idx_labels(_read_bytes(lbl_path), str(lbl_path))
    if len(pixels) != len(labels):
        raise DatasetFormatError(f"{img_path}: {len(pixels)} images but {lbl_path.name} has {len(labels)} labels")
    if labels.size and labels.max() > 9:
        raise DatasetFormatError(f"{lbl_path}: label {labels.max()} at offset {8 + int(labels.argmax())} out of range")
    return Split((pixels / np.float32(255)).astype(np.float32), labels.astype(np.int64))


def load_mnist(path: str | os.PathLike) -> Dataset:
    """Read ``{train,t10k}-{images-idx3,labels-idx1}-ubyte`` (optionally gzipped)."""
    path = Path(path)
    train = _mnist_split(path, "train")
    test = _mnist_split(path, "t10k")
    return Dataset(_make_spec("mnist", 10, train, test), train, test)


# -- CIFAR-10 binary ------------------------------------------------------------

def parse_cifar_batch(raw: bytes, source: str = "<cifar>") -> Split:
    if len(raw) % CIFAR_RECORD:
        raise DatasetFormatError(
            f"{source}: {len(raw)} bytes is not a whole number of {CIFAR_RECORD}-byte records "
            f"(partial record at offset {len(raw) - len(raw) % CIFAR_RECORD})"
        )
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        bad = int(labels.argmax())
        raise DatasetFormatError(f"{source}: label {labels[bad]} at offset {bad * CIFAR_RECORD} out of range")
    images = (rec[:, 1:].reshape(-1, 3, 32, 32) / np.float32(255)).astype(np.float32)
    return Split(images, labels)


def encode_cifar_batch(split: Split) -> bytes:
    pix = to_bytes(split.images).reshape(len(split), -1)
    return np.concatenate([split.labels.astype(np.uint8)[:, None], pix], axis=1).tobytes()


def load_cifar10(path: str | os.PathLike) -> Dataset:
    """Read ``data_batch_{1..5}.bin`` and ``test_batch.bin``; missing train batches are skipped."""
    path = Path(path)
    train_files = sorted(path.glob("data_batch_*.bin"))
    if not train_files:
        raise FileNotFoundError(f"no data_batch_*.bin under {path}")
    parts = [parse_cifar_batch(f.read_bytes(), str(f)) for f in train_files]
    train = Split(np.concatenate([p.images for p in parts]), np.concatenate([p.labels for p in parts]))
    test_file = path / "test_batch.bin"
    test = parse_cifar_batch(test_file.read_bytes(), str(test_file))
    return Dataset(_make_spec("cifar10", 10, train, test), train, test)


# -- synthetic fixture ------------------------------------------------------------

def make_synthetic(
    num_classes: int = 10,
    shape: tuple[int, int, int] = (1, 28, 28),
    train_size: int = 1000,
    test_size: int = 200,
    seed: int = 0,
) -> Dataset:
    """Class-dependent blob patterns plus noise; learnable in a few hundred steps.

    Each class owns a fixed random low-frequency template; samples are the
    template, randomly shifted by up to 2 pixels, plus Gaussian noise.
    """
    rng = np.random.default_rng(seed)
    c, h, w = shape
    coarse = rng.random((num_classes, c, max(h // 4, 1), max(w // 4, 1)))
    templates = coarse.repeat(4, axis=2).repeat(4, axis=3)[:, :, :h, :w]
    templates = np.pad(templates, ((0, 0), (0, 0), (0, h - templates.shape[2]), (0, w - templates.shape[3])), mode="edge")

    def draw(n):
        labels = rng.integers(0, num_classes, n)
        imgs = templates[labels].copy()
        for i in range(n):
            dy, dx = rng.integers(-2, 3, 2)
            imgs[i] = np.roll(imgs[i], (dy, dx), axis=(1, 2))
        imgs += 0.1 * rng.standard_normal(imgs.shape)
        return Split(np.clip(imgs, 0, 1).astype(np.float32), labels.astype(np.int64))

    train, test = draw(train_size), draw(test_size)
    return Dataset(_make_spec("synthetic", num_classes, train, test), train, test)


def load(name: str, data_dir: str | os.PathLike | None = None, **kwargs) -> Dataset:
    if name == "mnist":
        return load_mnist(_need_dir(name, data_dir))
    if name == "cifar10":
        return load_cifar10(_need_dir(name, data_dir))
    if name == "synthetic":
        return make_synthetic(**kwargs)
    raise ValueError(f"unknown dataset {name!r} (expected mnist, cifar10 or synthetic)")


def _need_dir(name, data_dir):
    if data_dir is None:
        raise ValueError(f"dataset {name} needs a data directory")
    return data_dir


# -- batching -------------------------------------------------------------------

def batch_iterator(
    split: Split, batch_size: int, shuffle_seed: int | None = None
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """One pass over ``split``; the last batch may be short.

    With a seed the order is a seeded permutation, otherwise file order.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(split)
    if n == 0:
        raise ValueError("cannot iterate over an empty dataset")
    order = np.arange(n) if shuffle_seed is None else np.random.default_rng(shuffle_seed).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield split.images[idx], split.labels[idx]


def stream(split: Split, batch_size: int, seed: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Endless epochs, reshuffled each epoch from a seed sequence."""
    rng = np.random.default_rng(seed)
    while True:
        yield from batch_iterator(split, batch_size, int(rng.integers(2**31)))
