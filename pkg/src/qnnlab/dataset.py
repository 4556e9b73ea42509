"""MNIST loading and amplitude encoding.

Pipeline per image: bytes / 255 -> 2x2 max-pool (28x28 -> 14x14) -> row-major
flatten into amplitudes 0..195 -> zero-pad to 256 -> L2 normalize.
"""
from __future__ import annotations

import gzip
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, DomainError, EncodingError, ParseError, ShapeError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
N_AMPLITUDES = 256
SPLITS = {"0-1": 2, "0-3": 4, "0-9": 10}

_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True, eq=False)
class EncodedSet:
    """Encoded samples: ``amplitudes`` is ``(N, 256)``, ``labels`` is ``(N,)``."""

    amplitudes: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, idx) -> "EncodedSet":
        return EncodedSet(self.amplitudes[idx], self.labels[idx])


def _header(data: bytes, magic: int, ndim: int, what: str) -> tuple[int, ...]:
    if len(data) < 4 + 4 * ndim:
        raise ParseError(f"{what}: file too short for IDX header")
    found = int.from_bytes(data[:4], "big")
    if found != magic:
        raise ParseError(f"{what}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    return tuple(int.from_bytes(data[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim))


def parse_idx(image_bytes: bytes, label_bytes: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Decode IDX image/label payloads into ``(N, 28, 28)`` floats in [0, 1] and ``(N,)`` ints."""
    count, rows, cols = _header(image_bytes, IMAGE_MAGIC, 3, "images")
    (n_labels,) = _header(label_bytes, LABEL_MAGIC, 1, "labels")
    need = 16 + count * rows * cols
    if len(image_bytes) < need:
        raise ParseError(f"images: truncated payload ({len(image_bytes)} of {need} bytes)")
    if len(label_bytes) < 8 + n_labels:
        raise ParseError(f"labels: truncated payload ({len(label_bytes)} of {8 + n_labels} bytes)")
    if count != n_labels:
        raise ConsistencyError(f"{count} images but {n_labels} labels")
    pixels = np.frombuffer(image_bytes, dtype=np.uint8, count=count * rows * cols, offset=16)
    labels = np.frombuffer(label_bytes, dtype=np.uint8, count=n_labels, offset=8)
    return pixels.reshape(count, rows, cols) / 255.0, labels.astype(np.int64)


def _read(path: Path) -> bytes:
    for candidate in (path, path.with_name(path.name + ".gz")):
        if candidate.exists():
            raw = candidate.read_bytes()
            return gzip.decompress(raw) if raw[:2] == b"\x1f\x8b" else raw
    raise FileNotFoundError(f"missing MNIST file {path} (or {path.name}.gz)")


def load_mnist(directory, part: str = "train") -> tuple[np.ndarray, np.ndarray]:
    images, labels = _FILES[part]
    d = Path(directory)
    return parse_idx(_read(d / images), _read(d / labels))


def max_pool_2x2(image: np.ndarray) -> np.ndarray:
    """2x2 max-pool with stride 2; works on one ``28x28`` image or a ``(N, 28, 28)`` stack."""
    image = np.asarray(image, dtype=float)
    if image.shape[-2:] != (28, 28):
        raise ShapeError(f"expected 28x28 image(s), got {image.shape}")
    blocks = image.reshape(image.shape[:-2] + (14, 2, 14, 2))
    return blocks.max(axis=(-3, -1))


def encode_amplitudes(pooled: np.ndarray) -> np.ndarray:
    """Flatten 14x14 image(s) row-major into 256 unit-norm amplitudes, zeros after index 195."""
    pooled = np.asarray(pooled, dtype=float)
    if pooled.shape[-2:] != (14, 14):
        raise ShapeError(f"expected 14x14 image(s), got {pooled.shape}")
    flat = pooled.reshape(pooled.shape[:-2] + (196,))
    if np.any(flat < 0):
        raise EncodingError("pixel intensities must be non-negative")
    norms = np.linalg.norm(flat, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise EncodingError("cannot amplitude-encode an all-zero image")
    out = np.zeros(flat.shape[:-1] + (N_AMPLITUDES,))
    out[..., :196] = flat / norms
    return out


def split_classes(split: str) -> tuple[int, ...]:
    if split not in SPLITS:
        raise DomainError(f"unknown split {split!r}; choose from {sorted(SPLITS)}")
    return tuple(range(SPLITS[split]))


def filter_split(images: np.ndarray, labels: np.ndarray, split: str) -> tuple[np.ndarray, np.ndarray]:
    """Keep digits ``0..k-1`` of the split; order is preserved and labels stay as-is."""
    classes = split_classes(split)
    labels = np.asarray(labels)
    keep = labels < len(classes)
    return np.asarray(images)[keep], labels[keep]


def encode_images(images: np.ndarray, labels: np.ndarray) -> EncodedSet:
    return EncodedSet(encode_amplitudes(max_pool_2x2(images)), np.asarray(labels, dtype=np.int64))


def load_encoded(directory, part: str, split: str, limit: int | None = None) -> EncodedSet:
    """Filtered, encoded MNIST part; ``limit`` keeps the first ``limit`` samples."""
    images, labels = load_mnist(directory, part)
    images, labels = filter_split(images, labels, split)
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return encode_images(images, labels)


def amplitudes_to_image(probs: np.ndarray) -> np.ndarray:
    """First 196 outcome probabilities as a 14x14 row-major grid."""
    return np.asarray(probs)[:196].reshape(14, 14)
