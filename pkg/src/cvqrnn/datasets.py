"""Series generators, sliding windows and MNIST ingestion."""

from __future__ import annotations

import csv
import gzip
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FormatError

logger = logging.getLogger(__name__)

SERIES_KINDS = ("bessel", "sine", "two_sine", "triangle", "damped_cosine")
DEFAULT_RANGE = (0.0, 8 * math.pi)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

_SERIES_SWITCH = 12.0


def _j0_series(x):
    q = -0.25 * x * x
    term, total = 1.0, 1.0
    k = 0
    while True:
        k += 1
        term *= q / (k * k)
        total += term
        if abs(term) < 1e-17 and k > 2:
            return total


def _j0_asymptotic(x):
    # Hankel expansion with |a_k| = prod_{j<=k} (2j-1)^2 / (k! 8^k); for order 0
    # the odd terms enter Q with an extra minus sign (Q = -1/(8x) + ...)
    p, q = 0.0, 0.0
    a = 1.0
    prev = math.inf
    for k in range(0, 80):
        if k > 0:
            a *= (2 * k - 1) ** 2 / (8.0 * k)
        term = a / x**k
        if term > prev or term < 1e-17:
            break
        prev = term
        sign = -1.0 if (k // 2 + k) % 2 else 1.0
        if k % 2 == 0:
            p += sign * term
        else:
            q += sign * term
    chi = x - math.pi / 4
    return math.sqrt(2.0 / (math.pi * x)) * (p * math.cos(chi) - q * math.sin(chi))


def bessel_j0(x):
    """Bessel J0: power series up to |x| = 12, Hankel asymptotic expansion beyond."""
    if np.ndim(x):
        return np.array([bessel_j0(float(v)) for v in np.ravel(x)]).reshape(np.shape(x))
    ax = abs(float(x))
    if ax <= _SERIES_SWITCH:
        return _j0_series(ax)
    return _j0_asymptotic(ax)


def _series_values(kind, xs):
    if kind == "bessel":
        return bessel_j0(xs)
    if kind == "sine":
        return np.sin(xs)
    if kind == "two_sine":
        return 0.5 * np.sin(xs) + 0.5 * np.sin(2 * xs)
    if kind == "triangle":
        # period 2pi, rises from 0 to 1 at pi/2 like a sine
        return (2 / np.pi) * np.arcsin(np.sin(xs))
    if kind == "damped_cosine":
        return np.exp(-xs / 10) * np.cos(xs)
    raise ValueError(f"unknown series kind {kind!r}; expected one of {SERIES_KINDS}")


def make_windows(values, window: int):
    """Stride-1 pairs (values[i:i+T], values[i+T])."""
    values = np.asarray(values, dtype=float)
    if len(values) < window + 1:
        raise ValueError(f"need at least {window + 1} values for window {window}, got {len(values)}")
    return [(values[i : i + window].copy(), float(values[i + window])) for i in range(len(values) - window)]


def _window_arrays(values, xs, window):
    pairs = make_windows(values, window)
    inputs = np.array([p[0] for p in pairs])
    targets = np.array([p[1] for p in pairs])
    return inputs, targets, np.asarray(xs[window:], dtype=float)


@dataclass
class SeriesDataset:
    """Equidistant samples split into two halves, each windowed separately."""

    kind: str
    xs: np.ndarray
    values: np.ndarray
    window: int

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("series values must be finite")
        if len(self.values) < 2 * (self.window + 1):
            raise ValueError("series too short for two windowed halves")
        self.split = len(self.values) // 2
        s, T = self.split, self.window
        self.train_inputs, self.train_targets, self.train_target_x = _window_arrays(
            self.values[:s], self.xs[:s], T
        )
        self.test_inputs, self.test_targets, self.test_target_x = _window_arrays(
            self.values[s:], self.xs[s:], T
        )

    @property
    def train_windows(self):
        return make_windows(self.values[: self.split], self.window)

    @property
    def test_windows(self):
        return make_windows(self.values[self.split :], self.window)

    def with_values(self, values):
        return SeriesDataset(self.kind, self.xs, values, self.window)


def generate_series(kind: str, n_points: int = 200, x_range=DEFAULT_RANGE, window: int = 4) -> SeriesDataset:
    if kind not in SERIES_KINDS:
        raise ValueError(f"unknown series kind {kind!r}; expected one of {SERIES_KINDS}")
    if n_points < 2 * window:
        raise ValueError("n_points must be at least twice the window")
    xs = np.linspace(x_range[0], x_range[1], n_points)
    return SeriesDataset(kind, xs, _series_values(kind, xs), window)


def write_series_csv(path, dataset: SeriesDataset):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "value"])
        for x, v in zip(dataset.xs, dataset.values):
            w.writerow([repr(float(x)), repr(float(v))])


def repeat_last_baseline(window) -> float:
    window = np.asarray(window, dtype=float).ravel()
    if window.size == 0:
        raise ValueError("repeat-last baseline needs a nonempty window")
    return float(window[-1])


# -- IDX / MNIST ---------------------------------------------------------------


def _read_bytes(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path, expected_magic: Optional[int] = None) -> np.ndarray:
    """Parse an unsigned-byte IDX file (plain or gzip-compressed)."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if expected_magic is not None and magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    if magic >> 8 != 0x08:
        raise FormatError(f"{path}: unsupported IDX data type in magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise FormatError(f"{path}: truncated data ({len(raw) - header} of {size} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def write_idx(path, array, compress: bool = False):
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("only unsigned-byte IDX files are supported")
    payload = struct.pack(">I", 0x0800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    payload += array.tobytes()
    Path(path).write_bytes(gzip.compress(payload, mtime=0) if compress else payload)


def downsample(image, factor: int = 4) -> np.ndarray:
    """Non-overlapping mean pooling of a square image."""
    h, w = image.shape
    return image.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


@dataclass
class ImageDataset:
    """7x7 pixel sequences with labels 0 (digit 3) and 1 (digit 6)."""

    sequences: np.ndarray
    labels: np.ndarray
    train_fraction: float = 0.8
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.sequences = np.asarray(self.sequences, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.sequences.ndim != 2 or self.sequences.shape[1] != 49:
            raise ValueError("every sequence must have 49 pixels")
        if not set(np.unique(self.labels)) <= {0, 1}:
            raise ValueError("labels must be 0 or 1")
        self.split = int(round(self.train_fraction * len(self.labels)))

    @property
    def train_inputs(self):
        return self.sequences[: self.split]

    @property
    def train_targets(self):
        return self.labels[: self.split]

    @property
    def test_inputs(self):
        return self.sequences[self.split :]

    @property
    def test_targets(self):
        return self.labels[self.split :]

    @property
    def class_counts(self) -> dict:
        return {"3": int(np.sum(self.labels == 0)), "6": int(np.sum(self.labels == 1))}


def load_mnist(images_path, labels_path, n_images: int = 1000) -> ImageDataset:
    """First ``n_images`` digits 3 and 6 in file order, normalized and pooled to 7x7."""
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.ndim != 3 or labels.ndim != 1 or images.shape[0] != labels.shape[0]:
        raise FormatError("image and label files do not describe the same number of items")
    if images.shape[1:] != (28, 28):
        raise FormatError(f"expected 28x28 images, got {images.shape[1:]}")
    idx = np.flatnonzero((labels == 3) | (labels == 6))[:n_images]
    warnings = []
    if len(idx) < n_images:
        msg = f"only {len(idx)} images of digits 3 and 6 available (requested {n_images})"
        logger.warning(msg)
        warnings.append(msg)
    seqs = np.array([downsample(images[i].astype(float) / 255.0).ravel() for i in idx]).reshape(-1, 49)
    return ImageDataset(seqs, (labels[idx] == 6).astype(int), warnings=warnings)
