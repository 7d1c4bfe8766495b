"""Datasets: IDX files, synthetic clusters, scaling, one-hot targets, CSV tables."""

from __future__ import annotations

import csv
import io
import os
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BadMagic",
    "Dataset",
    "DimensionOverflow",
    "IDXError",
    "TruncatedFile",
    "load_idx_images",
    "load_idx_labels",
    "normalize",
    "one_hot",
    "parse_idx",
    "synth_dataset",
    "synth_split",
    "write_csv",
    "write_idx",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
# Refuse headers declaring more payload bytes than this.
MAX_IDX_ITEMS = 1 << 34


class IDXError(ValueError):
    def __init__(self, message, offset, path=None):
        self.offset = offset
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (byte offset {offset})")


class BadMagic(IDXError):
    pass


class TruncatedFile(IDXError):
    pass


class DimensionOverflow(IDXError):
    pass


def parse_idx(buf, expect_magic=None, path=None):
    """Parse an unsigned-byte IDX payload into an array of its declared shape."""
    buf = memoryview(buf)
    if len(buf) < 4:
        raise TruncatedFile("file ends inside the magic number", len(buf), path)
    magic = struct.unpack(">I", buf[:4])[0]
    zero, dtype, ndim = magic >> 16, (magic >> 8) & 0xFF, magic & 0xFF
    if zero != 0 or dtype != 0x08 or ndim == 0:
        raise BadMagic(f"unsupported IDX magic 0x{magic:08x}", 0, path)
    if expect_magic is not None and magic != expect_magic:
        raise BadMagic(f"expected magic 0x{expect_magic:08x}, found 0x{magic:08x}", 0, path)
    header_end = 4 + 4 * ndim
    if len(buf) < header_end:
        raise TruncatedFile("file ends inside the dimension table", len(buf), path)
    dims = struct.unpack(f">{ndim}I", buf[4:header_end])
    total = 1
    for i, d in enumerate(dims):
        total *= d
        if total > MAX_IDX_ITEMS:
            raise DimensionOverflow(f"declared size exceeds {MAX_IDX_ITEMS} items", 4 + 4 * i, path)
    if len(buf) < header_end + total:
        raise TruncatedFile(f"expected {total} data bytes, found {len(buf) - header_end}", len(buf), path)
    data = np.frombuffer(buf, dtype=np.uint8, count=total, offset=header_end)
    return data.reshape(dims)


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def load_idx_images(path, scale=1.0 / 255.0):
    """``l x (rows * cols)`` float64 matrix, pixels multiplied by ``scale``."""
    raw = parse_idx(_read(path), IMAGE_MAGIC, os.fspath(path))
    return raw.reshape(raw.shape[0], -1).astype(np.float64) * scale


def load_idx_labels(path):
    return parse_idx(_read(path), LABEL_MAGIC, os.fspath(path)).astype(np.int64)


def write_idx(path, array):
    """Write a uint8 array as IDX (magic derived from its rank)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(f">I{array.ndim}I", 0x0800 | array.ndim, *array.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(array.tobytes())


def one_hot(labels, c, on=1.0, off=0.0):
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        bad = labels[(labels < 0) | (labels >= c)][0]
        raise ValueError(f"label {bad} outside [0, {c})")
    out = np.full((labels.size, c), off, dtype=np.float64)
    out[np.arange(labels.size), labels.astype(np.int64)] = on
    return out


def normalize(x, lo=None, hi=None):
    """Min-max scale each column to [0, 1]; constant columns become 0.

    ``lo`` / ``hi`` default to the column extremes of ``x``; pass the
    training extremes to scale a test set consistently.
    """
    x = np.asarray(x, dtype=np.float64)
    lo = x.min(axis=0) if lo is None else lo
    hi = x.max(axis=0) if hi is None else hi
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.clip((x - lo) / span, 0.0, 1.0)


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray  # one-hot
    labels: np.ndarray
    classes: int

    def __len__(self):
        return self.x.shape[0]

    def rows(self, sl):
        return Dataset(self.x[sl], self.y[sl], self.labels[sl], self.classes)


def synth_dataset(seed, l, q_in, c, noise, separation=3.0):
    """Gaussian class clusters scaled into [0, 1].

    Class centres are drawn from ``N(0, separation^2)``; each sample is its
    centre plus ``N(0, noise^2)`` jitter.
    """
    if l < 1:
        raise ValueError("need at least one sample")
    if c < 2:
        raise ValueError("need at least two classes")
    if q_in < 1:
        raise ValueError("need at least one input feature")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 7])))
    centres = rng.normal(0.0, separation, size=(c, q_in))
    labels = rng.integers(0, c, size=l)
    x = centres[labels] + noise * rng.normal(size=(l, q_in))
    return Dataset(normalize(x), one_hot(labels, c), labels, c)


def synth_split(seed, train, test, q_in, c, noise, separation=3.0):
    """Train/test sets drawn from the same clusters and scaled together."""
    full = synth_dataset(seed, train + test, q_in, c, noise, separation)
    return full.rows(slice(0, train)), full.rows(slice(train, train + test))


def write_csv(rows, columns, dest=None):
    """RFC-4180 CSV with a header row; returns the text when ``dest`` is None."""
    def emit(fh):
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\r\n", extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)

    if dest is None:
        buf = io.StringIO(newline="")
        emit(buf)
        return buf.getvalue()
    with open(dest, "w", newline="", encoding="utf-8") as fh:
        emit(fh)
    return None
