"""Spatial-pyramid class histograms over label maps.

Level ``l`` splits the map into ``2**l x 2**l`` cells. Every cell
contributes a normalized class histogram, and blocks are concatenated
level by level, row-major within a level.
"""

from __future__ import annotations

import struct
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from ._io import Reader, pack_string
from .labelmap import LabelMap, cell_histograms

DEFAULT_LEVELS = 3
RDS_MAGIC = b"RDS1"


def descriptor_dim(num_classes: int, levels: int) -> int:
    if num_classes < 1 or levels < 1:
        raise ValueError(f"num_classes and levels must be >= 1, got {num_classes}, {levels}")
    return num_classes * (4 ** levels - 1) // 3


def levels_for_dim(num_classes: int, dim: int) -> int:
    """Inverse of :func:`descriptor_dim`; raises if no depth matches."""
    levels = 1
    while descriptor_dim(num_classes, levels) < dim:
        levels += 1
    if descriptor_dim(num_classes, levels) != dim:
        raise ValueError(f"dimension {dim} is not a pyramid size for {num_classes} classes")
    return levels


def pyramid_histogram(label_map: LabelMap, levels: int = DEFAULT_LEVELS) -> NDArray[np.float64]:
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    finest = 2 ** (levels - 1)
    if label_map.width < finest or label_map.height < finest:
        raise ValueError(
            f"{label_map.width}x{label_map.height} map is too small for {levels} levels "
            f"(needs at least {finest}x{finest})")
    blocks = []
    for level in range(levels):
        n = 2 ** level
        counts = cell_histograms(label_map, n, n).reshape(n * n, label_map.num_classes)
        blocks.append(counts / counts.sum(axis=1, keepdims=True))
    return np.concatenate(blocks, axis=0).ravel()


# ---------------------------------------------------------------------------
# RDS1 store:
#   b"RDS1" | count u32 | dim u32 | count x (id_len u16, id utf-8, dim x f64)


def save_raw_store(ids: Sequence[str], descriptors: NDArray[np.float64]) -> bytes:
    mat = np.asarray(descriptors, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != len(ids):
        raise ValueError(f"descriptor matrix shape {mat.shape} does not match {len(ids)} ids")
    parts = [RDS_MAGIC, struct.pack("<II", mat.shape[0], mat.shape[1])]
    for pid, row in zip(ids, mat):
        parts.append(pack_string(pid))
        parts.append(row.astype("<f8").tobytes())
    return b"".join(parts)


def load_raw_store(data: bytes) -> tuple[list[str], NDArray[np.float64]]:
    reader = Reader(data)
    reader.expect_magic(RDS_MAGIC)
    count, dim = reader.unpack("<II", "header")
    ids = []
    mat = np.empty((count, dim), dtype=np.float64)
    for i in range(count):
        ids.append(reader.string("id"))
        mat[i] = np.frombuffer(reader.take(8 * dim, "values"), dtype="<f8")
    reader.finish()
    return ids, mat
