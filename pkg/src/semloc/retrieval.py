"""Exact nearest-neighbour search over a geotagged embedding database.

Database file ``GDB1`` (little-endian)::

    b"GDB1" | count u32 | dim u32 |
    count x (id_len u16, id utf-8, lat f64, lon f64, dim x f64)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from numpy.typing import NDArray

from ._io import Reader, pack_string
from .errors import FormatError
from .geo import GeoPose

GDB_MAGIC = b"GDB1"
UNIT_NORM_TOL = 1e-6


class Match(NamedTuple):
    index: int
    distance: float


@dataclass(frozen=True, eq=False)
class GeoDatabase:
    ids: tuple[str, ...]
    poses: tuple[GeoPose, ...]
    embeddings: NDArray[np.float64]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GeoDatabase):
            return NotImplemented
        return (self.ids == other.ids and self.poses == other.poses
                and self.embeddings.shape == other.embeddings.shape
                and bool(np.array_equal(self.embeddings, other.embeddings)))

    __hash__ = None


def build_database(ids: Sequence[str], poses: Sequence[GeoPose], embeddings) -> GeoDatabase:
    emb = np.array(embeddings, dtype=np.float64, order="C")
    if emb.ndim != 2:
        raise ValueError(f"embeddings must be a 2D matrix, got shape {emb.shape}")
    if not (len(ids) == len(poses) == emb.shape[0]):
        raise ValueError(
            f"length mismatch: {len(ids)} ids, {len(poses)} poses, {emb.shape[0]} embeddings")
    if len(ids) == 0:
        raise ValueError("database must contain at least one entry")
    seen = set()
    for pid in ids:
        if pid in seen:
            raise ValueError(f"duplicate id {pid!r}")
        seen.add(pid)
    norms = np.linalg.norm(emb, axis=1)
    bad = np.flatnonzero(~(np.abs(norms - 1.0) <= UNIT_NORM_TOL))
    if bad.size:
        raise ValueError(f"embedding {int(bad[0])} ({ids[bad[0]]!r}) has norm "
                         f"{norms[bad[0]]!r}, expected unit norm")
    emb.setflags(write=False)
    return GeoDatabase(tuple(ids), tuple(poses), emb)


def query(db: GeoDatabase, q, k: int) -> list[Match]:
    """The ``k`` closest entries by Euclidean distance, ties to the lower index."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (db.dim,):
        raise ValueError(f"query has shape {q.shape}, database dimension is {db.dim}")
    if not 1 <= k <= len(db):
        raise ValueError(f"k must be in [1, {len(db)}], got {k}")
    dist = np.sqrt(np.sum((db.embeddings - q) ** 2, axis=1))
    order = np.argsort(dist, kind="stable")[:k]
    return [Match(int(i), float(dist[i])) for i in order]


def localize(db: GeoDatabase, q) -> tuple[GeoPose, str]:
    """Pose and id of the best match; its position is the location estimate."""
    best = query(db, q, 1)[0]
    return db.poses[best.index], db.ids[best.index]


def save_database(db: GeoDatabase) -> bytes:
    parts = [GDB_MAGIC, struct.pack("<II", len(db), db.dim)]
    for pid, pose, row in zip(db.ids, db.poses, db.embeddings):
        parts.append(pack_string(pid))
        parts.append(struct.pack("<dd", pose.lat, pose.lon))
        parts.append(row.astype("<f8").tobytes())
    return b"".join(parts)


def load_database(data: bytes) -> GeoDatabase:
    reader = Reader(data)
    reader.expect_magic(GDB_MAGIC)
    count, dim = reader.unpack("<II", "header")
    ids, poses = [], []
    emb = np.empty((count, dim), dtype=np.float64)
    for i in range(count):
        ids.append(reader.string("id"))
        at = reader.pos
        lat, lon = reader.unpack("<dd", "pose")
        try:
            poses.append(GeoPose(lat, lon))
        except ValueError as exc:
            raise FormatError(str(exc), at) from exc
        emb[i] = np.frombuffer(reader.take(8 * dim, "embedding"), dtype="<f8")
    reader.finish()
    try:
        return build_database(ids, poses, emb)
    except ValueError as exc:
        raise FormatError(f"invalid database contents: {exc}") from exc
