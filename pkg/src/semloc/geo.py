"""Geographic poses, great-circle distance, pose CSVs and triplet mining."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import FormatError

logger = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0

DEFAULT_R_POS = 10.0
DEFAULT_R_NEG_MIN = 25.0

# pairs this close to a radius are re-evaluated with the scalar formula
_BOUNDARY_SLACK_M = 1e-6


@dataclass(frozen=True)
class GeoPose:
    lat: float
    lon: float

    def __post_init__(self) -> None:
        lat, lon = float(self.lat), float(self.lon)
        if not (math.isfinite(lat) and -90.0 <= lat <= 90.0):
            raise ValueError(f"latitude {self.lat!r} outside [-90, 90]")
        if not (math.isfinite(lon) and -180.0 <= lon <= 180.0):
            raise ValueError(f"longitude {self.lon!r} outside [-180, 180]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)


class Triplet(NamedTuple):
    anchor: int
    positive: int
    negative: int


def haversine_m(a: GeoPose, b: GeoPose) -> float:
    """Great-circle distance in meters on a sphere of radius 6,371 km."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def haversine_matrix(lat: NDArray, lon: NDArray, lat2: NDArray = None,
                     lon2: NDArray = None) -> NDArray[np.float64]:
    """Vectorised pairwise haversine distances, shape ``(len(lat), len(lat2))``."""
    if lat2 is None:
        lat2, lon2 = lat, lon
    phi1 = np.radians(np.asarray(lat, dtype=np.float64))[:, None]
    phi2 = np.radians(np.asarray(lat2, dtype=np.float64))[None, :]
    dlmb = np.radians(np.asarray(lon2, dtype=np.float64)[None, :]
                      - np.asarray(lon, dtype=np.float64)[:, None])
    h = np.sin((phi2 - phi1) / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def offset_pose(pose: GeoPose, north_m: float, east_m: float) -> GeoPose:
    """Displace a pose by a small planar offset given in meters."""
    dlat = north_m * 180.0 / (math.pi * EARTH_RADIUS_M)
    dlon = east_m * 180.0 / (math.pi * EARTH_RADIUS_M * math.cos(math.radians(pose.lat)))
    return GeoPose(pose.lat + dlat, pose.lon + dlon)


# ---------------------------------------------------------------------------
# pose CSV


def load_poses_csv(data: bytes | str) -> list[tuple[str, GeoPose]]:
    """Parse an ``id,lat,lon`` CSV; list order is the database index."""
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    reader = csv.reader(io.StringIO(text, newline=""))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["id", "lat", "lon"]:
        raise FormatError("missing header 'id,lat,lon'", 1, "line")
    out: list[tuple[str, GeoPose]] = []
    seen: dict[str, int] = {}
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != 3:
            raise FormatError(f"expected 3 fields, got {len(row)}", line, "line")
        pid, lat_s, lon_s = row
        try:
            pose = GeoPose(float(lat_s), float(lon_s))
        except ValueError as exc:
            raise FormatError(f"bad coordinate for id {pid!r}: {exc}", line, "line") from exc
        if pid in seen:
            raise FormatError(
                f"duplicate id {pid!r} (first seen on line {seen[pid]})", line, "line")
        seen[pid] = line
        out.append((pid, pose))
    return out


def save_poses_csv(entries: Sequence[tuple[str, GeoPose]]) -> bytes:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "lat", "lon"])
    for pid, pose in entries:
        writer.writerow([pid, repr(pose.lat), repr(pose.lon)])
    return buf.getvalue().encode("utf-8")


def save_triplets_csv(triplets: Sequence[Triplet]) -> bytes:
    lines = ["anchor,positive,negative"]
    lines.extend(f"{t.anchor},{t.positive},{t.negative}" for t in triplets)
    return ("\n".join(lines) + "\n").encode("utf-8")


def load_triplets_csv(data: bytes | str) -> list[Triplet]:
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    lines = text.split("\n")
    if not lines or lines[0].strip() != "anchor,positive,negative":
        raise FormatError("missing header 'anchor,positive,negative'", 1, "line")
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3 or not all(p.strip().isdigit() for p in parts):
            raise FormatError(f"bad triplet row {line!r}", lineno, "line")
        out.append(Triplet(*(int(p) for p in parts)))
    return out


# ---------------------------------------------------------------------------
# triplet mining


@dataclass(frozen=True)
class MiningResult:
    triplets: list[Triplet]
    skipped_anchors: int


def _radius_masks(poses: Sequence[GeoPose], r_pos: float, r_neg_min: float):
    lat = np.array([p.lat for p in poses])
    lon = np.array([p.lon for p in poses])
    dist = haversine_matrix(lat, lon)
    near_boundary = ((np.abs(dist - r_pos) <= _BOUNDARY_SLACK_M)
                     | (np.abs(dist - r_neg_min) <= _BOUNDARY_SLACK_M))
    for i, j in zip(*np.nonzero(near_boundary)):
        dist[i, j] = haversine_m(poses[i], poses[j])
    positive = dist <= r_pos
    np.fill_diagonal(positive, False)
    negative = dist >= r_neg_min
    return positive, negative


def mine_triplets_with_stats(poses: Sequence[GeoPose], r_pos: float = DEFAULT_R_POS,
                             r_neg_min: float = DEFAULT_R_NEG_MIN, per_anchor: int = 1,
                             seed: int = 0) -> MiningResult:
    if not r_pos < r_neg_min:
        raise ValueError(f"r_pos ({r_pos}) must be < r_neg_min ({r_neg_min})")
    if per_anchor < 1:
        raise ValueError(f"per_anchor must be >= 1, got {per_anchor}")
    if len(poses) < 3:
        raise ValueError(f"need at least 3 poses, got {len(poses)}")
    positive, negative = _radius_masks(poses, r_pos, r_neg_min)
    triplets: list[Triplet] = []
    skipped = 0
    for anchor in range(len(poses)):
        pos_idx = np.flatnonzero(positive[anchor])
        neg_idx = np.flatnonzero(negative[anchor])
        if pos_idx.size == 0 or neg_idx.size == 0:
            skipped += 1
            continue
        total = pos_idx.size * neg_idx.size
        rng = np.random.default_rng([seed, anchor])
        picks = np.sort(rng.choice(total, size=min(per_anchor, total), replace=False))
        for k in picks:
            p, n = divmod(int(k), neg_idx.size)
            triplets.append(Triplet(anchor, int(pos_idx[p]), int(neg_idx[n])))
    if not triplets:
        raise ValueError(
            f"zero triplets minable with r_pos={r_pos}, r_neg_min={r_neg_min} "
            f"over {len(poses)} poses")
    if skipped:
        logger.info("skipped %d of %d anchors lacking positives or negatives",
                    skipped, len(poses))
    return MiningResult(triplets, skipped)


def mine_triplets(poses: Sequence[GeoPose], r_pos: float = DEFAULT_R_POS,
                  r_neg_min: float = DEFAULT_R_NEG_MIN, per_anchor: int = 1,
                  seed: int = 0) -> list[Triplet]:
    """Draw (anchor, positive, negative) index triples by GPS distance.

    Positives lie within ``r_pos`` meters of the anchor, negatives at least
    ``r_neg_min`` away. For each anchor, ``min(per_anchor, P*N)`` distinct
    (positive, negative) pairs are sampled uniformly without replacement
    from a generator seeded by ``(seed, anchor)``. Anchors without a
    positive or a negative are skipped.
    """
    return mine_triplets_with_stats(poses, r_pos, r_neg_min, per_anchor, seed).triplets
