"""Synthetic "same route, different conditions" benchmark.

A world is a straight northward route of places. Every place has a
ground-truth label map built from a fixed random grid of rectangular
regions; moving one place along the route redraws the class of a
``scene_drift`` fraction of regions, so nearby places look alike.

An observation of a place under a condition yields two label maps:

* semantic: each pixel flipped to a different, uniformly chosen class
  with probability ``p_sem``;
* appearance: each pixel replaced by a uniformly random class with
  probability ``p_app``, then, with probability ``p_app``, the whole map
  is shifted by a random non-zero class rotation ``c -> (c + k) % C``.

Both feed the same descriptor pipeline, which makes the comparison
between a stable channel and a condition-sensitive one a controlled
experiment.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import zlib
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._io import atomic_write
from .geo import GeoPose, offset_pose, save_poses_csv
from .labelmap import LabelMap, save_label_map

MANIFEST_FORMAT = "semloc-synth-manifest"


@dataclass(frozen=True)
class WorldConfig:
    num_places: int = 232
    spacing_m: float = 8.0
    map_w: int = 64
    map_h: int = 48
    num_classes: int = 8
    scene_drift: float = 0.15
    origin: GeoPose = GeoPose(51.7520, -1.2577)
    seed: int = 0
    region_cols: int = 8
    region_rows: int = 6

    def __post_init__(self) -> None:
        if self.num_places < 1:
            raise ValueError(f"num_places must be >= 1, got {self.num_places}")
        if not self.spacing_m > 0:
            raise ValueError(f"spacing_m must be > 0, got {self.spacing_m}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.scene_drift <= 1.0:
            raise ValueError(f"scene_drift must be in [0, 1], got {self.scene_drift}")
        if not (1 <= self.region_cols <= self.map_w and 1 <= self.region_rows <= self.map_h):
            raise ValueError("region grid must fit inside the map")
        if isinstance(self.origin, dict):
            object.__setattr__(self, "origin", GeoPose(**self.origin))


@dataclass(frozen=True)
class ConditionSpec:
    name: str
    p_sem: float = 0.0
    p_app: float = 0.0
    pose_jitter_m: float = 0.0

    def __post_init__(self) -> None:
        for attr in ("p_sem", "p_app"):
            value = getattr(self, attr)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{attr} must be in [0, 1], got {value}")
        if not self.pose_jitter_m >= 0:
            raise ValueError(f"pose_jitter_m must be >= 0, got {self.pose_jitter_m}")


DB_CONDITION = ConditionSpec("reference", p_sem=0.05, p_app=0.1, pose_jitter_m=0.5)
QUERY_CONDITION = ConditionSpec("overcast-winter", p_sem=0.05, p_app=0.5, pose_jitter_m=3.0)


@dataclass(frozen=True)
class DatasetConfig:
    world: WorldConfig = WorldConfig()
    db_condition: ConditionSpec = DB_CONDITION
    query_condition: ConditionSpec = QUERY_CONDITION
    num_query_places: int = 39
    queries_per_place: int = 1

    def __post_init__(self) -> None:
        if not 0 <= self.num_query_places <= self.world.num_places:
            raise ValueError(f"num_query_places must be in [0, {self.world.num_places}]")
        if self.queries_per_place < 0:
            raise ValueError("queries_per_place must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> DatasetConfig:
        kwargs = dict(doc)
        try:
            if "world" in kwargs:
                kwargs["world"] = WorldConfig(**kwargs["world"])
            for key in ("db_condition", "query_condition"):
                if key in kwargs:
                    kwargs[key] = ConditionSpec(**kwargs[key])
            return cls(**kwargs)
        except TypeError as exc:
            raise ValueError(f"bad dataset config: {exc}") from exc


@dataclass(frozen=True)
class World:
    config: WorldConfig
    poses: tuple[GeoPose, ...]
    scenes: tuple[LabelMap, ...]


class Observation(NamedTuple):
    semantic: LabelMap
    appearance: LabelMap
    pose: GeoPose


def _cuts(rng, size, parts):
    inner = np.sort(rng.choice(np.arange(1, size), size=parts - 1, replace=False))
    return np.concatenate([[0], inner, [size]])


def generate_world(cfg: WorldConfig) -> World:
    rng = np.random.default_rng([cfg.seed, 0])
    xs = _cuts(rng, cfg.map_w, cfg.region_cols)
    ys = _cuts(rng, cfg.map_h, cfg.region_rows)
    # region id per pixel
    col = np.searchsorted(xs, np.arange(cfg.map_w), side="right") - 1
    row = np.searchsorted(ys, np.arange(cfg.map_h), side="right") - 1
    region = row[:, None] * cfg.region_cols + col[None, :]
    n_regions = cfg.region_cols * cfg.region_rows
    n_redraw = int(round(cfg.scene_drift * n_regions))

    classes = rng.integers(0, cfg.num_classes, size=n_regions)
    scenes, poses = [], []
    for place in range(cfg.num_places):
        if place:
            picked = rng.choice(n_regions, size=n_redraw, replace=False)
            classes = classes.copy()
            classes[picked] = rng.integers(0, cfg.num_classes, size=n_redraw)
        scenes.append(LabelMap(classes[region], cfg.num_classes))
        poses.append(offset_pose(cfg.origin, place * cfg.spacing_m, 0.0))
    return World(cfg, tuple(poses), tuple(scenes))


def _condition_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def observe(world: World, place: int, cond: ConditionSpec, draw: int = 0) -> Observation:
    if not 0 <= place < len(world.scenes):
        raise IndexError(f"place {place} out of range [0, {len(world.scenes)})")
    c = world.config.num_classes
    truth = world.scenes[place].labels.astype(np.int64)
    rng = np.random.default_rng([world.config.seed, place, _condition_key(cond.name), draw])

    flip = rng.random(truth.shape) < cond.p_sem
    semantic = np.where(flip, (truth + rng.integers(1, c, size=truth.shape)) % c, truth)

    corrupt = rng.random(truth.shape) < cond.p_app
    appearance = np.where(corrupt, rng.integers(0, c, size=truth.shape), truth)
    if rng.random() < cond.p_app:
        appearance = (appearance + rng.integers(1, c)) % c

    angle = rng.uniform(0.0, 2.0 * math.pi)
    radius = cond.pose_jitter_m * math.sqrt(rng.random())
    pose = world.poses[place]
    if radius > 0:
        pose = offset_pose(pose, radius * math.cos(angle), radius * math.sin(angle))
    return Observation(LabelMap(semantic, c), LabelMap(appearance, c), pose)


class Sample(NamedTuple):
    id: str
    place: int
    semantic: LabelMap
    appearance: LabelMap
    pose: GeoPose


@dataclass
class SyntheticDataset:
    config: DatasetConfig
    database: list[Sample] = field(default_factory=list)
    queries: list[Sample] = field(default_factory=list)

    def manifest(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "version": 1,
            "config": self.config.to_dict(),
            "num_database": len(self.database),
            "num_queries": len(self.queries),
            "query_places": sorted({s.place for s in self.queries}),
            "files": {
                "db_poses": "db_poses.csv",
                "query_poses": "query_poses.csv",
                "maps": "<channel>/<split>/<split>_<place>_<draw>.slm",
            },
        }


def sample_id(split: str, place: int, draw: int) -> str:
    return f"{split}_{place:04d}_{draw}"


def build_dataset(cfg: DatasetConfig = DatasetConfig()) -> SyntheticDataset:
    """Observe every place once under the database condition and a seeded
    subset of places ``queries_per_place`` times under the query condition."""
    world = generate_world(cfg.world)
    ds = SyntheticDataset(cfg)
    for place in range(cfg.world.num_places):
        obs = observe(world, place, cfg.db_condition, 0)
        ds.database.append(Sample(sample_id("db", place, 0), place, *obs))
    if cfg.queries_per_place:
        rng = np.random.default_rng([cfg.world.seed, 1])
        places = np.sort(rng.choice(cfg.world.num_places, size=cfg.num_query_places,
                                    replace=False))
        for place in places:
            for draw in range(cfg.queries_per_place):
                obs = observe(world, int(place), cfg.query_condition, draw)
                ds.queries.append(Sample(sample_id("query", int(place), draw), int(place), *obs))
    return ds


def write_dataset(ds: SyntheticDataset, out_dir) -> None:
    for channel in ("semantic", "appearance"):
        for split in ("db", "query"):
            os.makedirs(os.path.join(out_dir, channel, split), exist_ok=True)
    for split, samples in (("db", ds.database), ("query", ds.queries)):
        for s in samples:
            for channel in ("semantic", "appearance"):
                path = os.path.join(out_dir, channel, split, s.id + ".slm")
                atomic_write(path, save_label_map(getattr(s, channel), "binary"))
        atomic_write(os.path.join(out_dir, f"{split}_poses.csv"),
                     save_poses_csv([(s.id, s.pose) for s in samples]))
    manifest = json.dumps(ds.manifest(), indent=2, sort_keys=True) + "\n"
    atomic_write(os.path.join(out_dir, "manifest.json"), manifest.encode("utf-8"))


def generate_dataset(cfg: DatasetConfig, out_dir) -> SyntheticDataset:
    ds = build_dataset(cfg)
    write_dataset(ds, out_dir)
    return ds
