"""Localization metrics: Top-1 Recall@D and Recall@N.

Top-1 Recall@D is the fraction of queries whose rank-1 database pose lies
within ``D`` meters of the ground truth. Recall@N is the fraction of
queries with at least one of the top ``N`` candidates within
``well_localized_m`` (25 m by default). Both thresholds are inclusive.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .descriptor import levels_for_dim, pyramid_histogram
from .geo import GeoPose, haversine_m
from .labelmap import LabelMap
from .metric_learning import EmbeddingModel, embed
from .retrieval import GeoDatabase, Match, query

DEFAULT_D_GRID = (5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0, 50.0)
DEFAULT_N_GRID = tuple(range(1, 11))
WELL_LOCALIZED_M = 25.0

REPORT_FORMAT = "semloc-eval-report"
REPORT_VERSION = 1


def _check_grid(grid, name):
    if len(grid) == 0:
        raise ValueError(f"{name} must be non-empty")
    if any(g <= 0 for g in grid):
        raise ValueError(f"{name} entries must be positive: {list(grid)}")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError(f"{name} must be strictly ascending: {list(grid)}")


@dataclass(frozen=True)
class EvalConfig:
    d_grid: tuple[float, ...] = DEFAULT_D_GRID
    n_grid: tuple[int, ...] = DEFAULT_N_GRID
    well_localized_m: float = WELL_LOCALIZED_M

    def __post_init__(self) -> None:
        object.__setattr__(self, "d_grid", tuple(float(d) for d in self.d_grid))
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        _check_grid(self.d_grid, "d_grid")
        _check_grid(self.n_grid, "n_grid")
        if not self.well_localized_m > 0:
            raise ValueError(f"well_localized_m must be positive, got {self.well_localized_m}")


class QueryResult(NamedTuple):
    query_id: str
    top1_id: str
    top1_error_m: float
    best_rank: Optional[int]


@dataclass
class EvalReport:
    recall_at_d: list[tuple[float, float]]
    recall_at_n: list[tuple[int, float]]
    per_query: list[QueryResult] = field(default_factory=list)
    well_localized_m: float = WELL_LOCALIZED_M

    def check(self) -> None:
        """Raise AssertionError if a report invariant is violated."""
        for name, curve in (("recall_at_d", self.recall_at_d), ("recall_at_n", self.recall_at_n)):
            fracs = [f for _, f in curve]
            assert all(0.0 <= f <= 1.0 for f in fracs), f"{name} outside [0, 1]"
            assert all(a <= b for a, b in zip(fracs, fracs[1:])), f"{name} decreasing"


def top1_recall_at_D(top1_errors: Sequence[float], d_grid) -> list[tuple[float, float]]:
    if len(top1_errors) == 0:
        raise ValueError("empty query set")
    _check_grid(list(d_grid), "d_grid")
    errors = np.asarray(top1_errors, dtype=np.float64)
    if np.any(errors < 0) or not np.all(np.isfinite(errors)):
        raise ValueError("top-1 errors must be finite and non-negative")
    total = len(errors)
    return [(float(d), int(np.count_nonzero(errors <= d)) / total) for d in d_grid]


def first_well_localized_rank(matches: Sequence[Match], gt: GeoPose,
                              db_poses: Sequence[GeoPose], well_localized_m: float,
                              ) -> Optional[int]:
    """1-based rank of the first candidate within the threshold, or None."""
    for rank, m in enumerate(matches, start=1):
        if haversine_m(db_poses[m.index], gt) <= well_localized_m:
            return rank
    return None


def recall_at_N(ranked: Sequence[Sequence[Match]], gt: Sequence[GeoPose],
                db_poses: Sequence[GeoPose], n_grid,
                well_localized_m: float = WELL_LOCALIZED_M) -> list[tuple[int, float]]:
    if len(ranked) != len(gt):
        raise ValueError(f"{len(ranked)} ranked lists for {len(gt)} ground-truth poses")
    if len(ranked) == 0:
        raise ValueError("empty query set")
    _check_grid(list(n_grid), "n_grid")
    n_max = max(n_grid)
    ranks = []
    for i, matches in enumerate(ranked):
        if len(matches) < n_max:
            raise ValueError(f"query {i} has {len(matches)} candidates, need {n_max}")
        ranks.append(first_well_localized_rank(matches[:n_max], gt[i], db_poses,
                                               well_localized_m))
    return _recall_from_ranks(ranks, n_grid)


def _recall_from_ranks(ranks, n_grid):
    total = len(ranks)
    return [(int(n), sum(1 for r in ranks if r is not None and r <= n) / total)
            for n in n_grid]


def evaluate_embeddings(db: GeoDatabase, query_ids: Sequence[str], query_embeddings,
                        query_poses: Sequence[GeoPose], cfg: EvalConfig = EvalConfig(),
                        ) -> EvalReport:
    """Score already-embedded queries against ``db``."""
    if not (len(query_ids) == len(query_embeddings) == len(query_poses)):
        raise ValueError("query ids, embeddings and poses differ in length")
    if len(query_ids) == 0:
        raise ValueError("empty query set")
    n_max = max(cfg.n_grid)
    if n_max > len(db):
        raise ValueError(f"max(n_grid)={n_max} exceeds database size {len(db)}")
    per_query, ranks, errors = [], [], []
    for qid, e, gt in zip(query_ids, query_embeddings, query_poses):
        matches = query(db, e, n_max)
        top = matches[0].index
        err = haversine_m(db.poses[top], gt)
        rank = first_well_localized_rank(matches, gt, db.poses, cfg.well_localized_m)
        per_query.append(QueryResult(qid, db.ids[top], err, rank))
        ranks.append(rank)
        errors.append(err)
    report = EvalReport(top1_recall_at_D(errors, cfg.d_grid),
                        _recall_from_ranks(ranks, cfg.n_grid), per_query,
                        cfg.well_localized_m)
    report.check()
    return report


def evaluate(db: GeoDatabase, model: EmbeddingModel,
             queries: Sequence[tuple[str, LabelMap, GeoPose]],
             cfg: EvalConfig = EvalConfig(), levels: Optional[int] = None) -> EvalReport:
    """Featurize, embed and retrieve every query, then score the ranking.

    ``levels`` defaults to the pyramid depth implied by ``model.d_in``.
    """
    if not queries:
        raise ValueError("empty query set")
    if levels is None:
        levels = levels_for_dim(queries[0][1].num_classes, model.d_in)
    ids = [q[0] for q in queries]
    emb = [embed(model, pyramid_histogram(q[1], levels)) for q in queries]
    return evaluate_embeddings(db, ids, emb, [q[2] for q in queries], cfg)


# ---------------------------------------------------------------------------
# report serialization


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def emit_report(report: EvalReport, format: str = "structured") -> bytes:
    """Serialize a report as ``"structured"`` JSON or ``"plot_csv"`` tables.

    ``plot_csv`` holds two CSV tables separated by one blank line, with
    headers ``D_meters,recall`` and ``N,recall``.
    """
    if format == "plot_csv":
        lines = ["D_meters,recall"]
        lines += [f"{_fmt(d)},{_fmt(f)}" for d, f in report.recall_at_d]
        lines += ["", "N,recall"]
        lines += [f"{n},{_fmt(f)}" for n, f in report.recall_at_n]
        return ("\n".join(lines) + "\n").encode("utf-8")
    if format == "structured":
        doc = {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "well_localized_m": report.well_localized_m,
            "recall_at_d": [{"D_meters": d, "recall": f} for d, f in report.recall_at_d],
            "recall_at_n": [{"N": n, "recall": f} for n, f in report.recall_at_n],
            "per_query": [q._asdict() for q in report.per_query],
        }
        return (json.dumps(doc, indent=2, allow_nan=False) + "\n").encode("utf-8")
    raise ValueError(f"unknown report format {format!r}")


def parse_report(data: bytes) -> EvalReport:
    doc = json.loads(data.decode("utf-8"))
    if doc.get("format") != REPORT_FORMAT or doc.get("version") != REPORT_VERSION:
        raise ValueError("not a version-1 evaluation report")
    return EvalReport(
        [(float(r["D_meters"]), float(r["recall"])) for r in doc["recall_at_d"]],
        [(int(r["N"]), float(r["recall"])) for r in doc["recall_at_n"]],
        [QueryResult(q["query_id"], q["top1_id"], float(q["top1_error_m"]), q["best_rank"])
         for q in doc["per_query"]],
        float(doc["well_localized_m"]),
    )


def parse_plot_csv(data: bytes) -> tuple[list[tuple[float, float]], list[tuple[int, float]]]:
    text = data.decode("utf-8")
    first, sep, second = text.partition("\n\n")
    if not sep:
        raise ValueError("plot CSV must contain two tables separated by a blank line")
    d_rows = list(csv.reader(io.StringIO(first)))
    n_rows = list(csv.reader(io.StringIO(second)))
    if d_rows[0] != ["D_meters", "recall"] or n_rows[0] != ["N", "recall"]:
        raise ValueError("unexpected plot CSV headers")
    return ([(float(d), float(f)) for d, f in d_rows[1:]],
            [(int(n), float(f)) for n, f in n_rows[1:]])
