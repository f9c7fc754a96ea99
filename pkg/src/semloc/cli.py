"""``semloc`` command line: synth, featurize, mine, train, index, localize, evaluate.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.
Output files are written to a temporary name and renamed on success.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import descriptor, evaluation, geo, labelmap, metric_learning, retrieval, synth
from ._io import atomic_write
from .errors import NumericError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _grid(text: str, cast):
    try:
        return tuple(cast(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}")


def _list_maps(directory) -> list[tuple[str, str]]:
    names = sorted(n for n in os.listdir(directory) if n.endswith(".slm"))
    if not names:
        raise ValueError(f"no .slm files in {directory}")
    return [(n[:-len(".slm")], os.path.join(directory, n)) for n in names]


def _load_map(path) -> labelmap.LabelMap:
    try:
        return labelmap.load_label_map(_read(path))
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc


def _poses_by_id(path) -> dict[str, geo.GeoPose]:
    return dict(geo.load_poses_csv(_read(path)))


def _levels(model, num_classes) -> int:
    return descriptor.levels_for_dim(num_classes, model.d_in)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    cfg = synth.DatasetConfig()
    if args.config:
        cfg = synth.DatasetConfig.from_dict(json.loads(_read(args.config)))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, world=dataclasses.replace(cfg.world, seed=args.seed))
    os.makedirs(args.out, exist_ok=True)
    ds = synth.generate_dataset(cfg, args.out)
    print(f"database,{len(ds.database)},queries,{len(ds.queries)}")
    return EXIT_OK


def cmd_featurize(args) -> int:
    ids, rows = [], []
    for pid, path in _list_maps(args.maps):
        ids.append(pid)
        rows.append(descriptor.pyramid_histogram(_load_map(path), args.levels))
    dims = {len(r) for r in rows}
    if len(dims) != 1:
        raise ValueError(f"maps yield descriptors of differing dimensions {sorted(dims)}")
    atomic_write(args.out, descriptor.save_raw_store(ids, np.stack(rows)))
    print(f"descriptors,{len(ids)},dim,{dims.pop()}")
    return EXIT_OK


def cmd_mine(args) -> int:
    entries = geo.load_poses_csv(_read(args.poses))
    result = geo.mine_triplets_with_stats([p for _, p in entries], args.rpos, args.rneg,
                                          args.per_anchor, args.seed)
    atomic_write(args.out, geo.save_triplets_csv(result.triplets))
    print(f"triplets,{len(result.triplets)},skipped_anchors,{result.skipped_anchors}")
    return EXIT_OK


def cmd_train(args) -> int:
    _, raw = descriptor.load_raw_store(_read(args.raw))
    triplets = geo.load_triplets_csv(_read(args.triplets))
    cfg = metric_learning.TrainConfig(learning_rate=args.lr, epochs=args.epochs,
                                      batch_size=args.batch, seed=args.seed,
                                      init_scale=args.init_scale, d_out=args.dout)
    model, log = metric_learning.train(raw, triplets, cfg, args.margin)
    for i, loss in enumerate(log.mean_loss, start=1):
        print(f"epoch,{i},mean_loss,{loss!r}")
    atomic_write(args.out, metric_learning.save_model(model))
    return EXIT_OK


def cmd_index(args) -> int:
    model = metric_learning.load_model(_read(args.model))
    ids, raw = descriptor.load_raw_store(_read(args.raw))
    poses = _poses_by_id(args.poses)
    missing = [i for i in ids if i not in poses]
    if missing:
        raise ValueError(f"no pose for {len(missing)} descriptor ids, e.g. {missing[0]!r}")
    emb = metric_learning.embed_many(model, raw)
    db = retrieval.build_database(ids, [poses[i] for i in ids], emb)
    atomic_write(args.out, retrieval.save_database(db))
    print(f"entries,{len(db)},dim,{db.dim}")
    return EXIT_OK


def cmd_localize(args) -> int:
    db = retrieval.load_database(_read(args.index))
    model = metric_learning.load_model(_read(args.model))
    query_map = _load_map(args.query)
    e = metric_learning.embed(model, descriptor.pyramid_histogram(
        query_map, _levels(model, query_map.num_classes)))
    best = retrieval.query(db, e, 1)[0]
    pose = db.poses[best.index]
    print(f"{db.ids[best.index]},{pose.lat!r},{pose.lon!r},{best.distance!r}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    db = retrieval.load_database(_read(args.index))
    model = metric_learning.load_model(_read(args.model))
    poses = _poses_by_id(args.qposes)
    queries = []
    for qid, path in _list_maps(args.queries):
        if qid not in poses:
            raise ValueError(f"no ground-truth pose for query {qid!r}")
        queries.append((qid, _load_map(path), poses[qid]))
    cfg = evaluation.EvalConfig(args.dgrid, args.ngrid, args.tau)
    report = evaluation.evaluate(db, model, queries, cfg)
    if args.out:
        atomic_write(args.out, evaluation.emit_report(report, "structured"))
    if args.csv:
        atomic_write(args.csv, evaluation.emit_report(report, "plot_csv"))
    for d, f in report.recall_at_d:
        print(f"recall_at_d,{d!r},{f!r}")
    for n, f in report.recall_at_n:
        print(f"recall_at_n,{n},{f!r}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="semloc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate the synthetic benchmark")
    s.add_argument("--config", help="JSON dataset config (defaults if omitted)")
    s.add_argument("--seed", type=int, help="override the world seed")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("featurize", help="label maps -> RDS1 descriptor store")
    s.add_argument("--maps", required=True, help="directory of .slm files")
    s.add_argument("--levels", type=int, default=descriptor.DEFAULT_LEVELS)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("mine", help="GPS-radius triplet mining")
    s.add_argument("--poses", required=True)
    s.add_argument("--rpos", type=float, default=geo.DEFAULT_R_POS)
    s.add_argument("--rneg", type=float, default=geo.DEFAULT_R_NEG_MIN)
    s.add_argument("--per-anchor", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mine)

    d = metric_learning.TrainConfig()
    s = sub.add_parser("train", help="fit the embedding on mined triplets")
    s.add_argument("--raw", required=True)
    s.add_argument("--triplets", required=True)
    s.add_argument("--dout", type=int, default=d.d_out)
    s.add_argument("--margin", type=float, default=metric_learning.DEFAULT_MARGIN)
    s.add_argument("--lr", type=float, default=d.learning_rate)
    s.add_argument("--epochs", type=int, default=d.epochs)
    s.add_argument("--batch", type=int, default=d.batch_size)
    s.add_argument("--init-scale", type=float, default=d.init_scale)
    s.add_argument("--seed", type=int, default=d.seed)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("index", help="build a GDB1 database")
    s.add_argument("--model", required=True)
    s.add_argument("--raw", required=True)
    s.add_argument("--poses", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("localize", help="localize one query map")
    s.add_argument("--index", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--query", required=True)
    s.set_defaults(func=cmd_localize)

    s = sub.add_parser("evaluate", help="Top-1 Recall@D and Recall@N over a query set")
    s.add_argument("--index", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--queries", required=True, help="directory of query .slm files")
    s.add_argument("--qposes", required=True)
    s.add_argument("--out", help="structured report path")
    s.add_argument("--csv", help="plot CSV path")
    s.add_argument("--dgrid", type=lambda t: _grid(t, float), default=evaluation.DEFAULT_D_GRID)
    s.add_argument("--ngrid", type=lambda t: _grid(t, int), default=evaluation.DEFAULT_N_GRID)
    s.add_argument("--tau", type=float, default=evaluation.WELL_LOCALIZED_M)
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"semloc {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, IndexError, OSError, UnicodeDecodeError) as exc:
        print(f"semloc {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
