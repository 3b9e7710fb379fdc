"""Command-line entry point chaining the pipeline:

    datagen -> ingest -> partition -> build-dds -> train -> embed
            -> serve / score -> eval -> audit

Every artifact file starts with magic bytes and a format version, and
every subcommand is deterministic given identical inputs and seeds.
Failures exit nonzero with a single machine-parsable line on stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .baselines import GbdtConfig
from .datagen import GenConfig, generate, summarize
from .dds import audit_no_future, build_dds, load_dds, save_dds
from .experiment import (ExperimentConfig, _jsonable, build_dds_partitions,
                         partition_graph, run_experiment)
from .graph import build_static_graph, load_static_graph, save_static_graph
from .lnn import LnnConfig, LnnModel, TrainConfig, load_checkpoint, save_checkpoint, train
from .metrics import time_split
from .partition import (PicConfig, RefineConfig, load_partition, save_partition)
from .records import parse_transactions, write_transactions
from .service import ScoreService, TcpScoreServer, serve_stdio
from .store import store_open, store_write


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 1


def _load_dds_dir(path: Path):
    files = sorted(path.glob("part_*.ddst"))
    if not files:
        raise FileNotFoundError(f"no part_*.ddst files in {path}")
    return [load_dds(f) for f in files]


# ---------------------------------------------------------------------------
# config files

def experiment_config_from_dict(d: dict) -> ExperimentConfig:
    kw = dict(d)
    if "gen" in kw:
        kw["gen"] = GenConfig(**kw["gen"])
    if "pic" in kw:
        kw["pic"] = PicConfig(**kw["pic"])
    if "refine" in kw:
        kw["refine"] = RefineConfig(**kw["refine"])
    if "gbdt" in kw:
        kw["gbdt"] = GbdtConfig(**kw["gbdt"])
    for key in ("seeds", "mlp_hidden", "split_fractions"):
        if key in kw:
            kw[key] = tuple(kw[key])
    return ExperimentConfig(**kw)


def emit_config(cfg: ExperimentConfig) -> str:
    return json.dumps(asdict(cfg), sort_keys=True, indent=2, default=_jsonable) + "\n"


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path) as fh:
        return experiment_config_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# subcommands

def cmd_datagen(args) -> int:
    cfg = GenConfig(seed=args.seed) if args.config is None else \
        GenConfig(**json.load(open(args.config)).get("gen", {}))
    records = generate(cfg)
    write_transactions(records, args.out, fmt=args.format)
    s = summarize(records)
    print(f"wrote {s.n_records} records ({s.n_fraud} fraud, "
          f"{s.distinct_entities} entities) to {args.out}")
    return 0


def cmd_ingest(args) -> int:
    records, report = parse_transactions(args.input, fmt=args.format)
    for line_no, msg in report.errors:
        print(f"row error: {msg}", file=sys.stderr)
    if not records:
        return _fail("no valid records")
    g = build_static_graph(records)
    save_static_graph(g, args.out)
    print(f"graph: {g.n_orders} orders, {g.n_entities} entities, "
          f"{g.n_edges} edges, {report.n_errors} rejected rows -> {args.out}")
    return 0


def cmd_partition(args) -> int:
    g = load_static_graph(args.graph)
    parts = partition_graph(
        g, PicConfig(target_coarse_size=args.target_coarse_size, seed=args.seed),
        RefineConfig(size_cap=args.size_cap))
    save_partition(parts, args.out)
    sizes = parts.sizes()
    print(f"{parts.n_parts} partitions, max size {sizes.max()} -> {args.out}")
    return 0


def cmd_build_dds(args) -> int:
    g = load_static_graph(args.graph)
    parts = load_partition(args.parts)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    h = None if args.history_window == 0 else args.history_window
    for p in range(parts.n_parts):
        dds = build_dds(g, parts.members(p), g.idx, h)
        save_dds(dds, out_dir / f"part_{p:04d}.ddst")
    print(f"wrote {parts.n_parts} DDS graphs to {out_dir}")
    return 0


def cmd_audit(args) -> int:
    dds_list = _load_dds_dir(Path(args.dds_dir))
    n_bad = 0
    for i, dds in enumerate(dds_list):
        rep = audit_no_future(dds)
        if not rep.ok:
            n_bad += len(rep.violations)
            for order, vtx in rep.violations[:10]:
                print(f"violation: part {i} order {order} ancestor {vtx}", file=sys.stderr)
    print(f"ok={'true' if n_bad == 0 else 'false'} violations={n_bad}")
    return 0 if n_bad == 0 else 1


def cmd_train(args) -> int:
    g = load_static_graph(args.graph)
    dds_list = _load_dds_dir(Path(args.dds_dir))
    n_snapshots = int(g.order_snapshots.max()) + 1
    split = time_split(n_snapshots)
    h = None if args.history_window == 0 else args.history_window
    model = LnnModel(LnnConfig(
        feature_dim=g.feature_dim, hidden_dim=args.hidden_dim,
        n_layers=args.n_layers, layer_kind=args.layer_kind,
        history_window=h, seed=args.seed))
    result = train(model, dds_list, split,
                   TrainConfig(epochs=args.epochs, patience=args.patience,
                               lr=args.lr, seed=args.seed, batch_seed=args.seed))
    save_checkpoint(model, args.out)
    print(f"best val AP {result.best_val_ap:.4f} at epoch {result.best_epoch} "
          f"-> {args.out} (version {model.version()})")
    return 0


def cmd_embed(args) -> int:
    g = load_static_graph(args.graph)
    model = load_checkpoint(args.model)
    dds_list = _load_dds_dir(Path(args.dds_dir))
    as_of = args.as_of if args.as_of >= 0 else None
    embeddings = []
    for dds in dds_list:
        embeddings.extend(model.infer_entity_embeddings(dds, g, as_of=as_of))
    if not embeddings:
        return _fail("no entity embeddings produced")
    store_write(embeddings, args.out, snapshot=-1 if as_of is None else as_of)
    print(f"wrote {len(embeddings)} embeddings -> {args.out}")
    return 0


def cmd_score(args) -> int:
    model = load_checkpoint(args.model)
    service = ScoreService(model, store_open(args.store))
    with open(args.input) if args.input != "-" else sys.stdin as fh:
        serve_stdio(service, fh, sys.stdout)
    return 0


def cmd_serve(args) -> int:
    model = load_checkpoint(args.model)
    service = ScoreService(model, store_open(args.store))
    if args.stdio:
        serve_stdio(service, sys.stdin, sys.stdout)
        return 0
    server = TcpScoreServer(service, host=args.host, port=args.port)
    print(f"listening on {args.host}:{server.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    report = run_experiment(cfg)
    md = report.to_markdown()
    Path(args.out).write_text(md)
    Path(args.out).with_suffix(".json").write_text(report.to_json())
    print(md, end="")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ddsfraud", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate synthetic transactions")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--config")
    p.set_defaults(fn=cmd_datagen)

    p = sub.add_parser("ingest", help="parse transactions into a static graph")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("partition", help="cluster and refine the static graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target-coarse-size", type=int, default=2000)
    p.add_argument("--size-cap", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_partition)

    p = sub.add_parser("build-dds", help="expand partitions into DDS graphs")
    p.add_argument("--graph", required=True)
    p.add_argument("--parts", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--history-window", type=int, default=8,
                   help="snapshots of entity history to link; 0 = unbounded")
    p.set_defaults(fn=cmd_build_dds)

    p = sub.add_parser("audit", help="check DDS graphs for future leakage")
    p.add_argument("--dds-dir", required=True)
    p.set_defaults(fn=cmd_audit)

    p = sub.add_parser("train", help="train the two-stage model")
    p.add_argument("--graph", required=True)
    p.add_argument("--dds-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layer-kind", choices=("gcn", "gat"), default="gcn")
    p.add_argument("--hidden-dim", type=int, default=64)
    p.add_argument("--n-layers", type=int, default=2)
    p.add_argument("--history-window", type=int, default=8)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("embed", help="precompute entity embeddings into a store")
    p.add_argument("--graph", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--dds-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--as-of", type=int, default=-1,
                   help="latest snapshot to include; -1 = all")
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("score", help="score a file of JSON requests")
    p.add_argument("--model", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--input", default="-")
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("serve", help="run the scoring service")
    p.add_argument("--model", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--stdio", action="store_true")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("eval", help="run the model comparison experiment")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
