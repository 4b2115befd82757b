"""Command-line pipeline: fixtures -> ingest -> build -> ged / train /
embed / search / eval.

Every subcommand is deterministic given (inputs, seed) and echoes its run
configuration into the outputs it writes.  Exit codes: 0 ok, 1 usage,
2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from multiprocessing import Pool

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_model, save_model
from .desg import build_desg, desg_from_json, desg_stats, desg_to_json
from .fixtures import generate_corpus
from .ged import stability_report, stability_table_text
from .gnn import NumericError, cosine, embed_graph
from .obfuscate import MODES
from .pcode import (ParseError, StructuralError, function_to_json,
                    parse_function, write_corpus)
from .protocols import match_protocol, search_protocol
from .training import FunctionGroup, TrainConfig, split_groups, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

DATA_DIR_ENV = "DESGSIM_DATA_DIR"


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; usage errors are 1
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _data_path(path: str) -> str:
    base = os.environ.get(DATA_DIR_ENV)
    if base and not os.path.isabs(path) and not os.path.exists(path):
        return os.path.join(base, path)
    return path


def _run_config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg["version"] = __version__
    return cfg


def _load_corpus(path):
    """Parse a corpus strictly, reporting every offending record."""
    functions = []
    errors = []
    warnings = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                f = parse_function(line)
                warnings += f.pruned_blocks
                functions.append(f)
            except (ParseError, StructuralError) as e:
                errors.append(f"{path}:{lineno}: {e}")
    return functions, warnings, errors


def _groups_from_functions(functions) -> list[FunctionGroup]:
    by_name: dict[str, FunctionGroup] = {}
    for f in functions:
        g = by_name.setdefault(f.name, FunctionGroup(f.name, [], []))
        g.members.append(build_desg(f))
        g.tags.append(f.meta.get("obfuscation", "none"))
    return list(by_name.values())


def _select_split(groups, split: str):
    if split == "all":
        return groups
    tr, va, te = split_groups(groups)
    return {"train": tr, "valid": va, "test": te}[split]


def cmd_fixtures(args) -> int:
    if args.groups <= 0:
        raise DataError("--groups must be positive")
    variants = [v for v in args.variants.split(",") if v]
    functions = generate_corpus(args.groups, args.seed, variants,
                                args.min_blocks, args.max_blocks)
    n = write_corpus(args.out, functions)
    print(json.dumps({"run_config": _run_config(args), "functions": n,
                      "groups": args.groups}))
    return EXIT_OK


def cmd_ingest(args) -> int:
    path = _data_path(args.corpus)
    functions, warnings, errors = _load_corpus(path)
    report = {"run_config": _run_config(args), "functions": len(functions),
              "pruned_block_warnings": warnings, "errors": errors}
    print(json.dumps(report))
    if errors or not functions:
        if not functions and not errors:
            print(f"{path}: empty corpus", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _build_one(doc_json: str) -> tuple[str, str, dict]:
    f = parse_function(doc_json)
    g = build_desg(f)
    return f.name, desg_to_json(g), {
        "group": f.name, "obfuscation": f.meta.get("obfuscation", "none")}


def cmd_build(args) -> int:
    path = _data_path(args.corpus)
    functions, _, errors = _load_corpus(path)
    if errors:
        for e in errors:
            print(e, file=sys.stderr)
        return EXIT_DATA
    if not functions:
        raise DataError(f"{path}: empty corpus")
    os.makedirs(args.out, exist_ok=True)
    docs = [function_to_json(f) for f in functions]
    if args.jobs > 1:
        with Pool(args.jobs) as pool:
            built = list(pool.map(_build_one, docs))
    else:
        built = [_build_one(d) for d in docs]
    manifest_path = os.path.join(args.out, "manifest.jsonl")
    totals = {"nodes": 0, "edges": 0}
    with open(manifest_path, "w", encoding="utf-8") as mf:
        mf.write(json.dumps({"run_config": _run_config(args)}) + "\n")
        for idx, (name, gjson, tags) in enumerate(built):
            fname = f"{idx:06d}_{name}_{tags['obfuscation']}.desg.json"
            fpath = os.path.join(args.out, fname)
            with open(fpath, "w", encoding="utf-8") as fh:
                fh.write(gjson)
            stats = desg_stats(desg_from_json(gjson))
            totals["nodes"] += stats["nodes"]
            totals["edges"] += stats["edges"]
            mf.write(json.dumps({"path": fname, "group": tags["group"],
                                 "tags": [tags["obfuscation"]]}) + "\n")
    print(json.dumps({"run_config": _run_config(args),
                      "graphs": len(built), **totals}))
    return EXIT_OK


def cmd_ged(args) -> int:
    path = _data_path(args.corpus)
    functions, _, errors = _load_corpus(path)
    if errors:
        for e in errors:
            print(e, file=sys.stderr)
        return EXIT_DATA
    modes = set(args.modes.split(","))
    bases = {f.name: f for f in functions
             if f.meta.get("obfuscation", "none") == "none"}
    pairs = [(bases[f.name], f) for f in functions
             if f.name in bases and f.meta.get("obfuscation") in modes]
    if not pairs:
        raise DataError("no (original, transformed) pairs in corpus")
    buckets = tuple(int(b) for b in args.buckets.split(","))
    report = stability_report(pairs, buckets)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"run_config": _run_config(args)}) + "\n")
            for row in report["pairs"]:
                fh.write(json.dumps(row) + "\n")
    print(stability_table_text(report))
    return EXIT_OK


def cmd_train(args) -> int:
    path = _data_path(args.corpus)
    functions, _, errors = _load_corpus(path)
    if errors:
        for e in errors:
            print(e, file=sys.stderr)
        return EXIT_DATA
    groups = _groups_from_functions(functions)
    tr, va, _te = split_groups(groups)
    cfg = TrainConfig(margin=args.margin, batch_size=args.batch_size,
                      epochs=args.epochs, learning_rate=args.lr,
                      seed=args.seed, dim=args.dim, layers=args.layers,
                      heads=args.heads)
    result = train(tr, cfg, checkpoint_path=args.out, valid_groups=va,
                   log_path=args.log)
    summary = {"run_config": _run_config(args), "epochs": len(result.log),
               "best_epoch": result.best_epoch, "diverged": result.diverged,
               "final_loss": result.log[-1]["loss"] if result.log else None,
               "val_recall1": result.log[result.best_epoch]["val_recall1"]
               if result.log and result.best_epoch >= 0 else None}
    print(json.dumps(summary))
    return EXIT_NUMERIC if result.diverged else EXIT_OK


def cmd_embed(args) -> int:
    model = load_model(_data_path(args.model))
    functions, _, errors = _load_corpus(_data_path(args.corpus))
    if errors:
        for e in errors:
            print(e, file=sys.stderr)
        return EXIT_DATA
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"run_config": _run_config(args)}) + "\n")
        for f in functions:
            vec = embed_graph(model, build_desg(f))
            fh.write(json.dumps({
                "name": f.name,
                "obfuscation": f.meta.get("obfuscation", "none"),
                "vec": [float(x) for x in vec]}) + "\n")
    print(json.dumps({"run_config": _run_config(args),
                      "embedded": len(functions)}))
    return EXIT_OK


def cmd_search(args) -> int:
    model = load_model(_data_path(args.model))
    functions, _, errors = _load_corpus(_data_path(args.corpus))
    if errors:
        for e in errors:
            print(e, file=sys.stderr)
        return EXIT_DATA
    groups = _select_split(_groups_from_functions(functions), args.split)
    sizes = [int(s) for s in args.pool_sizes.split(",")]
    rows = search_protocol(groups, model, sizes, seed=args.seed)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"run_config": _run_config(args)}) + "\n")
            for row in rows:
                fh.write(json.dumps(row) + "\n")
    print("pool_size\trecall@1\tmrr")
    for row in rows:
        print(f"{row['pool_size']}\t{row['recall@1']:.4f}\t{row['mrr']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(_data_path(args.model))
    functions, _, errors = _load_corpus(_data_path(args.corpus))
    if errors:
        for e in errors:
            print(e, file=sys.stderr)
        return EXIT_DATA
    groups = _select_split(_groups_from_functions(functions), args.split)
    _pairs, auc = match_protocol(groups, model, ratio=args.ratio,
                                 seed=args.seed)
    print(json.dumps({"run_config": _run_config(args), "task": "match",
                      "ratio": args.ratio, "pr_auc": auc}))
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="desgsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixtures", help="generate a synthetic corpus")
    p.add_argument("--groups", type=int, required=True)
    p.add_argument("--variants", default="sub,bcf,fla,all",
                   help=f"comma list from {MODES}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-blocks", type=int, default=3)
    p.add_argument("--max-blocks", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fixtures)

    p = sub.add_parser("ingest", help="validate a corpus")
    p.add_argument("corpus")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build", help="build DESGs for a corpus")
    p.add_argument("corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("ged", help="CFG vs D-Tree stability table")
    p.add_argument("corpus", help="corpus with originals and variants")
    p.add_argument("--modes", default="bcf,fla,all")
    p.add_argument("--buckets", default="50,100,150")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ged)

    p = sub.add_parser("train", help="train an embedding model")
    p.add_argument("corpus")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log")
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--margin", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="embed every function in a corpus")
    p.add_argument("corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("search", help="one-to-many search evaluation")
    p.add_argument("corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--pool-sizes", default="50")
    p.add_argument("--split", default="all",
                   choices=["all", "train", "valid", "test"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="one-to-one matching PR-AUC")
    p.add_argument("corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--ratio", type=int, default=100)
    p.add_argument("--split", default="all",
                   choices=["all", "train", "valid", "test"])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, StructuralError, DataError, CheckpointError,
            FileNotFoundError, ValueError) as e:
        print(f"desgsim: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"desgsim: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
