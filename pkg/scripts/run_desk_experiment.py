#!/usr/bin/env python3
"""End-to-end desk-scale experiment: synthetic corpus -> DESGs -> training
-> retrieval evaluation, all through the public CLI.

Writes corpus, graphs, checkpoint, logs, and result tables under --workdir
and prints the search table plus matching PR-AUC at the end.
"""

import argparse
import json
import os
import sys
import time

from desgsim.cli import main as desgsim_main


def sh(argv):
    print(f"$ desgsim {' '.join(argv)}", file=sys.stderr)
    code = desgsim_main(argv)
    if code != 0:
        print(f"step failed with exit code {code}", file=sys.stderr)
        sys.exit(code)


def run(args):
    os.makedirs(args.workdir, exist_ok=True)
    corpus = os.path.join(args.workdir, "corpus.jsonl")
    graphs = os.path.join(args.workdir, "graphs")
    ckpt = os.path.join(args.workdir, "model.ckpt")
    log = os.path.join(args.workdir, "train_log.jsonl")
    search_out = os.path.join(args.workdir, "search.jsonl")

    t0 = time.time()
    sh(["fixtures", "--groups", str(args.groups), "--seed", str(args.seed),
        "--variants", "sub,bcf,fla,all", "--out", corpus])
    sh(["build", corpus, "--out", graphs, "--jobs", str(args.jobs)])
    sh(["train", corpus, "--out", ckpt, "--log", log,
        "--dim", str(args.dim), "--epochs", str(args.epochs),
        "--batch-size", "16", "--lr", "2e-3", "--seed", "0"])
    sh(["search", corpus, "--model", ckpt, "--pool-sizes", "10,50,100",
        "--split", "test", "--out", search_out])
    sh(["eval", corpus, "--model", ckpt, "--ratio", "100", "--split", "test"])
    print(json.dumps({"workdir": args.workdir,
                      "wall_time_s": round(time.time() - t0, 1)}))


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="desk_run")
    ap.add_argument("--groups", type=int, default=200)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    run(ap.parse_args())
