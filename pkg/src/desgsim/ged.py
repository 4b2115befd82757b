"""Graph edit distance: exact oracle for tiny graphs, assignment-based
approximation for real ones, and the CFG-vs-dominator-tree stability report.

All edit operations (node/edge insert, node/edge delete, node relabel) have
unit cost.  The approximation computes the induced cost of an explicit node
mapping, so it is always an upper bound on the exact distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations, permutations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dominance import dominator_tree
from .pcode import PCodeFunction

DEFAULT_BUCKETS = (50, 100, 150)


@dataclass(frozen=True)
class LabeledGraph:
    nodes: tuple[tuple[int, str], ...]  # (id, label)
    edges: frozenset  # of (src, dst)

    @staticmethod
    def make(nodes, edges) -> "LabeledGraph":
        return LabeledGraph(tuple(nodes), frozenset(edges))


class GedSizeError(ValueError):
    pass


_EXACT_CAP = 6


def _mapping_cost(a: LabeledGraph, b: LabeledGraph, mapping: dict[int, int]) -> int:
    """Induced unit cost of a partial injective node mapping a->b.

    Unmapped a-nodes are deleted, unmapped b-nodes inserted; edge cost is
    the symmetric difference under the mapping.
    """
    a_labels = dict(a.nodes)
    b_labels = dict(b.nodes)
    cost = 0
    for u, v in mapping.items():
        if a_labels[u] != b_labels[v]:
            cost += 1  # relabel
    cost += len(a_labels) - len(mapping)  # node deletions
    cost += len(b_labels) - len(mapping)  # node insertions
    covered = set()
    for (u, v) in a.edges:
        mu, mv = mapping.get(u), mapping.get(v)
        if mu is not None and mv is not None and (mu, mv) in b.edges:
            covered.add((mu, mv))
        else:
            cost += 1  # edge deletion
    cost += len(b.edges) - len(covered)  # edge insertions
    return cost


def ged_exact(a: LabeledGraph, b: LabeledGraph) -> int:
    """Exact GED by exhaustive search over injective node mappings."""
    if max(len(a.nodes), len(b.nodes)) > _EXACT_CAP:
        raise GedSizeError(f"exact GED capped at {_EXACT_CAP} nodes")
    a_ids = [n for n, _ in a.nodes]
    b_ids = [n for n, _ in b.nodes]
    best = None
    for k in range(min(len(a_ids), len(b_ids)) + 1):
        for a_sub in combinations(a_ids, k):
            for b_perm in permutations(b_ids, k):
                cost = _mapping_cost(a, b, dict(zip(a_sub, b_perm)))
                if best is None or cost < best:
                    best = cost
    return best if best is not None else 0


def _signatures(g: LabeledGraph) -> dict[int, tuple]:
    """Local node signature: label plus neighbor-label degree profile."""
    out_n: dict[int, list[str]] = {n: [] for n, _ in g.nodes}
    in_n: dict[int, list[str]] = {n: [] for n, _ in g.nodes}
    labels = dict(g.nodes)
    for s, d in g.edges:
        out_n[s].append(labels[d])
        in_n[d].append(labels[s])
    return {n: (labels[n], tuple(sorted(out_n[n])), tuple(sorted(in_n[n])))
            for n, _ in g.nodes}


def _local_cost(sa: tuple, sb: tuple) -> float:
    la, oa, ia = sa
    lb, ob, ib = sb
    cost = 0.0 if la == lb else 1.0
    for xs, ys in ((oa, ob), (ia, ib)):
        common = 0
        ys_left = list(ys)
        for x in xs:
            if x in ys_left:
                ys_left.remove(x)
                common += 1
        cost += max(len(xs), len(ys)) - common
    return cost


def _assignment_mapping(a: LabeledGraph, b: LabeledGraph) -> dict[int, int]:
    a_ids = [n for n, _ in a.nodes]
    b_ids = [n for n, _ in b.nodes]
    na, nb = len(a_ids), len(b_ids)
    sa = _signatures(a)
    sb = _signatures(b)
    big = float(na + nb + len(a.edges) + len(b.edges) + 1)
    # (na+nb) x (nb+na) padded cost matrix: real->real substitution costs,
    # diagonal deletion / insertion blocks, zero dummy-dummy block.
    cost = np.full((na + nb, nb + na), big)
    for i, u in enumerate(a_ids):
        for j, v in enumerate(b_ids):
            cost[i, j] = _local_cost(sa[u], sb[v])
        cost[i, nb + i] = 1.0 + len([e for e in a.edges if u in e])
    for j, v in enumerate(b_ids):
        cost[na + j, j] = 1.0 + len([e for e in b.edges if v in e])
    cost[na:, nb:] = 0.0
    rows, cols = linear_sum_assignment(cost)
    return {a_ids[i]: b_ids[j] for i, j in zip(rows, cols) if i < na and j < nb}


def _refine(a: LabeledGraph, b: LabeledGraph, mapping: dict[int, int]) -> int:
    """Greedy swap/reassign hill-climbing on the induced cost."""
    a_ids = [n for n, _ in a.nodes]
    b_ids = [n for n, _ in b.nodes]
    best = _mapping_cost(a, b, mapping)
    improved = True
    while improved and best > 0:
        improved = False
        targets = b_ids + [None]
        for u in a_ids:
            for t in targets:
                cur = mapping.get(u)
                if t == cur:
                    continue
                trial = dict(mapping)
                # Swap with whichever a-node currently owns t.
                owner = next((w for w, x in trial.items() if x == t), None)
                if t is None:
                    trial.pop(u, None)
                else:
                    trial[u] = t
                    if owner is not None:
                        if cur is None:
                            trial.pop(owner)
                        else:
                            trial[owner] = cur
                c = _mapping_cost(a, b, trial)
                if c < best:
                    best = c
                    mapping = trial
                    improved = True
    return best


def ged_approx(a: LabeledGraph, b: LabeledGraph) -> int:
    """Assignment-based upper bound, symmetric under unit costs."""

    def one_way(x: LabeledGraph, y: LabeledGraph) -> int:
        candidates = [_assignment_mapping(x, y)]
        if len(x.nodes) == len(y.nodes):
            # Positional identity is the right start for near-identical graphs.
            candidates.append({u: v for (u, _), (v, _) in zip(x.nodes, y.nodes)})
        return min(_refine(x, y, m) for m in candidates)

    fwd = one_way(a, b)
    if fwd == 0:
        return 0
    rev = one_way(b, a)
    return min(fwd, rev)


def _log2_bucket(n_ops: int) -> str:
    return str(math.ceil(math.log2(n_ops)) if n_ops > 1 else 0)


def cfg_to_labeled(f: PCodeFunction, labels: bool = True) -> LabeledGraph:
    """Project a CFG; nodes labeled by log2 bucket of their op count."""
    nodes = [(b.id, _log2_bucket(len(b.ops)) if labels else "") for b in f.blocks]
    edges = {(b.id, s) for b in f.blocks for s in b.successors}
    return LabeledGraph.make(nodes, edges)


def dtree_to_labeled(f: PCodeFunction, labels: bool = True) -> LabeledGraph:
    """Project the dominator tree with the same node labeling."""
    dt = dominator_tree(f)
    nodes = [(b.id, _log2_bucket(len(b.ops)) if labels else "") for b in f.blocks]
    edges = {(p, c) for c, p in dt.idom.items()}
    return LabeledGraph.make(nodes, edges)


def stability_report(pairs, buckets=DEFAULT_BUCKETS, labels: bool = True) -> dict:
    """Average GED of CFGs vs dominator trees, bucketed by block count.

    ``pairs`` is a list of (original, transformed) PCodeFunction pairs that
    share identity.  Buckets are (0,b1], (b1,b2], ..., >bn.
    """
    if not pairs:
        raise ValueError("empty corpus")
    edges = list(buckets)
    n_buckets = len(edges) + 1
    sums = {"cfg": [0.0] * n_buckets, "dtree": [0.0] * n_buckets}
    counts = [0] * n_buckets

    def bucket_of(nblocks: int) -> int:
        for i, e in enumerate(edges):
            if nblocks <= e:
                return i
        return len(edges)

    rows = []
    for orig, obf in pairs:
        bi = bucket_of(len(orig.blocks))
        g_cfg = ged_approx(cfg_to_labeled(orig, labels), cfg_to_labeled(obf, labels))
        g_dt = ged_approx(dtree_to_labeled(orig, labels), dtree_to_labeled(obf, labels))
        sums["cfg"][bi] += g_cfg
        sums["dtree"][bi] += g_dt
        counts[bi] += 1
        rows.append({"name": orig.name, "blocks": len(orig.blocks),
                     "cfg_ged": g_cfg, "dtree_ged": g_dt})

    avgs = {rep: [s / c if c else None for s, c in zip(sums[rep], counts)]
            for rep in ("cfg", "dtree")}
    labels_row = [f"(0,{edges[0]}]"] + [
        f"({edges[i]},{edges[i + 1]}]" for i in range(len(edges) - 1)
    ] + [f">{edges[-1]}"] if edges else ["all"]
    return {"buckets": labels_row, "counts": counts, "avg": avgs, "pairs": rows}


def stability_table_text(report: dict) -> str:
    head = ["rep"] + report["buckets"]
    lines = ["\t".join(head)]
    for rep, label in (("cfg", "CFG"), ("dtree", "D-Tree")):
        cells = [label] + [
            "-" if v is None else f"{v:.1f}" for v in report["avg"][rep]]
        lines.append("\t".join(cells))
    return "\n".join(lines)
