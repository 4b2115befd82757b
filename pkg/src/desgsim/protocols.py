"""One-to-one matching and one-to-many search protocols over embeddings."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .gnn import GnnModel, cosine, embed_graph
from .metrics import EvalPool, ScoredPair, mrr, pr_auc, recall_at_k
from .training import FunctionGroup


def _embed_groups(model: GnnModel, groups: Sequence[FunctionGroup]):
    """(group index, member index) -> embedding, flat member list."""
    embs = {}
    members = []
    for gi, g in enumerate(groups):
        for mi, m in enumerate(g.members):
            embs[(gi, mi)] = embed_graph(model, m)
            members.append((gi, mi))
    return embs, members


def match_protocol(groups: Sequence[FunctionGroup], model: GnnModel,
                   ratio: int = 100, seed: int = 0):
    """Positive pairs from same-group members, ``ratio`` uniform cross-group
    negatives per positive; returns (scored pairs, PR-AUC)."""
    embs, members = _embed_groups(model, groups)
    positives = []
    for gi, g in enumerate(groups):
        for a in range(len(g.members)):
            for b in range(a + 1, len(g.members)):
                positives.append(((gi, a), (gi, b)))
    if not positives:
        raise ValueError("no positive pairs available")
    cross = [(i, j) for i in range(len(members)) for j in range(i + 1, len(members))
             if members[i][0] != members[j][0]]
    needed = ratio * len(positives)
    if not cross:
        raise ValueError("no cross-group pairs available for negatives")
    # With replacement: the 1:100 regime routinely wants more draws than
    # there are distinct cross-group pairs on desk-scale corpora.
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(cross), size=needed, replace=True)
    pairs = []
    for pid, (a, b) in enumerate(positives):
        pairs.append(ScoredPair(cosine(embs[a], embs[b]), True, pid))
    for nid, ci in enumerate(picks):
        i, j = cross[ci]
        pairs.append(ScoredPair(cosine(embs[members[i]], embs[members[j]]),
                                False, len(positives) + nid))
    return pairs, pr_auc(pairs)


def build_pools(groups: Sequence[FunctionGroup], model: GnnModel,
                pool_size: int, seed: int = 0) -> list[EvalPool]:
    """One pool per multi-member group: query member 0, truth member 1,
    distractors drawn from other groups."""
    eligible = [gi for gi, g in enumerate(groups) if len(g.members) >= 2]
    if len(eligible) < 2:
        raise ValueError("need at least 2 multi-member groups")
    embs, _ = _embed_groups(model, groups)
    rng = np.random.default_rng(seed)
    pools = []
    for gi in eligible:
        distractors = [(oi, mi) for oi in range(len(groups)) if oi != gi
                       for mi in range(len(groups[oi].members))]
        if len(distractors) < pool_size - 1:
            raise ValueError(
                f"pool size {pool_size} exceeds available candidates "
                f"({len(distractors) + 1})")
        rng.shuffle(distractors)
        cands = [("truth", embs[(gi, 1)])]
        cands += [(f"g{oi}m{mi}", embs[(oi, mi)])
                  for oi, mi in distractors[:pool_size - 1]]
        pools.append(EvalPool.from_embeddings(
            groups[gi].group_id, embs[(gi, 0)], cands, {"truth"}))
    return pools


def search_protocol(groups: Sequence[FunctionGroup], model: GnnModel,
                    pool_sizes: Sequence[int], seed: int = 0) -> list[dict]:
    """Recall@1 and MRR per pool-size setting."""
    rows = []
    for size in pool_sizes:
        pools = build_pools(groups, model, size, seed)
        rows.append({"task": "search", "pool_size": size,
                     "recall@1": recall_at_k(pools, 1), "mrr": mrr(pools)})
    return rows
