"""Retrieval metrics with pessimistic tie handling.

Ties are always resolved against the ground truth: within one score, a
positive/truth item ranks after every negative, then ids ascend.  PR-AUC is
step-wise average precision, not trapezoidal interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class ScoredPair:
    score: float
    positive: bool
    id: int = 0


@dataclass
class EvalPool:
    """One query against a candidate pool with marked ground truth.

    Candidates are (id, score) with higher scores more similar; use
    ``from_embeddings`` when starting from vectors.
    """

    query_id: str
    candidates: list  # of (id, score)
    truth: set = field(default_factory=set)

    def __post_init__(self):
        ids = {cid for cid, _ in self.candidates}
        if not self.truth or not self.truth <= ids:
            raise ValueError("truth must be a non-empty subset of candidates")

    @staticmethod
    def from_embeddings(query_id, query_vec, candidates, truth) -> "EvalPool":
        from .gnn import cosine
        scored = [(cid, cosine(np.asarray(query_vec), np.asarray(vec)))
                  for cid, vec in candidates]
        return EvalPool(query_id, scored, set(truth))

    def ranked_ids(self) -> list:
        """Candidate ids best-first; ground truth loses ties."""
        return [cid for cid, _ in sorted(
            self.candidates,
            key=lambda c: (-c[1], c[0] in self.truth, c[0]))]

    def truth_rank(self) -> int:
        """1-based pessimistic rank of the (single) ground truth."""
        if len(self.truth) != 1:
            raise ValueError("truth_rank needs a single-truth pool")
        return self.ranked_ids().index(next(iter(self.truth))) + 1


def pr_auc(pairs: Sequence[ScoredPair]) -> float:
    """Average precision over scored pairs (pessimistic ties)."""
    n_pos = sum(p.positive for p in pairs)
    n_neg = len(pairs) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("pr_auc needs at least one positive and one negative")
    ranked = sorted(pairs, key=lambda p: (-p.score, p.positive, p.id))
    ap = 0.0
    seen_pos = 0
    for i, p in enumerate(ranked, 1):
        if p.positive:
            seen_pos += 1
            ap += seen_pos / i
    return ap / n_pos


def recall_at_k(pools: Sequence[EvalPool], k: int) -> float:
    """Mean fraction of each pool's truth found in the top k."""
    if not pools:
        raise ValueError("no pools")
    if k < 1:
        raise ValueError("k must be >= 1")
    total = 0.0
    for pool in pools:
        top = set(pool.ranked_ids()[:k])
        total += len(top & pool.truth) / len(pool.truth)
    return total / len(pools)


def mrr(pools: Sequence[EvalPool]) -> float:
    """Mean reciprocal rank; single-truth pools only."""
    if not pools:
        raise ValueError("no pools")
    for pool in pools:
        if len(pool.truth) != 1:
            raise ValueError("mrr requires single-truth pools; use recall_at_k")
    return float(np.mean([1.0 / p.truth_rank() for p in pools]))
