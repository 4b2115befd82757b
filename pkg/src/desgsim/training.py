"""Pair training: batching, distance-weighted negative sampling, optimizer
loop, and checkpointing.

Groups collect the semantic clones of one source function (its compile and
obfuscation variants).  A batch pairs two distinct members from each of a
set of distinct groups; negatives are drawn within-batch using distance
weighted sampling over the current embeddings.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .checkpoint import save_model
from .desg import Desg
from .gnn import (GnnConfig, GnnModel, NumericError, Vocab,
                  batch_loss_and_grads, cosine, embed_graph, init_model)


@dataclass
class FunctionGroup:
    group_id: str  # source identity: project + source function name
    members: list[Desg]
    tags: list[str] = field(default_factory=list)


@dataclass
class TrainConfig:
    margin: float = 0.5
    batch_size: int = 16
    epochs: int = 10
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    seed: int = 0
    sampling_clip: float = 0.05  # caps the heaviest weight at 20x the lightest
    dim: int = 128
    layers: int = 3
    heads: int = 4

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def split_groups(groups: Sequence[FunctionGroup]):
    """Deterministic 80/10/10 split by group-id hash; clones never leak
    across splits."""
    train, valid, test = [], [], []
    for g in groups:
        h = int.from_bytes(hashlib.sha256(g.group_id.encode()).digest()[:4],
                           "big") % 10
        (train if h < 8 else valid if h == 8 else test).append(g)
    return train, valid, test


def make_batches(groups: Sequence[FunctionGroup], cfg: TrainConfig, seed: int):
    """Yield batches of positive Desg pairs; deterministic under seed.

    Each batch pairs two distinct members per sampled group and never
    repeats a group within one batch.  Single-member groups are skipped.
    """
    eligible = [g for g in groups if len(g.members) >= 2]
    if len(eligible) < 2:
        raise ValueError("need at least 2 multi-member groups to form pairs")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(eligible))
    for start in range(0, len(order), cfg.batch_size):
        chunk = order[start:start + cfg.batch_size]
        batch = []
        for gi in chunk:
            g = eligible[gi]
            a, b = rng.choice(len(g.members), size=2, replace=False)
            batch.append((g.members[a], g.members[b]))
        yield batch


def _log_q(dists: np.ndarray, n_dim: int) -> np.ndarray:
    """Unnormalized log density of pairwise distances between random unit
    vectors in n_dim dimensions: q(d) ~ d^(n-2) (1 - d^2/4)^((n-3)/2)."""
    d = np.clip(dists, 0.0, 2.0)
    with np.errstate(divide="ignore"):
        return ((n_dim - 2) * np.log(d)
                + 0.5 * (n_dim - 3) * np.log1p(-np.square(d) / 4.0))


def negative_weights(p: np.ndarray, candidates: np.ndarray,
                     clip: float) -> np.ndarray:
    """Sampling weights proportional to 1/max(q(d), clip).

    Densities are rescaled so the likeliest distance has q=1, making the
    clip a pure ratio: weights live in [1, 1/clip].
    """
    pu = p / np.linalg.norm(p)
    cu = candidates / np.linalg.norm(candidates, axis=1, keepdims=True)
    dists = np.linalg.norm(cu - pu, axis=1)
    lq = _log_q(dists, p.shape[0])
    q = np.exp(lq - lq.max())
    return 1.0 / np.maximum(q, clip)


def sample_negative(p: np.ndarray, candidates: Sequence[np.ndarray],
                    clip: float, rng: np.random.Generator) -> int:
    """Distance-weighted draw of one candidate index; candidates must
    exclude p's positive partner."""
    if len(candidates) == 0:
        raise ValueError("no negative candidates")
    w = negative_weights(np.asarray(p), np.stack(candidates), clip)
    return int(rng.choice(len(candidates), p=w / w.sum()))


def _within_batch_sampler(n_pairs: int, clip: float,
                          rng: np.random.Generator):
    """Negatives come from the other pairs' embeddings in the same batch."""

    def sampler(i: int, embs):
        pool = [j for j in range(2 * n_pairs) if j not in (2 * i, 2 * i + 1)]
        if not pool:
            return None
        idx = sample_negative(embs[2 * i], [embs[j] for j in pool], clip, rng)
        return pool[idx]

    return sampler


class Adam:
    """Adam with decoupled weight decay."""

    def __init__(self, params: dict, lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.wd = weight_decay
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
        self.v = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * np.square(g)
            update = (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)
            if self.wd:
                update = update + self.wd * params[k]
            params[k] = (params[k] - self.lr * update).astype(params[k].dtype)


def recall_at_1(model: GnnModel, groups: Sequence[FunctionGroup],
                rng: np.random.Generator, pool_size: int = 50) -> float:
    """Validation recall: query one member against its partner plus
    distractors from other groups."""
    eligible = [g for g in groups if len(g.members) >= 2]
    if len(eligible) < 2:
        return 0.0
    emb_cache: dict[tuple[int, int], np.ndarray] = {}

    def emb(gi: int, mi: int) -> np.ndarray:
        key = (gi, mi)
        if key not in emb_cache:
            emb_cache[key] = embed_graph(model, eligible[gi].members[mi])
        return emb_cache[key]

    hits = 0
    for gi, g in enumerate(eligible):
        query = emb(gi, 0)
        truth = emb(gi, 1)
        others = [(oi, int(rng.integers(len(eligible[oi].members))))
                  for oi in range(len(eligible)) if oi != gi]
        rng.shuffle(others)
        pool = [cosine(query, emb(oi, mi))
                for oi, mi in others[:pool_size - 1]]
        truth_score = cosine(query, truth)
        # Pessimistic ties: the ground truth loses them.
        if all(truth_score > s for s in pool):
            hits += 1
    return hits / len(eligible)


@dataclass
class TrainResult:
    model: GnnModel
    log: list[dict]
    best_epoch: int
    diverged: bool = False


def train(groups: Sequence[FunctionGroup], cfg: TrainConfig,
          checkpoint_path=None, valid_groups: Optional[Sequence[FunctionGroup]] = None,
          log_path=None) -> TrainResult:
    """Optimize a model on positive pairs with sampled negatives.

    Keeps the best checkpoint by validation Recall@1 (training loss as the
    fallback when no validation groups are available).  A non-finite loss
    aborts, retaining the last good parameter state.
    """
    eligible = [g for g in groups if len(g.members) >= 2]
    if len(eligible) < 2:
        raise ValueError("corpus has fewer than 2 multi-member groups")
    vocab = Vocab.build([m for g in groups for m in g.members])
    model = init_model(vocab, GnnConfig(dim=cfg.dim, layers=cfg.layers,
                                        heads=cfg.heads), seed=cfg.seed)
    opt = Adam(model.params, cfg.learning_rate, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)

    log: list[dict] = []
    best = None
    best_epoch = -1
    best_params = {k: v.copy() for k, v in model.params.items()}
    diverged = False
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            t0 = time.time()
            losses = []
            for batch in make_batches(eligible, cfg, seed=cfg.seed + epoch + 1):
                sampler = _within_batch_sampler(len(batch), cfg.sampling_clip, rng)
                try:
                    loss, grads, _ = batch_loss_and_grads(
                        model, batch, cfg.margin, sampler)
                except NumericError:
                    diverged = True
                    break
                opt.step(model.params, grads)
                losses.append(loss / len(batch))
            if diverged:
                model.params = best_params
                break
            epoch_loss = float(np.mean(losses)) if losses else 0.0
            val = (recall_at_1(model, valid_groups,
                               np.random.default_rng(cfg.seed + 7919))
                   if valid_groups else None)
            entry = {"epoch": epoch, "loss": epoch_loss, "val_recall1": val,
                     "wall_time": time.time() - t0}
            log.append(entry)
            if log_fh:
                log_fh.write(json.dumps(entry) + "\n")
                log_fh.flush()
            score = val if val is not None else -epoch_loss
            if best is None or score >= best:
                best = score
                best_epoch = epoch
                best_params = {k: v.copy() for k, v in model.params.items()}
    finally:
        if log_fh:
            log_fh.close()

    model.params = best_params
    if checkpoint_path:
        save_model(model, checkpoint_path)
    return TrainResult(model=model, log=log, best_epoch=best_epoch,
                       diverged=diverged)
