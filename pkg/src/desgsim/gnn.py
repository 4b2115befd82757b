"""Gated graph network over DESGs: embeddings, message passing, multi-head
softmax pooling, and reverse-mode gradients.

Message passing sums, for every node, a two-layer perceptron applied to
(receiver state, sender state, edge embedding per orientation) over both
incoming and outgoing edges, with separate perceptrons per direction; the
absent orientation's edge embedding is the zero vector.  A GRU cell merges
the aggregate into the next hidden state.  Pooling runs h independent
heads: linear -> ReLU -> layer norm -> per-dimension softmax over nodes
scaled by a learned inverse temperature; heads are concatenated and
projected.

Gradients are computed by hand (no autodiff dependency) so that training
stays a pure-numpy affair and the finite-difference suite has an
independent target to check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .desg import Desg

UNK = "<unk>"

# Fixed edge vocabulary: (kind, pos) pairs that can occur in a DESG.
EDGE_KEYS = (
    ("data", "out"),
    ("data", "in1"),
    ("data", "in2plus"),
    ("effect", "none"),
    ("contain", "none"),
    ("dominate", "none"),
    ("postdominate", "none"),
)

LN_EPS = 1e-5


class NumericError(RuntimeError):
    """Non-finite value produced during forward/backward."""


@dataclass(frozen=True)
class Vocab:
    token_index: dict
    edge_index: dict

    @staticmethod
    def build(graphs: Sequence[Desg]) -> "Vocab":
        tokens = sorted({n.attr for g in graphs for n in g.nodes})
        token_index = {UNK: 0}
        for t in tokens:
            if t not in token_index:
                token_index[t] = len(token_index)
        edge_index = {k: i for i, k in enumerate(EDGE_KEYS)}
        return Vocab(token_index, edge_index)

    def __len__(self) -> int:
        return len(self.token_index)

    def lookup(self, attr: str) -> int:
        return self.token_index.get(attr, 0)


@dataclass(frozen=True)
class GnnConfig:
    dim: int = 128
    layers: int = 3
    heads: int = 4
    out_dim: int = 0  # 0 -> same as dim

    @property
    def output_dim(self) -> int:
        return self.out_dim or self.dim

    def to_dict(self) -> dict:
        return {"dim": self.dim, "layers": self.layers, "heads": self.heads,
                "out_dim": self.out_dim}

    @staticmethod
    def from_dict(d: dict) -> "GnnConfig":
        return GnnConfig(**d)


@dataclass
class GnnModel:
    config: GnnConfig
    vocab: Vocab
    params: dict = field(default_factory=dict)

    def astype(self, dtype) -> "GnnModel":
        return GnnModel(self.config, self.vocab,
                        {k: v.astype(dtype) for k, v in self.params.items()})

    def zero_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


def init_model(vocab: Vocab, config: GnnConfig, seed: int = 0,
               dtype=np.float32) -> GnnModel:
    rng = np.random.default_rng(seed)
    d = config.dim
    dout = config.output_dim

    def mat(*shape, fan_in):
        return (rng.standard_normal(shape) / np.sqrt(fan_in)).astype(dtype)

    p = {
        "node_embed": mat(len(vocab), d, fan_in=1),
        "edge_embed": mat(len(EDGE_KEYS), d, fan_in=1),
        "out_W": mat(config.heads * d, dout, fan_in=config.heads * d),
        "out_b": np.zeros(dout, dtype=dtype),
    }
    for side in ("in", "out"):
        p[f"msg_{side}_W1"] = mat(4 * d, d, fan_in=4 * d)
        p[f"msg_{side}_b1"] = np.zeros(d, dtype=dtype)
        p[f"msg_{side}_W2"] = mat(d, d, fan_in=d)
        p[f"msg_{side}_b2"] = np.zeros(d, dtype=dtype)
    for gate in ("z", "r", "h"):
        p[f"gru_W{gate}"] = mat(d, d, fan_in=d)
        p[f"gru_U{gate}"] = mat(d, d, fan_in=d)
        p[f"gru_b{gate}"] = np.zeros(d, dtype=dtype)
    for k in range(config.heads):
        p[f"head{k}_W"] = mat(d, d, fan_in=d)
        p[f"head{k}_b"] = np.zeros(d, dtype=dtype)
        p[f"head{k}_gamma"] = np.ones(d, dtype=dtype)
        p[f"head{k}_beta"] = np.zeros(d, dtype=dtype)
        # exp reparameterization keeps the inverse temperature positive;
        # exp(0) = 1 is the documented initial value.
        p[f"head{k}_logtemp"] = np.zeros((), dtype=dtype)
    return GnnModel(config, vocab, p)


@dataclass
class GraphArrays:
    """Desg lowered to index arrays against a vocab."""

    tokens: np.ndarray  # (N,) node token ids
    src: np.ndarray  # (M,)
    dst: np.ndarray  # (M,)
    ekey: np.ndarray  # (M,) edge-vocab ids

    @staticmethod
    def from_desg(g: Desg, vocab: Vocab) -> "GraphArrays":
        if not g.nodes:
            raise ValueError("cannot embed an empty graph")
        tokens = np.array([vocab.lookup(n.attr)
                           for n in sorted(g.nodes, key=lambda n: n.id)],
                          dtype=np.int64)
        src = np.array([e.src for e in g.edges], dtype=np.int64)
        dst = np.array([e.dst for e in g.edges], dtype=np.int64)
        ekey = np.array([vocab.edge_index[(e.kind, e.pos)] for e in g.edges],
                        dtype=np.int64)
        return GraphArrays(tokens, src, dst, ekey)


def _check_finite(name: str, a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {name}")


def _forward_mlp(x, W1, b1, W2, b2):
    z1 = x @ W1 + b1
    a1 = np.maximum(z1, 0.0)
    return a1 @ W2 + b2, (x, z1, a1)


def _backward_mlp(dout, cache, W1, W2, grads, prefix):
    x, z1, a1 = cache
    grads[f"{prefix}_W2"] += a1.T @ dout
    grads[f"{prefix}_b2"] += dout.sum(axis=0)
    da1 = dout @ W2.T
    dz1 = da1 * (z1 > 0)
    grads[f"{prefix}_W1"] += x.T @ dz1
    grads[f"{prefix}_b1"] += dz1.sum(axis=0)
    return dz1 @ W1.T


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def forward_graph(model: GnnModel, ga: GraphArrays, dtype=None):
    """Full forward pass; returns (embedding, cache) for backprop."""
    p = model.params
    if dtype is not None and p["node_embed"].dtype != dtype:
        p = {k: v.astype(dtype) for k, v in p.items()}
    cfg = model.config
    d = cfg.dim
    n = len(ga.tokens)
    m = len(ga.src)

    h = p["node_embed"][ga.tokens]
    E = p["edge_embed"][ga.ekey] if m else np.zeros((0, d), dtype=h.dtype)
    zeros_e = np.zeros_like(E)

    layers = []
    for _ in range(cfg.layers):
        msg = np.zeros_like(h)
        if m:
            # Receiver view of incoming edges: f_in(h_dst, h_src, e_fwd, 0).
            x_in = np.concatenate([h[ga.dst], h[ga.src], E, zeros_e], axis=1)
            m_in, c_in = _forward_mlp(x_in, p["msg_in_W1"], p["msg_in_b1"],
                                      p["msg_in_W2"], p["msg_in_b2"])
            np.add.at(msg, ga.dst, m_in)
            # Sender view of outgoing edges: f_out(h_src, h_dst, 0, e_fwd).
            x_out = np.concatenate([h[ga.src], h[ga.dst], zeros_e, E], axis=1)
            m_out, c_out = _forward_mlp(x_out, p["msg_out_W1"], p["msg_out_b1"],
                                        p["msg_out_W2"], p["msg_out_b2"])
            np.add.at(msg, ga.src, m_out)
        else:
            c_in = c_out = None
        z = _sigmoid(msg @ p["gru_Wz"] + h @ p["gru_Uz"] + p["gru_bz"])
        r = _sigmoid(msg @ p["gru_Wr"] + h @ p["gru_Ur"] + p["gru_br"])
        rh = r * h
        hh = np.tanh(msg @ p["gru_Wh"] + rh @ p["gru_Uh"] + p["gru_bh"])
        h_new = (1.0 - z) * h + z * hh
        layers.append({"h": h, "msg": msg, "z": z, "r": r, "hh": hh,
                       "c_in": c_in, "c_out": c_out})
        h = h_new
    _check_finite("hidden states", h)

    heads = []
    head_caches = []
    for k in range(cfg.heads):
        a = h @ p[f"head{k}_W"] + p[f"head{k}_b"]
        relu = np.maximum(a, 0.0)
        mu = relu.mean(axis=1, keepdims=True)
        var = relu.var(axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(var + LN_EPS)
        xhat = (relu - mu) * inv
        x = xhat * p[f"head{k}_gamma"] + p[f"head{k}_beta"]
        beta = np.exp(p[f"head{k}_logtemp"])
        s = beta * x
        s_shift = s - s.max(axis=0, keepdims=True)
        expo = np.exp(s_shift)
        denom = expo.sum(axis=0, keepdims=True)
        pool_w = expo / denom  # (n, d); sums to 1 over nodes per dimension
        e_k = (pool_w * x).sum(axis=0)
        heads.append(e_k)
        head_caches.append({"a": a, "relu": relu, "inv": inv, "xhat": xhat,
                            "x": x, "beta": beta, "pool_w": pool_w})
    concat = np.concatenate(heads)
    emb = concat @ p["out_W"] + p["out_b"]
    _check_finite("embedding", emb)
    cache = {"ga": ga, "layers": layers, "h_final": h,
             "head_caches": head_caches, "concat": concat, "params": p,
             "n": n, "m": m}
    return emb, cache


def backward_graph(model: GnnModel, cache: dict, demb: np.ndarray,
                   grads: dict) -> None:
    """Accumulate parameter gradients for one graph into ``grads``."""
    p = cache["params"]
    cfg = model.config
    ga = cache["ga"]
    d = cfg.dim
    n = cache["n"]
    m = cache["m"]

    grads["out_W"] += np.outer(cache["concat"], demb)
    grads["out_b"] += demb
    dconcat = p["out_W"] @ demb

    dh = np.zeros((n, d), dtype=demb.dtype)
    for k in range(cfg.heads):
        hc = cache["head_caches"][k]
        de_k = dconcat[k * d:(k + 1) * d]
        x, pool_w, beta = hc["x"], hc["pool_w"], hc["beta"]
        # e = sum_u pool_w * x (per dimension).
        dx = pool_w * de_k
        dpool = de_k * x  # (n, d)
        ds = pool_w * (dpool - (pool_w * dpool).sum(axis=0, keepdims=True))
        dx += beta * ds
        dbeta = float((x * ds).sum())
        grads[f"head{k}_logtemp"] += beta * dbeta
        grads[f"head{k}_gamma"] += (dx * hc["xhat"]).sum(axis=0)
        grads[f"head{k}_beta"] += dx.sum(axis=0)
        dxhat = dx * p[f"head{k}_gamma"]
        inv, xhat = hc["inv"], hc["xhat"]
        # Layer-norm backward per row.
        drelu = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                       - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        da = drelu * (hc["a"] > 0)
        grads[f"head{k}_W"] += cache["h_final"].T @ da
        grads[f"head{k}_b"] += da.sum(axis=0)
        dh += da @ p[f"head{k}_W"].T

    for layer in reversed(cache["layers"]):
        h, msg, z, r, hh = (layer["h"], layer["msg"], layer["z"], layer["r"],
                            layer["hh"])
        dz = dh * (hh - h)
        dhh = dh * z
        dh_prev = dh * (1.0 - z)
        dhh_pre = dhh * (1.0 - hh * hh)
        grads["gru_Wh"] += msg.T @ dhh_pre
        grads["gru_bh"] += dhh_pre.sum(axis=0)
        drh = dhh_pre @ p["gru_Uh"].T
        grads["gru_Uh"] += (r * h).T @ dhh_pre
        dr = drh * h
        dh_prev += drh * r
        dr_pre = dr * r * (1.0 - r)
        grads["gru_Wr"] += msg.T @ dr_pre
        grads["gru_Ur"] += h.T @ dr_pre
        grads["gru_br"] += dr_pre.sum(axis=0)
        dz_pre = dz * z * (1.0 - z)
        grads["gru_Wz"] += msg.T @ dz_pre
        grads["gru_Uz"] += h.T @ dz_pre
        grads["gru_bz"] += dz_pre.sum(axis=0)
        dmsg = (dhh_pre @ p["gru_Wh"].T + dr_pre @ p["gru_Wr"].T
                + dz_pre @ p["gru_Wz"].T)
        dh_prev += dz_pre @ p["gru_Uz"].T + dr_pre @ p["gru_Ur"].T

        if m:
            dE = np.zeros((m, d), dtype=dh.dtype)
            dm_in = dmsg[ga.dst]
            dx_in = _backward_mlp(dm_in, layer["c_in"], p["msg_in_W1"],
                                  p["msg_in_W2"], grads, "msg_in")
            np.add.at(dh_prev, ga.dst, dx_in[:, 0:d])
            np.add.at(dh_prev, ga.src, dx_in[:, d:2 * d])
            dE += dx_in[:, 2 * d:3 * d]
            dm_out = dmsg[ga.src]
            dx_out = _backward_mlp(dm_out, layer["c_out"], p["msg_out_W1"],
                                   p["msg_out_W2"], grads, "msg_out")
            np.add.at(dh_prev, ga.src, dx_out[:, 0:d])
            np.add.at(dh_prev, ga.dst, dx_out[:, d:2 * d])
            dE += dx_out[:, 3 * d:4 * d]
            np.add.at(grads["edge_embed"], ga.ekey, dE)
        dh = dh_prev

    np.add.at(grads["node_embed"], ga.tokens, dh)


def embed_graph(model: GnnModel, g: Desg, dtype=None) -> np.ndarray:
    emb, _ = forward_graph(model, GraphArrays.from_desg(g, model.vocab), dtype)
    return emb


def embed_graph_detail(model: GnnModel, g: Desg, dtype=None):
    """Embedding plus pooling weights per head, for instrumented tests."""
    emb, cache = forward_graph(model, GraphArrays.from_desg(g, model.vocab),
                               dtype)
    weights = [hc["pool_w"] for hc in cache["head_caches"]]
    return emb, weights


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b) / (na * nb)


def _dcos(a: np.ndarray, b: np.ndarray):
    """Gradients of cos(a, b) with respect to a and b."""
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    c = float(a @ b) / (na * nb)
    da = b / (na * nb) - c * a / (na * na)
    db = a / (na * nb) - c * b / (nb * nb)
    return c, da, db


def batch_loss_and_grads(model: GnnModel, pairs: Sequence[tuple[Desg, Desg]],
                         margin: float,
                         negative_sampler: Optional[Callable] = None,
                         dtype=None):
    """Margin loss over a batch of positive pairs plus sampled negatives.

    ``negative_sampler(pair_index, embeddings)`` returns the flattened graph
    index used as the negative for that pair's first member, or None to skip
    the negative term.  Graphs are flattened as [p0, q0, p1, q1, ...].

    Returns (loss, grads, embeddings).
    """
    if not pairs:
        raise ValueError("empty batch")
    graphs = [g for pair in pairs for g in pair]
    results = [forward_graph(model, GraphArrays.from_desg(g, model.vocab),
                             dtype) for g in graphs]
    embs = [emb for emb, _ in results]
    dembs = [np.zeros_like(e) for e in embs]
    loss = 0.0
    for i in range(len(pairs)):
        pi, qi = 2 * i, 2 * i + 1
        c, dp, dq = _dcos(embs[pi], embs[qi])
        hinge = 1.0 - c - margin
        if hinge > 0.0:
            loss += hinge
            dembs[pi] -= dp
            dembs[qi] -= dq
        if negative_sampler is not None:
            ni = negative_sampler(i, embs)
            if ni is not None:
                if ni == qi:
                    raise ValueError(
                        f"negative for pair {i} is its positive partner")
                c, dp, dn = _dcos(embs[pi], embs[ni])
                hinge = c - margin
                if hinge > 0.0:
                    loss += hinge
                    dembs[pi] += dp
                    dembs[ni] += dn
    grads = {k: np.zeros_like(v) for k, v in results[0][1]["params"].items()}
    for (emb, cache), demb in zip(results, dembs):
        backward_graph(model, cache, demb, grads)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")
    return float(loss), grads, embs
