import numpy as np
import pytest

from desgsim.desg import build_desg
from desgsim.gnn import (EDGE_KEYS, UNK, GnnConfig, GraphArrays, NumericError,
                         Vocab, backward_graph, batch_loss_and_grads, cosine,
                         embed_graph, embed_graph_detail, forward_graph,
                         init_model)
from desgsim.pcode import parse_function


def two_block_doc(perm=None):
    perm = perm or {0: 0, 1: 1, 2: 2}
    op = lambda opc: {"seq": 0, "opcode": opc, "output": None,
                      "inputs": [{"space": "const", "offset": "0", "size": 8,
                                  "symbol": None}]}
    blocks = [
        {"id": perm[0], "successors": [perm[1], perm[2]], "ops": [op("CBRANCH")]},
        {"id": perm[1], "successors": [], "ops": [op("RETURN")]},
        {"id": perm[2], "successors": [], "ops": [op("RETURN")]},
    ]
    return {"name": "f", "arch": "x86", "entry": perm[0],
            "meta": {"project": "t", "optimization": "O0",
                     "obfuscation": "none"}, "blocks": blocks}


@pytest.fixture
def small_graph():
    return build_desg(parse_function(two_block_doc()))


@pytest.fixture
def small_model(small_graph):
    vocab = Vocab.build([small_graph])
    return init_model(vocab, GnnConfig(dim=5, layers=2, heads=2), seed=3,
                      dtype=np.float64)


class TestVocab:
    def test_unk_is_index_zero(self, small_graph):
        v = Vocab.build([small_graph])
        assert v.token_index[UNK] == 0
        assert v.lookup("never-seen-token") == 0

    def test_deterministic_order(self, small_graph):
        a = Vocab.build([small_graph])
        b = Vocab.build([small_graph])
        assert a.token_index == b.token_index

    def test_edge_vocab_fixed(self, small_graph):
        v = Vocab.build([small_graph])
        assert len(v.edge_index) == len(EDGE_KEYS) == 7


class TestForwardOracle:
    """Compare the vectorized forward pass against a per-node, per-edge
    scalar reimplementation written independently of the module."""

    def naive_forward(self, p, cfg, tokens, edges, ekeys):
        d = cfg.dim
        relu = lambda x: np.maximum(x, 0.0)
        sig = lambda x: 1.0 / (1.0 + np.exp(-x))

        def mlp(side, x):
            h1 = relu(x @ p[f"msg_{side}_W1"] + p[f"msg_{side}_b1"])
            return h1 @ p[f"msg_{side}_W2"] + p[f"msg_{side}_b2"]

        h = [p["node_embed"][t].copy() for t in tokens]
        for _ in range(cfg.layers):
            msg = [np.zeros(d) for _ in tokens]
            for (s, t), ek in zip(edges, ekeys):
                e = p["edge_embed"][ek]
                zero = np.zeros(d)
                msg[t] = msg[t] + mlp("in", np.concatenate([h[t], h[s], e, zero]))
                msg[s] = msg[s] + mlp("out", np.concatenate([h[s], h[t], zero, e]))
            nh = []
            for u in range(len(tokens)):
                z = sig(msg[u] @ p["gru_Wz"] + h[u] @ p["gru_Uz"] + p["gru_bz"])
                r = sig(msg[u] @ p["gru_Wr"] + h[u] @ p["gru_Ur"] + p["gru_br"])
                hh = np.tanh(msg[u] @ p["gru_Wh"] + (r * h[u]) @ p["gru_Uh"]
                             + p["gru_bh"])
                nh.append((1 - z) * h[u] + z * hh)
            h = nh
        H = np.stack(h)

        heads = []
        for k in range(cfg.heads):
            a = relu(H @ p[f"head{k}_W"] + p[f"head{k}_b"])
            mu = a.mean(axis=1, keepdims=True)
            sd = np.sqrt(a.var(axis=1, keepdims=True) + 1e-5)
            x = (a - mu) / sd * p[f"head{k}_gamma"] + p[f"head{k}_beta"]
            beta = np.exp(p[f"head{k}_logtemp"])
            w = np.exp(beta * x)
            w = w / w.sum(axis=0, keepdims=True)
            heads.append((w * x).sum(axis=0))
        return np.concatenate(heads) @ p["out_W"] + p["out_b"]

    def test_matches_vectorized(self, small_graph, small_model):
        ga = GraphArrays.from_desg(small_graph, small_model.vocab)
        got, _ = forward_graph(small_model, ga)
        want = self.naive_forward(small_model.params, small_model.config,
                                  list(ga.tokens),
                                  list(zip(ga.src, ga.dst)), list(ga.ekey))
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)

    def test_matches_on_random_graphs(self, small_model):
        rng = np.random.default_rng(21)
        vocab = small_model.vocab
        for _ in range(10):
            n = int(rng.integers(1, 7))
            tokens = rng.integers(0, len(vocab), size=n)
            m = int(rng.integers(0, 2 * n))
            src = rng.integers(0, n, size=m)
            dst = rng.integers(0, n, size=m)
            ekey = rng.integers(0, len(EDGE_KEYS), size=m)
            ga = GraphArrays(tokens, src, dst, ekey)
            got, _ = forward_graph(small_model, ga)
            want = self.naive_forward(small_model.params, small_model.config,
                                      list(tokens), list(zip(src, dst)),
                                      list(ekey))
            np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-11)


class TestInvariance:
    def test_block_permutation_changes_nothing(self):
        fa = parse_function(two_block_doc())
        fb = parse_function(two_block_doc({0: 0, 1: 2, 2: 1}))
        ga, gb = build_desg(fa), build_desg(fb)
        vocab = Vocab.build([ga, gb])
        model = init_model(vocab, GnnConfig(dim=8, layers=2, heads=2), seed=1)
        ea = embed_graph(model, ga, dtype=np.float64)
        eb = embed_graph(model, gb, dtype=np.float64)
        assert abs(cosine(ea, eb) - 1.0) < 1e-6

    def test_pooling_weights_sum_to_one(self, small_graph, small_model):
        _, weights = embed_graph_detail(small_model, small_graph)
        for w in weights:
            np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-12)
            assert np.all(w >= 0)

    def test_single_node_pooling_is_identityish(self, small_model):
        ga = GraphArrays(np.array([1]), np.array([], dtype=np.int64),
                         np.array([], dtype=np.int64),
                         np.array([], dtype=np.int64))
        emb, cache = forward_graph(small_model, ga)
        for hc in cache["head_caches"]:
            np.testing.assert_allclose(hc["pool_w"], 1.0)


class TestGradients:
    def test_finite_difference_spot_check(self, small_graph):
        vocab = Vocab.build([small_graph])
        model = init_model(vocab, GnnConfig(dim=4, layers=1, heads=2), seed=5,
                           dtype=np.float64)
        ga = GraphArrays.from_desg(small_graph, vocab)
        rng = np.random.default_rng(0)
        demb = rng.standard_normal(model.config.output_dim)

        def scalar():
            emb, _ = forward_graph(model, ga)
            return float(emb @ demb)

        emb, cache = forward_graph(model, ga)
        grads = model.zero_grads()
        backward_graph(model, cache, demb, grads)

        eps = 1e-6
        for name in ("node_embed", "edge_embed", "gru_Uh", "msg_in_W1",
                     "head0_logtemp", "out_W"):
            p = model.params[name]
            flat = p.reshape(-1) if p.ndim else p.reshape(1)
            gflat = grads[name].reshape(-1) if p.ndim else grads[name].reshape(1)
            idx = rng.integers(0, flat.size, size=min(4, flat.size))
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                up = scalar()
                flat[i] = orig - eps
                dn = scalar()
                flat[i] = orig
                num = (up - dn) / (2 * eps)
                assert abs(num - gflat[i]) <= 1e-5 * max(1.0, abs(num)), name


class TestBatchLoss:
    def test_identical_pair_zero_loss(self, small_graph, small_model):
        loss, grads, embs = batch_loss_and_grads(
            small_model, [(small_graph, small_graph)], margin=0.5)
        assert loss == 0.0
        assert all(np.all(g == 0) for g in grads.values())

    def test_positive_term_active_with_negative_margin(self, small_graph,
                                                       small_model):
        loss, grads, _ = batch_loss_and_grads(
            small_model, [(small_graph, small_graph)], margin=-0.5)
        assert loss == pytest.approx(0.5, abs=1e-6)
        assert any(np.any(g != 0) for g in grads.values())

    def test_empty_batch_rejected(self, small_model):
        with pytest.raises(ValueError):
            batch_loss_and_grads(small_model, [], margin=0.5)

    def test_negative_equal_to_partner_rejected(self, small_graph,
                                                small_model):
        with pytest.raises(ValueError, match="positive partner"):
            batch_loss_and_grads(small_model, [(small_graph, small_graph)],
                                 margin=0.5, negative_sampler=lambda i, e: 1)

    def test_nan_parameter_raises_numeric_error(self, small_graph,
                                                small_model):
        small_model.params["gru_Wz"][0, 0] = np.nan
        with pytest.raises(NumericError):
            embed_graph(small_model, small_graph)


class TestCosine:
    def test_scale_invariant(self):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal(8), rng.standard_normal(8)
        assert cosine(a, b) == pytest.approx(cosine(3.0 * a, 0.1 * b))

    def test_zero_vector(self):
        assert cosine(np.zeros(4), np.ones(4)) == 0.0

    def test_self_similarity(self):
        a = np.array([1.0, 2.0, -3.0])
        assert cosine(a, a) == pytest.approx(1.0)


def test_empty_graph_rejected(small_model):
    from desgsim.desg import Desg
    with pytest.raises(ValueError):
        GraphArrays.from_desg(Desg(nodes=[], edges=[]), small_model.vocab)
