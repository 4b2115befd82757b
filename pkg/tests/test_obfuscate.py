import numpy as np
import pytest

from desgsim.fixtures import random_function
from desgsim.obfuscate import MODES, synth_obfuscate
from desgsim.pcode import function_to_json, parse_function


@pytest.fixture
def base():
    return random_function("fn_test", seed=77, min_blocks=4, max_blocks=8)


def reparse(f):
    """Transformed output must still satisfy every structural invariant."""
    return parse_function(function_to_json(f))


class TestSub:
    def test_arith_rewrites_preserve_cfg(self, base):
        g = synth_obfuscate(base, "sub", seed=0)
        assert len(g.blocks) == len(base.blocks)
        for ob, nb in zip(base.blocks, g.blocks):
            assert ob.successors == nb.successors

    def test_add_becomes_negate_subtract(self, base):
        g = synth_obfuscate(base, "sub", seed=0)
        opcodes = [op.opcode for b in g.blocks for op in b.ops]
        assert "INT_ADD" not in [
            op.opcode for b in g.blocks for op in b.ops
            if op.opcode == "INT_ADD" and "INT_2COMP" not in opcodes]
        # every original INT_ADD contributes an INT_2COMP
        n_add = sum(op.opcode == "INT_ADD" for b in base.blocks for op in b.ops)
        n_neg = sum(op.opcode == "INT_2COMP" for b in g.blocks for op in b.ops)
        assert n_neg >= n_add  # INT_SUB rewrites emit fresh INT_ADDs

    def test_xor_eliminated(self, base):
        g = synth_obfuscate(base, "sub", seed=0)
        assert not any(op.opcode == "INT_XOR" for b in g.blocks for op in b.ops)

    def test_deterministic(self, base):
        a = function_to_json(synth_obfuscate(base, "sub", seed=3))
        b = function_to_json(synth_obfuscate(base, "sub", seed=3))
        assert a == b

    def test_still_parses(self, base):
        reparse(synth_obfuscate(base, "sub", seed=1))


class TestBcf:
    def test_block_count_grows_within_bound(self, base):
        n = len(base.blocks)
        for seed in range(10):
            g = synth_obfuscate(base, "bcf", seed=seed)
            assert n < len(g.blocks) <= 2 * n

    def test_fake_blocks_carry_opaque_predicate(self, base):
        g = synth_obfuscate(base, "bcf", seed=2)
        orig_ids = {b.id for b in base.blocks}
        fakes = [b for b in g.blocks if b.id not in orig_ids]
        assert fakes
        for b in fakes:
            assert [op.opcode for op in b.ops] == ["INT_MULT", "INT_EQUAL",
                                                   "CBRANCH"]
            assert len(b.successors) == 1

    def test_hosts_gain_one_edge_per_fake(self, base):
        g = synth_obfuscate(base, "bcf", seed=2)
        orig_edges = sum(len(b.successors) for b in base.blocks)
        new_edges = sum(len(b.successors) for b in g.blocks)
        n_fake = len(g.blocks) - len(base.blocks)
        assert new_edges == orig_edges + 2 * n_fake  # host edge + fake's own

    def test_still_parses_everything_reachable(self, base):
        g = reparse(synth_obfuscate(base, "bcf", seed=5))
        assert g.pruned_blocks == 0


class TestFla:
    def test_dispatcher_added_with_fresh_id(self, base):
        g = synth_obfuscate(base, "fla", seed=0)
        disp_id = max(b.id for b in base.blocks) + 1
        disp = next(b for b in g.blocks if b.id == disp_id)
        assert [op.opcode for op in disp.ops] == ["COPY", "BRANCHIND"]

    def test_branching_blocks_route_through_dispatcher(self, base):
        g = synth_obfuscate(base, "fla", seed=0)
        disp_id = max(b.id for b in base.blocks) + 1
        former_targets = {s for b in base.blocks for s in b.successors}
        for b in g.blocks:
            if b.id == disp_id:
                assert set(b.successors) == former_targets
            elif b.successors:
                assert b.successors == (disp_id,)

    def test_exit_blocks_untouched(self, base):
        g = synth_obfuscate(base, "fla", seed=0)
        base_exits = {b.id for b in base.blocks if not b.successors}
        got_exits = {b.id for b in g.blocks if not b.successors}
        assert base_exits == got_exits

    def test_still_parses(self, base):
        reparse(synth_obfuscate(base, "fla", seed=4))


class TestAll:
    def test_composes_every_layer(self, base):
        g = synth_obfuscate(base, "all", seed=0)
        assert g.meta["obfuscation"] == "all"
        opcodes = {op.opcode for b in g.blocks for op in b.ops}
        assert "BRANCHIND" in opcodes  # flattening happened
        assert "INT_EQUAL" in opcodes  # opaque predicates happened
        assert "INT_XOR" not in opcodes  # substitution happened
        assert len(g.blocks) > len(base.blocks)

    def test_name_and_identity_preserved(self, base):
        for mode in MODES:
            g = synth_obfuscate(base, mode, seed=1)
            assert g.name == base.name
            assert g.arch == base.arch
            assert g.meta["obfuscation"] == mode

    def test_unknown_mode_rejected(self, base):
        with pytest.raises(ValueError):
            synth_obfuscate(base, "upx", seed=0)

    def test_graphs_survive_pipeline(self, base):
        from desgsim.desg import build_desg, desg_stats
        for mode in MODES:
            g = reparse(synth_obfuscate(base, mode, seed=6))
            stats = desg_stats(build_desg(g))
            assert stats["nodes"] > 0
