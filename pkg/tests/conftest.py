import numpy as np
import pytest

from desgsim.pcode import (BasicBlock, PCodeFunction, PCodeOp, Varnode,
                           function_to_json, parse_function)


def dummy_op(seq: int, opcode: str = "COPY") -> PCodeOp:
    if opcode == "COPY":
        return PCodeOp(seq, "COPY", Varnode("register", 0, 8),
                       (Varnode("const", 1, 8),))
    return PCodeOp(seq, opcode, None, (Varnode("const", 0, 8),))


def make_cfg(edges: dict, entry: int = 0, name: str = "f",
             arch: str = "x86") -> PCodeFunction:
    """Minimal function from a successor map; every block gets a filler op
    plus a terminator.  Runs through the parser so invariants hold."""
    blocks = []
    for bid, succs in sorted(edges.items()):
        term = "RETURN" if not succs else ("BRANCH" if len(succs) == 1
                                           else "CBRANCH")
        blocks.append(BasicBlock(bid, (dummy_op(0), dummy_op(1, term)),
                                 tuple(succs)))
    f = PCodeFunction(name=name, arch=arch, entry=entry, blocks=tuple(blocks),
                      meta={"project": "test", "optimization": "O0",
                            "obfuscation": "none"})
    return parse_function(function_to_json(f))


def random_cfg(rng: np.random.Generator, max_blocks: int = 12) -> PCodeFunction:
    """Random digraph rooted at 0; the parser prunes whatever is
    unreachable."""
    n = int(rng.integers(1, max_blocks + 1))
    edges = {}
    for i in range(n):
        succs = [j for j in range(n) if j != i and rng.random() < 0.3]
        edges[i] = succs[:3]
    return make_cfg(edges)


@pytest.fixture
def seven_block_cfg() -> PCodeFunction:
    """Seven-block CFG whose dominance relations match the motivating
    example: v0 dominates v1,v2,v6; v2 dominates v3,v4,v5; v6
    post-dominates v0,v1,v5; v5 post-dominates v2,v3,v4."""
    return make_cfg({0: [1, 2], 1: [6], 2: [3, 4], 3: [5], 4: [5],
                     5: [6], 6: []})
