"""Seeded synthetic P-Code corpora: random functions plus obfuscated
variants grouped by identity, for desk-scale training and evaluation."""

from __future__ import annotations

import numpy as np

from .obfuscate import MODES, synth_obfuscate
from .pcode import BasicBlock, PCodeFunction, PCodeOp, Varnode

LIB_SYMBOLS = ("memcpy", "strlen", "malloc", "free", "printf")

_ARITH = ("INT_ADD", "INT_SUB", "INT_XOR", "INT_AND", "INT_OR", "INT_MULT")


def _rand_varnode(rng: np.random.Generator, arch: str, defined: list[Varnode]):
    roll = rng.random()
    if roll < 0.35 and defined:
        return defined[int(rng.integers(len(defined)))]
    if roll < 0.6:
        return Varnode("register", int(rng.choice([0, 8, 16, 32])), 8)
    if roll < 0.85:
        return Varnode("const", int(rng.integers(0, 64)), 8)
    return Varnode("stack", int(rng.integers(0, 0x40)), 8)


def random_function(name: str, seed: int, min_blocks: int = 3,
                    max_blocks: int = 10) -> PCodeFunction:
    rng = np.random.default_rng(seed)
    arch = str(rng.choice(["x86", "ARM"]))
    nb = int(rng.integers(min_blocks, max_blocks + 1))
    unique_off = 0x100
    blocks = []
    for bid in range(nb):
        ops: list[PCodeOp] = []
        defined: list[Varnode] = []
        n_ops = int(rng.integers(2, 7))
        for _ in range(n_ops):
            nonlocal_roll = rng.random()
            if nonlocal_roll < 0.55:
                out = Varnode("unique", unique_off, 8)
                unique_off += 0x10
                a = _rand_varnode(rng, arch, defined)
                b = _rand_varnode(rng, arch, defined)
                ops.append(PCodeOp(0, str(rng.choice(_ARITH)), out, (a, b)))
                defined.append(out)
            elif nonlocal_roll < 0.7:
                out = Varnode("unique", unique_off, 8)
                unique_off += 0x10
                addr = _rand_varnode(rng, arch, defined)
                ops.append(PCodeOp(0, "LOAD", out, (addr,)))
                defined.append(out)
            elif nonlocal_roll < 0.8:
                addr = _rand_varnode(rng, arch, defined)
                val = _rand_varnode(rng, arch, defined)
                ops.append(PCodeOp(0, "STORE", None, (addr, val)))
            elif nonlocal_roll < 0.9:
                sym = (str(rng.choice(LIB_SYMBOLS))
                       if rng.random() < 0.6 else None)
                tgt = Varnode("ram", int(rng.integers(0x1000, 0x9000)), 8, sym)
                ops.append(PCodeOp(0, "CALL", None, (tgt,)))
            else:
                out = Varnode("register", int(rng.choice([0, 8, 16])), 8)
                ops.append(PCodeOp(0, "COPY", out,
                                   (_rand_varnode(rng, arch, defined),)))
        # Terminator + successors: chain backbone keeps everything reachable.
        if bid == nb - 1:
            ops.append(PCodeOp(0, "RETURN", None,
                               (Varnode("register", 0, 8),)))
            succs: tuple[int, ...] = ()
        else:
            succs = (bid + 1,)
            if rng.random() < 0.45:
                extra = int(rng.integers(0, nb))
                if extra != bid + 1:
                    succs = (bid + 1, extra)
            if len(succs) == 2:
                cond = _rand_varnode(rng, arch, defined)
                ops.append(PCodeOp(0, "CBRANCH", None,
                                   (Varnode("const", 0, 8), cond)))
            else:
                ops.append(PCodeOp(0, "BRANCH", None,
                                   (Varnode("const", 0, 8),)))
        ops = [PCodeOp(i, op.opcode, op.output, op.inputs)
               for i, op in enumerate(ops)]
        blocks.append(BasicBlock(bid, tuple(ops), succs))
    return PCodeFunction(
        name=name, arch=arch, entry=0, blocks=tuple(blocks),
        meta={"project": "synth", "optimization": "O0", "obfuscation": "none"})


def generate_corpus(n_groups: int, seed: int,
                    variants=("sub", "bcf", "fla", "all"),
                    min_blocks: int = 3, max_blocks: int = 10):
    """Return a list of functions: each group is one base function plus its
    obfuscated variants, all sharing the base name as group id."""
    if n_groups <= 0:
        raise ValueError("need at least one group")
    for v in variants:
        if v not in MODES:
            raise ValueError(f"unknown variant {v!r}")
    out = []
    for i in range(n_groups):
        base = random_function(f"fn_{i:04d}", seed + 1000 * i,
                               min_blocks, max_blocks)
        out.append(base)
        for j, mode in enumerate(variants):
            out.append(synth_obfuscate(base, mode, seed + 1000 * i + j + 1))
    return out
