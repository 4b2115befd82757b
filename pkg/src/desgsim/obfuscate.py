"""Graph-level synthetic obfuscation transforms for desk-scale experiments.

These mimic the shape of compiler-level instruction substitution (sub),
bogus control flow (bcf), and control flow flattening (fla) without
running an obfuscating compiler: sub rewrites arithmetic ops into
equivalent multi-op sequences, bcf inserts opaque-predicate blocks with
never-taken edges, fla routes every branching block through a dispatcher.
Function identity (name / group id) is preserved.
"""

from __future__ import annotations

import numpy as np

from .pcode import BasicBlock, PCodeFunction, PCodeOp, Varnode

MODES = ("sub", "bcf", "fla", "all")


class _UniqueAlloc:
    def __init__(self, f: PCodeFunction):
        top = 0
        for b in f.blocks:
            for op in b.ops:
                for v in (op.inputs + ((op.output,) if op.output else ())):
                    if v.space == "unique":
                        top = max(top, v.offset + 1)
        self.next = top + 0x1000

    def fresh(self, size: int) -> Varnode:
        v = Varnode("unique", self.next, size)
        self.next += 0x10
        return v


def _renumber(ops: list[PCodeOp]) -> tuple[PCodeOp, ...]:
    return tuple(PCodeOp(i, op.opcode, op.output, op.inputs)
                 for i, op in enumerate(ops))


def _with_meta(f: PCodeFunction, blocks, mode: str) -> PCodeFunction:
    meta = dict(f.meta)
    meta["obfuscation"] = mode
    return PCodeFunction(name=f.name, arch=f.arch, entry=f.entry,
                         blocks=tuple(blocks), meta=meta)


def _sub(f: PCodeFunction, rng: np.random.Generator) -> PCodeFunction:
    alloc = _UniqueAlloc(f)
    blocks = []
    for b in f.blocks:
        ops: list[PCodeOp] = []
        for op in b.ops:
            if op.opcode == "INT_ADD" and len(op.inputs) == 2:
                # a + b  ->  a - (-b)
                t = alloc.fresh(op.inputs[1].size)
                ops.append(PCodeOp(0, "INT_2COMP", t, (op.inputs[1],)))
                ops.append(PCodeOp(0, "INT_SUB", op.output, (op.inputs[0], t)))
            elif op.opcode == "INT_SUB" and len(op.inputs) == 2:
                # a - b  ->  a + b * -1
                bsize = op.inputs[1].size
                minus_one = Varnode("const", (1 << (8 * bsize)) - 1, bsize)
                t = alloc.fresh(bsize)
                ops.append(PCodeOp(0, "INT_MULT", t, (op.inputs[1], minus_one)))
                ops.append(PCodeOp(0, "INT_ADD", op.output, (op.inputs[0], t)))
            elif op.opcode == "INT_XOR" and len(op.inputs) == 2:
                # a ^ b  ->  (a | b) - (a & b)
                size = op.inputs[0].size
                t1, t2 = alloc.fresh(size), alloc.fresh(size)
                ops.append(PCodeOp(0, "INT_OR", t1, op.inputs))
                ops.append(PCodeOp(0, "INT_AND", t2, op.inputs))
                ops.append(PCodeOp(0, "INT_SUB", op.output, (t1, t2)))
            else:
                ops.append(op)
        blocks.append(BasicBlock(b.id, _renumber(ops), b.successors))
    return _with_meta(f, blocks, "sub")


def _opaque_ops(alloc: _UniqueAlloc, size: int = 4) -> list[PCodeOp]:
    x = Varnode("const", 7, size)
    t1 = alloc.fresh(size)
    t2 = alloc.fresh(size)
    return [
        PCodeOp(0, "INT_MULT", t1, (x, x)),
        PCodeOp(0, "INT_EQUAL", t2, (t1, Varnode("const", 49, size))),
        PCodeOp(0, "CBRANCH", None, (Varnode("const", 0, 8), t2)),
    ]


def _bcf(f: PCodeFunction, rng: np.random.Generator) -> PCodeFunction:
    alloc = _UniqueAlloc(f)
    blocks = {b.id: [list(b.ops), list(b.successors)] for b in f.blocks}
    n = len(f.blocks)
    n_fake = int(rng.integers(1, n + 1))  # block count stays in (n, 2n]
    next_id = max(blocks) + 1
    for _ in range(n_fake):
        host = int(rng.choice(sorted(blocks)[:n]))  # originals host the fakes
        host_succs = blocks[host][1]
        # Fake branch target: somewhere the host could already go, else back
        # to the host (the edge is never taken at runtime either way).
        target = int(rng.choice(host_succs)) if host_succs else host
        fid = next_id
        next_id += 1
        blocks[fid] = [_opaque_ops(alloc), [target]]
        blocks[host][1] = host_succs + [fid]
    out = [BasicBlock(bid, _renumber(ops), tuple(succs))
           for bid, (ops, succs) in sorted(blocks.items())]
    return _with_meta(f, out, "bcf")


def _fla(f: PCodeFunction, rng: np.random.Generator) -> PCodeFunction:
    alloc = _UniqueAlloc(f)
    disp_id = max(b.id for b in f.blocks) + 1
    targets: set[int] = set()
    blocks = []
    for b in f.blocks:
        if b.successors:
            targets.update(b.successors)
            blocks.append(BasicBlock(b.id, b.ops, (disp_id,)))
        else:
            blocks.append(BasicBlock(b.id, b.ops, ()))
    state = alloc.fresh(8)
    disp_ops = [
        PCodeOp(0, "COPY", state, (Varnode("const", 0, 8),)),
        PCodeOp(1, "BRANCHIND", None, (state,)),
    ]
    blocks.append(BasicBlock(disp_id, tuple(disp_ops), tuple(sorted(targets))))
    return _with_meta(f, blocks, "fla")


def synth_obfuscate(f: PCodeFunction, mode: str, seed: int) -> PCodeFunction:
    """Apply one synthetic obfuscation mode; ``all`` composes sub.bcf.fla."""
    rng = np.random.default_rng(seed)
    if mode == "sub":
        return _sub(f, rng)
    if mode == "bcf":
        return _bcf(f, rng)
    if mode == "fla":
        return _fla(f, rng)
    if mode == "all":
        g = _sub(_bcf(_fla(f, rng), rng), rng)
        return _with_meta(g, g.blocks, "all")
    raise ValueError(f"unknown obfuscation mode {mode!r}")
