"""DESG construction: ISG -> TSG -> BBSG -> merged dominance-enhanced graph.

A built graph carries three node kinds (bblock / opcode / operand) and five
edge kinds (data / effect / contain / dominate / postdominate); raw
control-flow edges never appear.  Data edges additionally carry an operand
position (out / in1 / in2plus) used to key edge embeddings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .dominance import (DomTree, PostDomTree, VIRTUAL_EXIT, dominator_tree,
                        post_dominator_tree)
from .pcode import (MEMORY_OPCODES, MEMORY_WRITE_OPCODES, PCodeFunction,
                    normalize_varnode)

NODE_KINDS = ("bblock", "opcode", "operand")
EDGE_KINDS = ("data", "effect", "contain", "dominate", "postdominate")
DATA_POSITIONS = ("out", "in1", "in2plus")

BB_INDEX_CAP = 256  # bblock attrs above this collapse to BB_OVF

DESG_FORMAT_VERSION = 1


@dataclass(frozen=True)
class DesgNode:
    id: int
    kind: str
    attr: str


@dataclass(frozen=True)
class DesgEdge:
    src: int
    dst: int
    kind: str
    pos: str = "none"  # meaningful for data edges only


@dataclass
class Desg:
    nodes: list[DesgNode]
    edges: list[DesgEdge]
    func_meta: dict = field(default_factory=dict)


def bblock_attr(index: int) -> str:
    return f"BB_{index}" if index < BB_INDEX_CAP else "BB_OVF"


@dataclass
class _Isg:
    """Instruction-level graph; op nodes are (block_id, position) keys."""

    ops: list[tuple[int, int]]  # (block id, index within block)
    data: list[tuple[tuple[int, int], tuple[int, int]]]  # consumer -> producer
    effect: list[tuple[tuple[int, int], tuple[int, int]]]  # later -> earlier
    defs: dict  # varnode key -> producing op key, unambiguous defs only
    func: PCodeFunction


def _varnode_key(v) -> tuple:
    return (v.space, v.offset, v.size)


def build_isg(f: PCodeFunction) -> _Isg:
    """One node per op; data edges for resolved def-use; effect chain over
    memory-touching ops in program order within each block."""
    # A use resolves to its producer only when exactly one op in the whole
    # function defines that varnode (the exporter conveys def-use via
    # unique-space varnode identity; ambiguous defs get no edge).
    def_count: dict[tuple, int] = {}
    def_site: dict[tuple, tuple[int, int]] = {}
    for b in f.blocks:
        for i, op in enumerate(b.ops):
            if op.output is not None:
                key = _varnode_key(op.output)
                def_count[key] = def_count.get(key, 0) + 1
                def_site[key] = (b.id, i)
    defs = {k: s for k, s in def_site.items() if def_count[k] == 1}

    ops = []
    data = []
    effect = []
    for b in f.blocks:
        mem_prev: Optional[tuple[int, int]] = None
        mem_prev_opc: Optional[str] = None
        for i, op in enumerate(b.ops):
            node = (b.id, i)
            ops.append(node)
            for v in op.inputs:
                producer = defs.get(_varnode_key(v))
                if producer is not None and producer != node:
                    data.append((node, producer))
            if op.opcode in MEMORY_OPCODES:
                if mem_prev is not None and (
                        op.opcode in MEMORY_WRITE_OPCODES
                        or mem_prev_opc in MEMORY_WRITE_OPCODES):
                    effect.append((node, mem_prev))
                mem_prev = node
                mem_prev_opc = op.opcode
    return _Isg(ops=ops, data=data, effect=effect, defs=defs, func=f)


@dataclass
class _Tsg:
    """Token-level graph over dense node ids."""

    nodes: list[DesgNode]
    edges: list[DesgEdge]
    opcode_of_op: dict  # op key -> opcode node id


def build_tsg(isg: _Isg) -> _Tsg:
    f = isg.func
    nodes: list[DesgNode] = []
    edges: list[DesgEdge] = []

    def new_node(kind: str, attr: str) -> int:
        nid = len(nodes)
        nodes.append(DesgNode(nid, kind, attr))
        return nid

    block_map = f.block_map()
    opcode_of_op: dict = {}
    output_node_of_op: dict = {}

    # First pass: opcode nodes plus their output operand nodes, so value
    # unification can target producers regardless of block order.
    for key in isg.ops:
        bid, i = key
        op = block_map[bid].ops[i]
        opc = new_node("opcode", op.opcode)
        opcode_of_op[key] = opc
        if op.output is not None:
            out = new_node("operand", normalize_varnode(op.output, f.arch).text)
            output_node_of_op[key] = out
            edges.append(DesgEdge(out, opc, "data", "out"))

    # Second pass: source operands; reuse the producer's output node when the
    # def is unambiguous, otherwise mint a fresh operand node per use.
    for key in isg.ops:
        bid, i = key
        op = block_map[bid].ops[i]
        for k, v in enumerate(op.inputs):
            producer = isg.defs.get(_varnode_key(v))
            if producer is not None and producer != key and producer in output_node_of_op:
                operand = output_node_of_op[producer]
            else:
                operand = new_node("operand", normalize_varnode(v, f.arch).text)
            pos = "in1" if k == 0 else "in2plus"
            edges.append(DesgEdge(opcode_of_op[key], operand, "data", pos))

    # Effect edges migrate onto the opcode tokens.
    for later, earlier in isg.effect:
        edges.append(DesgEdge(opcode_of_op[later], opcode_of_op[earlier], "effect"))

    return _Tsg(nodes=nodes, edges=edges, opcode_of_op=opcode_of_op)


@dataclass
class _Bbsg:
    nodes: list[DesgNode]  # one bblock node per basic block, id == block id
    dominate: list[tuple[int, int]]
    postdominate: list[tuple[int, int]]


def build_bbsg(f: PCodeFunction, dt: DomTree, pdt: PostDomTree) -> _Bbsg:
    nodes = [DesgNode(b.id, "bblock", bblock_attr(b.id)) for b in f.blocks]
    dominate = sorted((p, c) for c, p in dt.idom.items())
    postdominate = sorted((p, c) for c, p in pdt.ipdom.items()
                          if p != VIRTUAL_EXIT and c != VIRTUAL_EXIT)
    return _Bbsg(nodes=nodes, dominate=dominate, postdominate=postdominate)


def build_desg(f: PCodeFunction) -> Desg:
    """Run the full construction and merge with contain edges."""
    isg = build_isg(f)
    tsg = build_tsg(isg)
    bbsg = build_bbsg(f, dominator_tree(f), post_dominator_tree(f))

    # bblock nodes first (ids 0..blocks-1), then token nodes shifted.
    shift = len(bbsg.nodes)
    nodes = list(bbsg.nodes)
    nodes.extend(DesgNode(n.id + shift, n.kind, n.attr) for n in tsg.nodes)
    edges = [DesgEdge(s, d, "dominate") for s, d in bbsg.dominate]
    edges.extend(DesgEdge(s, d, "postdominate") for s, d in bbsg.postdominate)
    edges.extend(DesgEdge(e.src + shift, e.dst + shift, e.kind, e.pos)
                 for e in tsg.edges)
    for (bid, _i), opc in sorted(tsg.opcode_of_op.items()):
        edges.append(DesgEdge(bid, opc + shift, "contain"))

    meta = dict(f.meta)
    meta["name"] = f.name
    meta["arch"] = f.arch
    meta["blocks"] = len(f.blocks)
    return Desg(nodes=nodes, edges=edges, func_meta=meta)


def desg_stats(g: Desg) -> dict:
    if not g.nodes:
        raise ValueError("empty graph has no stats")
    node_kinds = {k: 0 for k in NODE_KINDS}
    for n in g.nodes:
        node_kinds[n.kind] += 1
    edge_kinds = {k: 0 for k in EDGE_KINDS}
    for e in g.edges:
        edge_kinds[e.kind] += 1
    vocab = sorted({n.attr for n in g.nodes})
    return {"nodes": len(g.nodes), "edges": len(g.edges),
            "node_kinds": node_kinds, "edge_kinds": edge_kinds,
            "vocab_size": len(vocab), "vocab": vocab}


def desg_to_json(g: Desg) -> str:
    """Stable serialization: nodes by id, edges lexicographic; byte-exact
    across rebuilds of the same function."""
    doc = {
        "version": DESG_FORMAT_VERSION,
        "meta": g.func_meta,
        "nodes": [[n.id, n.kind, n.attr] for n in sorted(g.nodes, key=lambda n: n.id)],
        "edges": sorted([e.src, e.dst, e.kind, e.pos] for e in g.edges),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def desg_from_json(text: str) -> Desg:
    doc = json.loads(text)
    if doc.get("version") != DESG_FORMAT_VERSION:
        raise ValueError(f"unsupported graph format version {doc.get('version')!r}")
    nodes = [DesgNode(i, k, a) for i, k, a in doc["nodes"]]
    edges = [DesgEdge(s, d, k, p) for s, d, k, p in doc["edges"]]
    return Desg(nodes=nodes, edges=edges, func_meta=doc.get("meta", {}))
