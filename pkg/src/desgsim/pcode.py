"""P-Code data model, interchange-format parsing, and varnode normalization.

One interchange document per function:

    {"name": str, "arch": "x86"|"ARM", "entry": int,
     "meta": {"project": str, "optimization": str, "obfuscation": str},
     "blocks": [{"id": int, "successors": [int],
                 "ops": [{"seq": int, "opcode": str,
                          "output": varnode|null, "inputs": [varnode]}]}]}

where varnode = {"space": "ram"|"register"|"const"|"unique"|"stack",
                 "offset": "<hex-string>", "size": int, "symbol": str|null}.

Offsets travel as hex strings to avoid 64-bit precision loss in JSON.
Documents may be concatenated one per line in a corpus file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

SPACES = ("ram", "register", "const", "unique", "stack")
ARCHES = ("x86", "ARM")

# Raw P-Code mnemonics accepted by the interchange schema.
OPCODES = frozenset({
    "COPY", "LOAD", "STORE", "BRANCH", "CBRANCH", "BRANCHIND",
    "CALL", "CALLIND", "CALLOTHER", "RETURN",
    "INT_EQUAL", "INT_NOTEQUAL", "INT_SLESS", "INT_SLESSEQUAL",
    "INT_LESS", "INT_LESSEQUAL", "INT_ZEXT", "INT_SEXT",
    "INT_ADD", "INT_SUB", "INT_CARRY", "INT_SCARRY", "INT_SBORROW",
    "INT_2COMP", "INT_NEGATE", "INT_XOR", "INT_AND", "INT_OR",
    "INT_LEFT", "INT_RIGHT", "INT_SRIGHT", "INT_MULT",
    "INT_DIV", "INT_SDIV", "INT_REM", "INT_SREM",
    "BOOL_NEGATE", "BOOL_XOR", "BOOL_AND", "BOOL_OR",
    "FLOAT_EQUAL", "FLOAT_NOTEQUAL", "FLOAT_LESS", "FLOAT_LESSEQUAL",
    "FLOAT_NAN", "FLOAT_ADD", "FLOAT_DIV", "FLOAT_MULT", "FLOAT_SUB",
    "FLOAT_NEG", "FLOAT_ABS", "FLOAT_SQRT",
    "INT2FLOAT", "FLOAT2FLOAT", "TRUNC",
    "FLOAT_CEIL", "FLOAT_FLOOR", "FLOAT_ROUND",
    "MULTIEQUAL", "INDIRECT", "PIECE", "SUBPIECE", "CAST",
    "PTRADD", "PTRSUB", "POPCOUNT", "LZCOUNT",
    "SEGMENTOP", "CPOOLREF", "NEW",
})

# Ops that may touch memory; basis of the effect-relation chain.
MEMORY_OPCODES = frozenset({"LOAD", "STORE", "CALL", "CALLIND", "CALLOTHER"})
# Subset that may mutate memory (or have arbitrary side effects).
MEMORY_WRITE_OPCODES = frozenset({"STORE", "CALL", "CALLIND", "CALLOTHER"})


class ParseError(ValueError):
    """Interchange document violates the schema; message names the path."""


class StructuralError(ValueError):
    """Document is schema-valid but structurally inconsistent."""


@dataclass(frozen=True)
class Varnode:
    space: str
    offset: int
    size: int
    symbol: Optional[str] = None


@dataclass(frozen=True)
class PCodeOp:
    seq: int
    opcode: str
    output: Optional[Varnode]
    inputs: tuple[Varnode, ...]


@dataclass(frozen=True)
class BasicBlock:
    id: int
    ops: tuple[PCodeOp, ...]
    successors: tuple[int, ...]


@dataclass(frozen=True)
class PCodeFunction:
    name: str
    arch: str
    entry: int
    blocks: tuple[BasicBlock, ...]
    meta: dict = field(default_factory=dict)
    pruned_blocks: int = 0  # unreachable blocks dropped at ingestion

    def block_map(self) -> dict[int, BasicBlock]:
        return {b.id: b for b in self.blocks}


@dataclass(frozen=True)
class NormToken:
    """Normalized varnode attribute, a pure function of (varnode, arch)."""

    text: str


def _expect(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise ParseError(f"{path}: {msg}")


def _parse_varnode(obj, path: str) -> Varnode:
    _expect(isinstance(obj, dict), path, "varnode must be an object")
    _expect(obj.get("space") in SPACES, f"{path}.space",
            f"unknown address space {obj.get('space')!r}")
    off = obj.get("offset")
    _expect(isinstance(off, str), f"{path}.offset", "offset must be a hex string")
    try:
        offset = int(off, 16)
    except ValueError:
        raise ParseError(f"{path}.offset: not a hex string: {off!r}") from None
    _expect(offset >= 0, f"{path}.offset", "offset must be non-negative")
    size = obj.get("size")
    _expect(isinstance(size, int) and not isinstance(size, bool) and size >= 1,
            f"{path}.size", "size must be an integer >= 1")
    symbol = obj.get("symbol")
    _expect(symbol is None or isinstance(symbol, str), f"{path}.symbol",
            "symbol must be a string or null")
    return Varnode(obj["space"], offset, size, symbol)


def _parse_op(obj, path: str) -> PCodeOp:
    _expect(isinstance(obj, dict), path, "op must be an object")
    seq = obj.get("seq")
    _expect(isinstance(seq, int) and not isinstance(seq, bool), f"{path}.seq",
            "seq must be an integer")
    opcode = obj.get("opcode")
    _expect(isinstance(opcode, str), f"{path}.opcode", "opcode must be a string")
    if opcode not in OPCODES:
        raise ParseError(f"{path}.opcode: unknown P-Code mnemonic {opcode!r}")
    out = obj.get("output")
    output = None if out is None else _parse_varnode(out, f"{path}.output")
    raw_inputs = obj.get("inputs")
    _expect(isinstance(raw_inputs, list), f"{path}.inputs", "inputs must be a list")
    inputs = tuple(_parse_varnode(v, f"{path}.inputs[{i}]")
                   for i, v in enumerate(raw_inputs))
    return PCodeOp(seq, opcode, output, inputs)


def parse_function(doc: str | bytes | dict) -> PCodeFunction:
    """Parse and validate one interchange document.

    Unreachable blocks are pruned (counted in ``pruned_blocks``) and block
    ids are remapped to dense 0..n-1 with the entry block at 0.
    """
    if isinstance(doc, (str, bytes)):
        try:
            obj = json.loads(doc)
        except json.JSONDecodeError as e:
            raise ParseError(f"$: invalid JSON: {e}") from None
    else:
        obj = doc
    _expect(isinstance(obj, dict), "$", "document must be an object")
    name = obj.get("name")
    _expect(isinstance(name, str) and name, "$.name", "name must be a non-empty string")
    arch = obj.get("arch")
    _expect(arch in ARCHES, "$.arch", f"arch must be one of {ARCHES}")
    entry = obj.get("entry")
    _expect(isinstance(entry, int) and not isinstance(entry, bool), "$.entry",
            "entry must be an integer")
    meta = obj.get("meta")
    _expect(isinstance(meta, dict), "$.meta", "meta must be an object")
    for key in ("project", "optimization", "obfuscation"):
        _expect(isinstance(meta.get(key), str), f"$.meta.{key}",
                "must be a string")
    raw_blocks = obj.get("blocks")
    _expect(isinstance(raw_blocks, list), "$.blocks", "blocks must be a list")
    if not raw_blocks:
        raise StructuralError(f"function {name!r}: no basic blocks")

    blocks: dict[int, BasicBlock] = {}
    for i, rb in enumerate(raw_blocks):
        path = f"$.blocks[{i}]"
        _expect(isinstance(rb, dict), path, "block must be an object")
        bid = rb.get("id")
        _expect(isinstance(bid, int) and not isinstance(bid, bool),
                f"{path}.id", "id must be an integer")
        if bid in blocks:
            raise StructuralError(f"function {name!r}: duplicate block id {bid}")
        succs = rb.get("successors")
        _expect(isinstance(succs, list) and all(
            isinstance(s, int) and not isinstance(s, bool) for s in succs),
            f"{path}.successors", "successors must be a list of integers")
        raw_ops = rb.get("ops")
        _expect(isinstance(raw_ops, list), f"{path}.ops", "ops must be a list")
        ops = tuple(_parse_op(o, f"{path}.ops[{j}]") for j, o in enumerate(raw_ops))
        if not ops:
            raise StructuralError(f"function {name!r}: block {bid} has no ops")
        for a, b in zip(ops, ops[1:]):
            if not a.seq < b.seq:
                raise StructuralError(
                    f"function {name!r}: block {bid} seq values not increasing")
        blocks[bid] = BasicBlock(bid, ops, tuple(succs))

    if entry not in blocks:
        raise StructuralError(f"function {name!r}: entry block {entry} missing")
    for b in blocks.values():
        for s in b.successors:
            if s not in blocks:
                raise StructuralError(
                    f"function {name!r}: block {b.id} has dangling successor {s}")

    # Reachability prune + dense remap (entry -> 0, rest in ascending old id).
    reachable = {entry}
    stack = [entry]
    while stack:
        for s in blocks[stack.pop()].successors:
            if s not in reachable:
                reachable.add(s)
                stack.append(s)
    pruned = len(blocks) - len(reachable)
    order = [entry] + sorted(b for b in reachable if b != entry)
    remap = {old: new for new, old in enumerate(order)}
    new_blocks = tuple(
        BasicBlock(remap[old], blocks[old].ops,
                   tuple(remap[s] for s in blocks[old].successors if s in reachable))
        for old in order)
    return PCodeFunction(name=name, arch=arch, entry=0, blocks=new_blocks,
                         meta=dict(meta), pruned_blocks=pruned)


def _varnode_to_obj(v: Optional[Varnode]):
    if v is None:
        return None
    return {"space": v.space, "offset": format(v.offset, "x"),
            "size": v.size, "symbol": v.symbol}


def function_to_doc(f: PCodeFunction) -> dict:
    """Serialize back to the interchange structure (inverse of parsing)."""
    return {
        "name": f.name,
        "arch": f.arch,
        "entry": f.entry,
        "meta": dict(f.meta),
        "blocks": [
            {"id": b.id, "successors": list(b.successors),
             "ops": [{"seq": op.seq, "opcode": op.opcode,
                      "output": _varnode_to_obj(op.output),
                      "inputs": [_varnode_to_obj(v) for v in op.inputs]}
                     for op in b.ops]}
            for b in f.blocks],
    }


def function_to_json(f: PCodeFunction) -> str:
    return json.dumps(function_to_doc(f), sort_keys=True, separators=(",", ":"))


def read_corpus(path) -> Iterator[PCodeFunction]:
    """Yield functions from a one-document-per-line corpus file."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield parse_function(line)
            except (ParseError, StructuralError) as e:
                raise type(e)(f"{path}:{lineno}: {e}") from None


def write_corpus(path, functions: Iterable[PCodeFunction]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for f in functions:
            fh.write(function_to_json(f))
            fh.write("\n")
            n += 1
    return n


def normalize_varnode(v: Varnode, arch: str) -> NormToken:
    """Collapse a varnode to its vocabulary token.

    Size is discarded. Ram varnodes resolve to the library symbol when the
    exporter provided one, otherwise the bare space identifier; register
    and const keep their offset in lowercase hex without prefix.
    """
    if v.space == "ram":
        return NormToken(v.symbol if v.symbol else "ram")
    if v.space == "register":
        return NormToken(f"{arch}_r_{v.offset:x}")
    if v.space == "const":
        return NormToken(f"c_{v.offset:x}")
    if v.space == "unique":
        return NormToken("unique")
    if v.space == "stack":
        return NormToken("stack")
    raise ValueError(f"unknown address space {v.space!r}")
