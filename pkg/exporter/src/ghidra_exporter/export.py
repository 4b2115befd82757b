"""Walk a decompiled program and emit interchange records, one JSON document
per function per line.

The walker is written against a small duck-typed surface so the same code
runs inside the decompiler's headless scripting environment (wrapped by
``ghidra_scripts/ExportPcode.py``) and against scripted program models in
tests:

    program: .name, .language_id, .functions() -> iterable of functions
    function: .name, .is_thunk, .blocks() -> ordered list of blocks
    block: .index, .successor_indexes(), .ops() -> list of ops
    op: .mnemonic, .output (varnode or None), .inputs (list of varnodes)
    varnode: .space, .offset, .size, .symbol (library name or None)

Raw (low) P-Code is exported in listing order with explicit successor ids;
def-use links travel implicitly through unique-space varnode identity.
"""

from __future__ import annotations

import json
import sys

SPACES = ("ram", "register", "const", "unique", "stack")

_ARCH_PREFIXES = (("x86", "x86"), ("ARM", "ARM"), ("AARCH64", "ARM"))


class ExportError(RuntimeError):
    pass


def arch_from_language(language_id: str) -> str:
    """Map a decompiler language id (e.g. "x86:LE:64:default") to the
    interchange arch tag."""
    head = language_id.split(":", 1)[0]
    for prefix, arch in _ARCH_PREFIXES:
        if head.lower() == prefix.lower():
            return arch
    raise ExportError(f"unsupported language {language_id!r}")


def _varnode_obj(v):
    if v is None:
        return None
    if v.space not in SPACES:
        raise ExportError(f"unsupported address space {v.space!r}")
    symbol = getattr(v, "symbol", None)
    return {"space": v.space, "offset": format(int(v.offset), "x"),
            "size": int(v.size), "symbol": symbol}


def function_record(fn, arch: str, project: str) -> dict:
    """One interchange document for one function; raises ExportError on
    anything the schema cannot carry."""
    blocks = []
    for block in fn.blocks():
        ops = []
        for seq, op in enumerate(op for op in block.ops()):
            ops.append({"seq": seq, "opcode": op.mnemonic,
                        "output": _varnode_obj(op.output),
                        "inputs": [_varnode_obj(v) for v in op.inputs]})
        if not ops:
            raise ExportError(f"{fn.name}: block {block.index} has no ops")
        blocks.append({"id": int(block.index),
                       "successors": [int(s) for s in block.successor_indexes()],
                       "ops": ops})
    if not blocks:
        raise ExportError(f"{fn.name}: no basic blocks")
    return {"name": fn.name, "arch": arch, "entry": int(fn.blocks()[0].index),
            "meta": {"project": project, "optimization": "unknown",
                     "obfuscation": "none"},
            "blocks": blocks}


def export_program(program, out, name_filter=None, project=None,
                   log=sys.stderr) -> int:
    """Write one record per non-thunk function to ``out``; returns the
    number exported.  Functions that fail analysis are skipped with a log
    line; exporting nothing at all is an error."""
    arch = arch_from_language(program.language_id)
    project = project or program.name
    exported = 0
    for fn in program.functions():
        if fn.is_thunk:
            continue
        if name_filter and fn.name != name_filter:
            continue
        try:
            record = function_record(fn, arch, project)
        except ExportError as e:
            print(f"export: skipping {fn.name}: {e}", file=log)
            continue
        out.write(json.dumps(record, sort_keys=True, separators=(",", ":")))
        out.write("\n")
        exported += 1
    if exported == 0:
        raise ExportError(f"{program.name}: no functions exported")
    return exported
