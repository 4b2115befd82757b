# Export raw P-Code for every non-thunk function as interchange JSON lines.
# @category Export
#
# Headless usage:
#   analyzeHeadless <proj_dir> <proj> -import <binary> \
#       -postScript ExportPcode.py <output path> [function name filter]
#
# Wraps the decompiler API objects into the duck-typed surface consumed by
# ghidra_exporter.export so the walking/serialization logic stays testable
# outside the decompiler.

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from ghidra_exporter.export import export_program  # noqa: E402

from ghidra.program.model.block import BasicBlockModel  # noqa: E402
from ghidra.program.model.symbol import RefType  # noqa: E402
from ghidra.util.task import TaskMonitor  # noqa: E402


class _Var(object):
    def __init__(self, varnode, program):
        space = varnode.getAddress().getAddressSpace().getName().lower()
        self.space = "ram" if space in ("ram", "mem") else space
        self.offset = varnode.getOffset()
        self.size = varnode.getSize()
        self.symbol = None
        if self.space == "ram":
            callee = program.getFunctionManager().getFunctionAt(
                varnode.getAddress())
            if callee is not None and (callee.isExternal()
                                       or callee.isThunk()):
                self.symbol = callee.getName()


class _Op(object):
    def __init__(self, pcode_op, program):
        self.mnemonic = pcode_op.getMnemonic()
        out = pcode_op.getOutput()
        self.output = _Var(out, program) if out is not None else None
        self.inputs = [_Var(v, program) for v in pcode_op.getInputs()]


class _Block(object):
    def __init__(self, index, code_block, index_of, program, monitor):
        self.index = index
        self._code_block = code_block
        self._index_of = index_of
        self._program = program
        self._monitor = monitor

    def successor_indexes(self):
        out = []
        it = self._code_block.getDestinations(self._monitor)
        while it.hasNext():
            ref = it.next()
            if ref.getFlowType().isCall():
                continue
            idx = self._index_of.get(ref.getDestinationAddress())
            if idx is not None:
                out.append(idx)
        return out

    def ops(self):
        listing = self._program.getListing()
        ops = []
        for instr in listing.getInstructions(self._code_block, True):
            for op in instr.getPcode():
                ops.append(_Op(op, self._program))
        return ops


class _Func(object):
    def __init__(self, function, program, monitor):
        self.name = function.getName()
        self.is_thunk = function.isThunk()
        self._function = function
        self._program = program
        self._monitor = monitor
        self._blocks = None

    def blocks(self):
        if self._blocks is None:
            model = BasicBlockModel(self._program)
            it = model.getCodeBlocksContaining(self._function.getBody(),
                                               self._monitor)
            raw = []
            while it.hasNext():
                raw.append(it.next())
            entry = self._function.getEntryPoint()
            raw.sort(key=lambda cb: (cb.getFirstStartAddress() != entry,
                                     cb.getFirstStartAddress()))
            index_of = {cb.getFirstStartAddress(): i
                        for i, cb in enumerate(raw)}
            self._blocks = [_Block(i, cb, index_of, self._program,
                                   self._monitor)
                            for i, cb in enumerate(raw)]
        return self._blocks


class _Program(object):
    def __init__(self, program, monitor):
        self.name = program.getName()
        self.language_id = str(program.getLanguageID())
        self._program = program
        self._monitor = monitor

    def functions(self):
        for fn in self._program.getFunctionManager().getFunctions(True):
            yield _Func(fn, self._program, self._monitor)


def main():
    args = getScriptArgs()  # noqa: F821  (provided by the script host)
    if not args:
        print("usage: ExportPcode.py <output path> [function name]")
        sys.exit(1)
    out_path = args[0]
    name_filter = args[1] if len(args) > 1 else None
    monitor = TaskMonitor.DUMMY
    wrapped = _Program(currentProgram, monitor)  # noqa: F821
    with open(out_path, "a") as fh:
        n = export_program(wrapped, fh, name_filter=name_filter)
    print("exported %d function(s) to %s" % (n, out_path))


main()
