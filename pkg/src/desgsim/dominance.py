"""Dominator / post-dominator trees over a P-Code CFG.

The main algorithms are iterative data-flow over reverse postorder
(Cooper-Harvey-Kennedy).  Post-dominance runs the same computation on the
edge-reversed CFG rooted at a synthesized virtual exit: every block without
successors gets an edge to it, and strongly connected regions with no path
to any exit donate one edge from their lowest-id member.  A brute-force
oracle that literally enumerates simple paths backs the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import count
from typing import Mapping

from .pcode import PCodeFunction

VIRTUAL_EXIT = -1


@dataclass(frozen=True)
class DomTree:
    idom: dict[int, int]  # block -> immediate dominator; entry absent
    root: int

    def dominates(self, a: int, b: int) -> bool:
        """True iff a dominates b (reflexive)."""
        while True:
            if a == b:
                return True
            if b not in self.idom:
                return False
            b = self.idom[b]

    def dominator_set(self, b: int) -> set[int]:
        out = {b}
        while b in self.idom:
            b = self.idom[b]
            out.add(b)
        return out


@dataclass(frozen=True)
class PostDomTree:
    ipdom: dict[int, int]  # block -> immediate post-dominator
    root: int  # VIRTUAL_EXIT

    def post_dominates(self, a: int, b: int) -> bool:
        """True iff a post-dominates b (reflexive)."""
        while True:
            if a == b:
                return True
            if b not in self.ipdom:
                return False
            b = self.ipdom[b]


def cfg_edges(f: PCodeFunction) -> dict[int, tuple[int, ...]]:
    return {b.id: b.successors for b in f.blocks}


def _sccs(succ: Mapping[int, tuple[int, ...]]) -> list[list[int]]:
    """Tarjan strongly connected components (iterative)."""
    index = {}
    lowlink = {}
    on_stack = set()
    stack: list[int] = []
    comps: list[list[int]] = []
    counter = count()

    for root in succ:
        if root in index:
            continue
        work = [(root, iter(succ[root]))]
        index[root] = lowlink[root] = next(counter)
        stack.append(root)
        on_stack.add(root)
        while work:
            node, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = lowlink[w] = next(counter)
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(succ[w])))
                    advanced = True
                    break
                if w in on_stack:
                    lowlink[node] = min(lowlink[node], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[node])
            if lowlink[node] == index[node]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == node:
                        break
                comps.append(comp)
    return comps


def augmented_cfg(f: PCodeFunction) -> dict[int, tuple[int, ...]]:
    """CFG with the virtual exit attached; used for post-dominance."""
    succ = {b.id: list(b.successors) for b in f.blocks}
    for bid, ss in succ.items():
        if not ss:
            ss.append(VIRTUAL_EXIT)
    # Nodes that reach the exit already.
    pred: dict[int, list[int]] = {bid: [] for bid in succ}
    pred[VIRTUAL_EXIT] = []
    for bid, ss in succ.items():
        for s in ss:
            pred[s].append(bid)
    reaches = {VIRTUAL_EXIT}
    stack = [VIRTUAL_EXIT]
    while stack:
        for p in pred[stack.pop()]:
            if p not in reaches:
                reaches.add(p)
                stack.append(p)
    trapped = [bid for bid in succ if bid not in reaches]
    if trapped:
        # Exit-free cycles: tie each cyclic SCC to the exit via its lowest id.
        sub = {bid: tuple(s for s in succ[bid] if s in trapped) for bid in trapped}
        for comp in _sccs(sub):
            cyclic = len(comp) > 1 or comp[0] in sub[comp[0]]
            if cyclic:
                succ[min(comp)].append(VIRTUAL_EXIT)
    succ[VIRTUAL_EXIT] = []
    return {bid: tuple(ss) for bid, ss in succ.items()}


def _idoms(succ: Mapping[int, tuple[int, ...]], root: int) -> dict[int, int]:
    """Iterative immediate-dominator computation on an arbitrary digraph.

    Only nodes reachable from root appear in the result.
    """
    # Reverse postorder from root.
    order: list[int] = []
    seen = {root}
    stack = [(root, iter(succ.get(root, ())))]
    while stack:
        node, it = stack[-1]
        pushed = False
        for s in it:
            if s not in seen:
                seen.add(s)
                stack.append((s, iter(succ.get(s, ()))))
                pushed = True
                break
        if not pushed:
            order.append(node)
            stack.pop()
    order.reverse()
    number = {n: i for i, n in enumerate(order)}
    preds: dict[int, list[int]] = {n: [] for n in order}
    for n in order:
        for s in succ.get(n, ()):
            if s in number:
                preds[s].append(n)

    idom = {root: root}

    def intersect(a: int, b: int) -> int:
        while a != b:
            while number[a] > number[b]:
                a = idom[a]
            while number[b] > number[a]:
                b = idom[b]
        return a

    changed = True
    while changed:
        changed = False
        for n in order:
            if n == root:
                continue
            new = None
            for p in preds[n]:
                if p in idom:
                    new = p if new is None else intersect(new, p)
            if new is not None and idom.get(n) != new:
                idom[n] = new
                changed = True
    del idom[root]
    return idom


def dominator_tree(f: PCodeFunction) -> DomTree:
    return DomTree(idom=_idoms(cfg_edges(f), f.entry), root=f.entry)


def post_dominator_tree(f: PCodeFunction) -> PostDomTree:
    succ = augmented_cfg(f)
    rev: dict[int, list[int]] = {n: [] for n in succ}
    for n, ss in succ.items():
        for s in ss:
            rev[s].append(n)
    rsucc = {n: tuple(ps) for n, ps in rev.items()}
    return PostDomTree(ipdom=_idoms(rsucc, VIRTUAL_EXIT), root=VIRTUAL_EXIT)


class OracleSizeError(ValueError):
    pass


_ORACLE_CAP = 14


def _paths_dominators(succ: Mapping[int, tuple[int, ...]], root: int) -> dict[int, set[int]]:
    """Dominator sets by exhaustive simple-path enumeration from root."""
    nodes = set(succ)
    doms = {n: (set(nodes) if n != root else {root}) for n in nodes}
    doms[root] = {root}
    path = [root]
    on_path = {root}

    def walk(node: int) -> None:
        if node != root:
            doms[node] &= on_path
        for s in succ.get(node, ()):
            if s not in on_path:
                path.append(s)
                on_path.add(s)
                walk(s)
                on_path.discard(s)
                path.pop()

    walk(root)
    # Unreachable nodes keep the full set; drop them for comparability.
    reachable = {root}
    stack = [root]
    while stack:
        for s in succ.get(stack.pop(), ()):
            if s not in reachable:
                reachable.add(s)
                stack.append(s)
    return {n: d for n, d in doms.items() if n in reachable}


def _sets_to_idom(doms: dict[int, set[int]], root: int) -> dict[int, int]:
    idom = {}
    for n, d in doms.items():
        if n == root:
            continue
        strict = d - {n}
        # The immediate dominator is the strict dominator dominated by all
        # others, i.e. the one with the largest dominator set.
        idom[n] = max(strict, key=lambda s: (len(doms[s]), s))
    return idom


def dominance_oracle(f: PCodeFunction) -> tuple[DomTree, PostDomTree]:
    """Path-enumeration oracle for both trees; test use only."""
    if len(f.blocks) > _ORACLE_CAP:
        raise OracleSizeError(
            f"oracle capped at {_ORACLE_CAP} blocks, got {len(f.blocks)}")
    dt = DomTree(idom=_sets_to_idom(_paths_dominators(cfg_edges(f), f.entry),
                                    f.entry),
                 root=f.entry)
    succ = augmented_cfg(f)
    rev: dict[int, list[int]] = {n: [] for n in succ}
    for n, ss in succ.items():
        for s in ss:
            rev[s].append(n)
    rsucc = {n: tuple(ps) for n, ps in rev.items()}
    pdt = PostDomTree(
        ipdom=_sets_to_idom(_paths_dominators(rsucc, VIRTUAL_EXIT), VIRTUAL_EXIT),
        root=VIRTUAL_EXIT)
    return dt, pdt


def tree_debug_text(idom: Mapping[int, int]) -> str:
    """`child <- parent` per line, sorted; for golden tests."""
    return "\n".join(f"{c} <- {p}" for c, p in sorted(idom.items()))
