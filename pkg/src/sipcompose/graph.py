"""Defense graph over manifests, functions and instructions.

A dependency arc ``(x, y)`` means ``x`` can only be finalized once ``y`` is
final. ``Order(before=b, after=a)`` therefore becomes the arc ``(a, b)``.
Arcs touching a function node are expanded to every instruction currently in
that function, including the guard instructions of graphed manifests placed
there.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import DanglingReference
from .manifest import F, I, M, Manifest, Node
from .program import ProgramModel, normalized_freq

Arc = tuple[Node, Node]


@dataclass(frozen=True)
class NodeAttr:
    exec_freq_norm: float = 0.0
    preserve: bool = False
    static_presence_required: bool = False


@dataclass
class DefenseGraph:
    program: ProgramModel
    manifests: dict[int, Manifest]
    nodes: frozenset[Node]
    dependency_arcs: frozenset[Arc]
    present_arcs: frozenset[Arc]
    attributes: dict[Node, NodeAttr]
    # which manifests' constraints produced each dependency arc
    generators: dict[Arc, frozenset[int]] = field(default_factory=dict)
    # guard instruction id -> owning manifest id
    owner: dict[int, int] = field(default_factory=dict)

    def successors(self) -> dict[Node, list[Node]]:
        succ: dict[Node, list[Node]] = {n: [] for n in self.nodes}
        for a, b in self.dependency_arcs:
            succ[a].append(b)
        for n in succ:
            succ[n].sort()
        return succ

    def manifest_nodes(self) -> list[Node]:
        return sorted(n for n in self.nodes if n.kind == "m")

    def without(self, removed: Iterable[Node]) -> "DefenseGraph":
        """The graph with ``removed`` nodes and their arcs dropped."""
        gone = set(removed)
        keep = lambda arc: arc[0] not in gone and arc[1] not in gone  # noqa: E731
        return DefenseGraph(
            program=self.program,
            manifests={i: m for i, m in self.manifests.items() if M(i) not in gone},
            nodes=frozenset(self.nodes - gone),
            dependency_arcs=frozenset(filter(keep, self.dependency_arcs)),
            present_arcs=frozenset(filter(keep, self.present_arcs)),
            attributes={n: a for n, a in self.attributes.items() if n not in gone},
            generators={a: g for a, g in self.generators.items() if keep(a)},
            owner=dict(self.owner),
        )


@dataclass(frozen=True)
class Cycle:
    """Manifests inside one strongly connected component.

    ``support_ids`` lists further manifests whose constraints or guard
    instructions are needed for the component to exist. Selecting all of
    ``manifest_ids`` and ``support_ids`` together always recreates it.
    """

    manifest_ids: tuple[int, ...]
    support_ids: tuple[int, ...] = ()

    @property
    def all_ids(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.manifest_ids) | set(self.support_ids)))


def build_graph(
    manifests: Sequence[Manifest],
    program: ProgramModel,
    universe: Optional[Sequence[Manifest]] = None,
) -> DefenseGraph:
    """Graph the constraints of ``manifests``.

    References to manifests (or their guard instructions) that belong to
    ``universe`` but not to ``manifests`` describe unselected proposals and
    are dropped silently; anything else unknown is a dangling reference.
    """
    by_id = {m.id: m for m in manifests}
    owner = {i.id: m.id for m in manifests for i in m.guard_instructions}
    hash_vars = {m.hash_var.id for m in manifests if m.hash_var}
    absent_ids: set[int] = set()
    for m in universe or ():
        if m.id not in by_id:
            absent_ids.add(m.id)
    absent_insts = {
        i.id for m in universe or () if m.id in absent_ids for i in m.guard_instructions
    } | {m.hash_var.id for m in universe or () if m.id in absent_ids and m.hash_var}
    absent_insts -= hash_vars

    inst_block: dict[int, int] = {}
    fn_code: dict[int, list[int]] = {}
    for fn in program.functions:
        code = fn_code.setdefault(fn.id, [])
        for b in fn.blocks:
            for inst in b.code():
                inst_block[inst.id] = b.id
                code.append(inst.id)
    for m in sorted(manifests, key=Manifest.sort_key):
        if not program.has_block(m.placement_block):
            raise DanglingReference(f"m{m.id} is placed in unknown block {m.placement_block}")
        fid = program.function_of_block(m.placement_block).id
        for inst in m.guard_instructions:
            if inst.id not in inst_block:
                inst_block[inst.id] = m.placement_block
                fn_code[fid].append(inst.id)

    def resolve(n: Node, where: Manifest) -> bool:
        """True if ``n`` is graphed, False if it belongs to an unselected proposal."""
        if n.kind == "m":
            if n.id in by_id:
                return True
            if n.id in absent_ids:
                return False
        elif n.kind == "f":
            if program.has_function(n.id):
                return True
        elif n.id in inst_block or n.id in hash_vars:
            return True
        elif n.id in absent_insts:
            return False
        raise DanglingReference(f"m{where.id} references unknown node {n}")

    nodes: set[Node] = {M(i) for i in by_id}
    dep: dict[Arc, set[int]] = {}
    present: set[Arc] = set()
    preserved: set[int] = set()
    pinned: set[int] = set()

    def add_arc(a: Node, b: Node, gen: int) -> None:
        dep.setdefault((a, b), set()).add(gen)
        nodes.update((a, b))

    def expand(n: Node) -> list[Node]:
        return [I(i) for i in fn_code[n.id]] if n.kind == "f" else []

    for m in manifests:
        preserved |= m.preserved()
        for c in m.orders():
            if not (resolve(c.before, m) and resolve(c.after, m)):
                continue
            a, b = c.after, c.before
            add_arc(a, b, m.id)
            for x in expand(a) or [a]:
                for y in expand(b) or [b]:
                    if x != y:
                        add_arc(x, y, m.id)
        for c in m.presents():
            for req in sorted(c.required):
                if not resolve(req, m):
                    continue
                present.add((M(c.dependent), req))
                nodes.add(req)
                if req.kind == "f":
                    pinned.add(req.id)

    attrs: dict[Node, NodeAttr] = {}
    for n in nodes:
        if n.kind == "m":
            freq = normalized_freq(program, by_id[n.id].placement_block)
        elif n.kind == "f":
            fn = program.function(n.id)
            freq = max(normalized_freq(program, b.id) for b in fn.blocks)
        else:
            bid = inst_block.get(n.id)
            freq = normalized_freq(program, bid) if bid is not None else 0.0
        attrs[n] = NodeAttr(
            exec_freq_norm=freq,
            preserve=n.kind == "i" and n.id in preserved,
            static_presence_required=n.kind == "f" and n.id in pinned,
        )
    return DefenseGraph(
        program=program,
        manifests=dict(by_id),
        nodes=frozenset(nodes),
        dependency_arcs=frozenset(dep),
        present_arcs=frozenset(present),
        attributes=attrs,
        generators={a: frozenset(g) for a, g in dep.items()},
        owner=owner,
    )


def strongly_connected_components(graph: DefenseGraph) -> list[list[Node]]:
    """Tarjan's algorithm, iterative, visiting nodes in sorted order."""
    succ = graph.successors()
    index: dict[Node, int] = {}
    low: dict[Node, int] = {}
    on_stack: set[Node] = set()
    stack: list[Node] = []
    out: list[list[Node]] = []
    counter = 0
    for root in sorted(graph.nodes):
        if root in index:
            continue
        work = [(root, 0)]
        while work:
            v, k = work.pop()
            if k == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack.add(v)
            succs = succ[v]
            if k < len(succs):
                work.append((v, k + 1))
                w = succs[k]
                if w not in index:
                    work.append((w, 0))
                elif w in on_stack:
                    low[v] = min(low[v], index[w])
                continue
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                out.append(sorted(comp))
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
    return out


def _support(graph: DefenseGraph, members: set[Node], arcs: Iterable[Arc], mids: list[int]) -> Cycle:
    """Cycle record for a node set: its manifests plus what the arcs need."""
    support: set[int] = {graph.owner[n.id] for n in members if n.kind == "i" and n.id in graph.owner}
    for arc in arcs:
        gens = graph.generators[arc]
        inside = sorted(g for g in gens if g in mids or g in support)
        support.add(inside[0] if inside else min(gens))
    support -= set(mids)
    if not mids:
        mids, support = sorted(support), set()
    return Cycle(tuple(mids), tuple(sorted(support)))


def _cyclic_components(graph: DefenseGraph) -> list[list[Node]]:
    return [
        comp
        for comp in strongly_connected_components(graph)
        if len(comp) > 1 or (comp[0], comp[0]) in graph.dependency_arcs
    ]


def find_cycles(graph: DefenseGraph) -> list[Cycle]:
    """One Cycle per SCC with at least two nodes or a self-loop, sorted."""
    cycles = []
    for comp in _cyclic_components(graph):
        members = set(comp)
        mids = sorted(n.id for n in comp if n.kind == "m")
        arcs = [a for a in graph.generators if a[0] in members and a[1] in members]
        cycles.append(_support(graph, members, arcs, mids))
    return sorted(cycles, key=lambda c: c.all_ids)


def elementary_cycles(graph: DefenseGraph) -> list[Cycle]:
    """For every manifest on a cycle, one shortest cycle through it.

    These sub-cycles give much smaller no-good sets than whole components.
    Duplicates are removed; the result is sorted.
    """
    succ = graph.successors()
    found: dict[tuple[int, ...], Cycle] = {}
    for comp in _cyclic_components(graph):
        members = set(comp)
        starts = [n for n in comp if n.kind == "m"] or comp[:1]
        for start in starts:
            parent: dict[Node, Node] = {}
            frontier, seen, closing = [start], {start}, None
            while frontier and closing is None:
                nxt = []
                for v in frontier:
                    for w in succ[v]:
                        if w == start:
                            closing = v
                            break
                        if w in members and w not in seen:
                            seen.add(w)
                            parent[w] = v
                            nxt.append(w)
                    if closing is not None:
                        break
                frontier = nxt
            path = [closing]
            while path[-1] != start:
                path.append(parent[path[-1]])
            path.reverse()
            arcs = list(zip(path, path[1:] + path[:1]))
            mids = sorted({n.id for n in path if n.kind == "m"})
            cyc = _support(graph, set(path), arcs, mids)
            found.setdefault(cyc.all_ids, cyc)
    return sorted(found.values(), key=lambda c: c.all_ids)


def _dot_id(n: Node) -> str:
    return f'"{n}"'


def export_dot(graph: DefenseGraph) -> str:
    lines = ["digraph defense {"]
    for n in sorted(graph.nodes):
        a = graph.attributes.get(n, NodeAttr())
        if n.kind == "m":
            label, shape = f"{n}:{graph.manifests[n.id].kind}", "box"
        elif n.kind == "f":
            label, shape = f"{n}:{graph.program.function(n.id).name}", "ellipse"
        else:
            label, shape = f"{n}", "box, style=rounded"
        extra = ", peripheries=2" if a.preserve or a.static_presence_required else ""
        lines.append(f'  {_dot_id(n)} [label="{label}\\nfreq={a.exec_freq_norm:.3f}", shape={shape}{extra}];')
    for a, b in sorted(graph.dependency_arcs):
        lines.append(f"  {_dot_id(a)} -> {_dot_id(b)};")
    for a, b in sorted(graph.present_arcs):
        lines.append(f"  {_dot_id(a)} -> {_dot_id(b)} [style=dashed];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def summary(graph: DefenseGraph) -> dict:
    sccs = _cyclic_components(graph)
    return {
        "nodes": len(graph.nodes),
        "manifest_nodes": len(graph.manifest_nodes()),
        "function_nodes": sum(n.kind == "f" for n in graph.nodes),
        "instruction_nodes": sum(n.kind == "i" for n in graph.nodes),
        "dependency_arcs": len(graph.dependency_arcs),
        "present_arcs": len(graph.present_arcs),
        "sccs": len(sccs),
    }


def summary_json(graph: DefenseGraph) -> str:
    return json.dumps(summary(graph), indent=1, sort_keys=True)
