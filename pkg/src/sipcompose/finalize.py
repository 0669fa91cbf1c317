"""Finalization (placeholder patching) and tamper simulation.

Every manifest with a placeholder guard computes a simulated hash over a
region of the protected program and writes it into its slot. The hash is a
64-bit FNV-1a fold over each instruction's byte representation, which
includes any value already patched into it. The fold is order-sensitive and
non-commutative, so finalizing two mutually dependent manifests always
invalidates one of them.

Regions are derived from the protected program alone:

* SC: the whole code of the target function, guards included.
* OH_VERIFY: every OH_HASH guard and the instruction it folds (one global
  hash variable).
* SROH_VERIFY: the same, restricted to SROH_HASH guards of its function.
* CSIV_VERIFY: the register tokens of every function with a call path to
  the verifying function.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace
from typing import Optional

from .errors import CycleRemains, FalseAlarm, FinalizationInconsistent, UnknownInstruction
from .graph import DefenseGraph
from .manifest import M
from .program import Guard, Instruction, ProgramModel, reachable_from

SLOT = "expected"
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1


def fnv1a64(data: bytes, h: int = _FNV_OFFSET) -> int:
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK
    return h


def inst_bytes(inst: Instruction, value: Optional[str]) -> bytes:
    return f"{inst.id}|{inst.opcode}|{inst.size_bytes}|{value or ''}".encode()


def format_hash(h: int) -> str:
    return f"0x{h:016x}"


@dataclass
class PatchState:
    slots: dict[tuple[int, str], str] = field(default_factory=dict)
    finalized: dict[int, bool] = field(default_factory=dict)
    program: Optional[ProgramModel] = None  # protected program with the slots patched in

    def write(self, manifest_id: int, slot: str, value: str) -> None:
        if (manifest_id, slot) in self.slots:
            raise FinalizationInconsistent(f"slot {slot} of m{manifest_id} written twice")
        self.slots[(manifest_id, slot)] = value
        self.finalized[manifest_id] = True


def placeholder_guards(program: ProgramModel) -> dict[int, Guard]:
    """Manifest id -> its placeholder guard, for every slotted manifest present."""
    return {g.manifest_id: g for g in program.guards() if g.slot is not None}


def hash_region(program: ProgramModel, manifest_id: int, slotted: Optional[dict[int, Guard]] = None) -> list[int]:
    """Instruction ids a slotted manifest folds, in program order."""
    ph = (slotted if slotted is not None else placeholder_guards(program)).get(manifest_id)
    if ph is None:
        raise FinalizationInconsistent(f"m{manifest_id} has no placeholder in the protected program")
    home = program.function_of_block(program.block_of_instruction(ph.instruction.id).id)
    if ph.kind == "SC":
        return [i.id for b in program.function(ph.target).blocks for i in b.code()]
    if ph.kind in ("OH_VERIFY", "SROH_VERIFY"):
        hash_kind = ph.kind.replace("VERIFY", "HASH")
        fns = program.functions if ph.kind == "OH_VERIFY" else (home,)
        out = []
        for fn in fns:
            for b in fn.blocks:
                for g in b.guards:
                    if g.kind == hash_kind:
                        out += [g.instruction.id, g.target]
        return out
    if ph.kind == "CSIV_VERIFY":
        callers = [f for f in program.functions if home.id in reachable_from(program, f.id)]
        return [g.instruction.id for f in callers for b in f.blocks for g in b.guards if g.kind == "CSIV_REGISTER"]
    raise FinalizationInconsistent(f"m{manifest_id}: kind {ph.kind} carries no placeholder")


def _fold(program: ProgramModel, region: list[int], values: dict[int, Optional[str]], tampered=None) -> str:
    h = _FNV_OFFSET
    for iid in region:
        data = inst_bytes(program.instruction(iid), values.get(iid))
        if iid == tampered:
            data = b"~" + data
        h = fnv1a64(data, h)
    return format_hash(h)


def finalization_order(graph: DefenseGraph) -> list[int]:
    """Manifest ids so that every manifest is finalized after all it depends on.

    This is the reverse of a topological order of the dependency arcs. Ready
    non-manifest nodes are settled immediately; among ready manifests the
    smallest id goes first.
    """
    pending = {n: 0 for n in graph.nodes}
    preds: dict = {n: [] for n in graph.nodes}
    for a, b in graph.dependency_arcs:
        pending[a] += 1
        preds[b].append(a)
    plain = sorted(n for n, k in pending.items() if k == 0 and n.kind != "m")
    ready = [n.id for n, k in pending.items() if k == 0 and n.kind == "m"]
    heapq.heapify(ready)
    order: list[int] = []
    done = 0

    def settle(n) -> None:
        for p in sorted(preds[n]):
            pending[p] -= 1
            if pending[p] == 0:
                if p.kind == "m":
                    heapq.heappush(ready, p.id)
                else:
                    plain.append(p)

    while plain or ready:
        if plain:
            n = plain.pop()
        else:
            mid = heapq.heappop(ready)
            order.append(mid)
            n = M(mid)
        done += 1
        settle(n)
    if done != len(graph.nodes):
        stuck = sorted(n.id for n, k in pending.items() if k > 0 and n.kind == "m")
        raise CycleRemains(f"dependency cycle among manifests {stuck}")
    return order


def finalize_and_verify(protected: ProgramModel, order: list[int]) -> PatchState:
    """Patch every placeholder in ``order``, then re-check every hash."""
    slotted = placeholder_guards(protected)
    missing = sorted(set(slotted) - set(order))
    if missing:
        raise FinalizationInconsistent(f"finalization order misses slotted manifests {missing}")
    state = PatchState()
    values: dict[int, Optional[str]] = {g.instruction.id: None for g in slotted.values()}
    regions = {mid: hash_region(protected, mid, slotted) for mid in slotted}
    for mid in order:
        if mid not in slotted:
            state.finalized[mid] = True
            continue
        h = _fold(protected, regions[mid], values)
        state.write(mid, SLOT, h)
        values[slotted[mid].instruction.id] = h
    alarms = [mid for mid in slotted if _fold(protected, regions[mid], values) != state.slots[(mid, SLOT)]]
    if alarms:
        raise FalseAlarm(alarms)
    state.program = _patched(protected, values)
    return state


def _patched(program: ProgramModel, values: dict[int, Optional[str]]) -> ProgramModel:
    functions = []
    for f in program.functions:
        blocks = []
        for b in f.blocks:
            guards = tuple(
                replace(g, value=values[g.instruction.id]) if g.instruction.id in values else g for g in b.guards
            )
            blocks.append(replace(b, guards=guards))
        functions.append(replace(f, blocks=tuple(blocks)))
    return replace(program, functions=tuple(functions))


def failing_checks(program: ProgramModel, tampered: Optional[int] = None) -> set[int]:
    """Slotted manifests whose runtime hash disagrees with the patched value."""
    slotted = placeholder_guards(program)
    values = {g.instruction.id: g.value for g in slotted.values()}
    return {
        mid
        for mid, g in slotted.items()
        if _fold(program, hash_region(program, mid, slotted), values, tampered) != g.value
    }


def tamper_check(result, instruction_id: int) -> set[int]:
    """Manifests whose checks fire after altering one instruction's bytes.

    ``result`` is a composition result or a finalized protected program. The
    tampering is simulated on a byte view, so the program is untouched.
    """
    program = getattr(result, "protected_program", result)
    if not program.has_instruction(instruction_id):
        raise UnknownInstruction(f"no instruction {instruction_id}")
    return failing_checks(program, tampered=instruction_id)
