"""Two-step protection passes.

``propose`` inspects a program and returns manifests without touching it;
``apply`` performs the transformation for one selected manifest. Passes run
in ``PASS_ORDER`` and each later pass sees the guard instructions proposed
by the earlier ones, so OH can hash SC guards the way it would after SC had
been applied.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .errors import DisabledPass, PresenceViolation, StaleManifest, UnknownKind
from .manifest import (
    PASS_ORDER,
    Absent,
    HASH_KINDS,
    F,
    I,
    M,
    Manifest,
    Node,
    Order,
    Present,
    Preserve,
)
from .program import BasicBlock, Function, Guard, Instruction, ProgramModel, normalized_freq, reachable_from

# guard sizes in synthetic instructions; hash manifests use one per hashed instruction
GUARD_SIZE = {
    "SC": 8,
    "OH_VERIFY": 3,
    "SROH_VERIFY": 3,
    "CSIV_REGISTER": 1,
    "CSIV_VERIFY": 2,
    "CM": 1,
    "OBF": 1,
}

DEFAULT_KIND_WEIGHT = {
    "SC": 1.0,
    "OH_HASH": 1.0,
    "OH_VERIFY": 1.0,
    "SROH_HASH": 1.0,
    "SROH_VERIFY": 1.0,
    "CSIV_REGISTER": 1.0,
    "CSIV_VERIFY": 1.0,
    "CM": 1.0,
    "OBF": 1.0,
}

# costs are snapped to this grid so objective sums are exact in binary floats
COST_QUANTUM = 1.0 / 1024


@dataclass(frozen=True)
class PassConfig:
    sc_connectivity: int = 1
    enabled: frozenset = frozenset(PASS_ORDER)
    seed: int = 0
    kind_weight: dict = field(default_factory=lambda: dict(DEFAULT_KIND_WEIGHT))
    sc_targets: str = "all"  # "all" functions or only "sensitive" ones

    def __post_init__(self):
        if self.sc_connectivity < 0:
            raise ValueError("sc_connectivity must be >= 0")
        if any(w <= 0 for w in self.kind_weight.values()):
            raise ValueError("kind weights must be positive")
        if self.sc_targets not in ("all", "sensitive"):
            raise ValueError("sc_targets must be 'all' or 'sensitive'")
        unknown = set(self.enabled) - set(PASS_ORDER)
        if unknown:
            raise UnknownKind(f"unknown passes {sorted(unknown)}")


def cost_of(kind: str, n_guards: int, placement_block: int, program: ProgramModel, config: PassConfig) -> float:
    raw = config.kind_weight.get(kind, 1.0) * (1.0 + normalized_freq(program, placement_block)) * n_guards
    return round(raw / COST_QUANTUM) * COST_QUANTUM


class _View:
    """The program as later passes see it: prior guards prepended per block."""

    def __init__(self, program: ProgramModel, prior: Sequence[Manifest]):
        self.program = program
        self.owner: dict[int, int] = {}
        self.extra: dict[int, list[Instruction]] = {}
        for m in prior:
            for inst in m.guard_instructions:
                self.owner[inst.id] = m.id
                self.extra.setdefault(m.placement_block, []).append(inst)
        next_inst = max([program.max_id()] + list(self.owner) + [m.hash_var.id for m in prior if m.hash_var])
        self._next_inst = next_inst + 1
        self._next_manifest = max([0] + [m.id for m in prior]) + 1

    def code(self, block: BasicBlock) -> list[Instruction]:
        return list(self.extra.get(block.id, ())) + list(block.code())

    def function_code(self, fn: Function) -> list[Instruction]:
        return [i for b in fn.blocks for i in self.code(b)]

    def new_inst(self, opcode: str, size: int = 4, deterministic: bool = True, constant: bool = False) -> Instruction:
        inst = Instruction(self._next_inst, opcode, size, deterministic, False, constant)
        self._next_inst += 1
        return inst

    def new_manifest_id(self) -> int:
        mid = self._next_manifest
        self._next_manifest += 1
        return mid

    def coldest_block(self, fn: Function) -> int:
        best = min(range(len(fn.blocks)), key=lambda k: (normalized_freq(self.program, fn.blocks[k].id), k))
        return fn.blocks[best].id


def _runs(code: Iterable[Instruction], pred) -> list[list[Instruction]]:
    runs, cur = [], []
    for inst in code:
        if pred(inst):
            cur.append(inst)
        elif cur:
            runs.append(cur)
            cur = []
    if cur:
        runs.append(cur)
    return runs


def _placeholder_guard(view: _View, prefix: str, size: int) -> tuple[tuple[Instruction, ...], int]:
    """Verifier guard of ``size`` instructions whose second one is the placeholder."""
    opcodes = [f"{prefix}.load", f"{prefix}.placeholder", f"{prefix}.cmp", f"{prefix}.respond"][:size]
    if size == 2:
        opcodes = [f"{prefix}.placeholder", f"{prefix}.cmp"]
    insts = tuple(view.new_inst(op, size=8 if op.endswith("placeholder") else 4) for op in opcodes)
    ph = next(i.id for i in insts if i.opcode.endswith("placeholder"))
    return insts, ph


def _propose_sc(view: _View, config: PassConfig) -> list[Manifest]:
    program = view.program
    out = []
    targets = [f for f in program.functions if config.sc_targets == "all" or f.sensitive]
    for fn in targets:
        others = [g for g in program.functions if g.id != fn.id]
        rng = random.Random(f"{config.seed}/SC/{fn.id}")
        checkers = rng.sample(others, min(config.sc_connectivity, len(others)))
        for checker in sorted(checkers, key=lambda g: program.functions.index(g)):
            mid = view.new_manifest_id()
            block = view.coldest_block(checker)
            ops = ["sc.begin", "sc.addr", "sc.size", "sc.loop", "sc.hash", "sc.placeholder", "sc.cmp", "sc.respond"]
            guard = tuple(view.new_inst(op, size=8 if op == "sc.placeholder" else 4) for op in ops)
            ph = guard[5].id
            protected = frozenset(i.id for i in view.function_code(fn))
            constraints = (
                Order(F(fn.id), M(mid)),
                Present(mid, frozenset({F(fn.id)}), 1),
                Preserve(frozenset({ph})),
                Order(M(mid), I(ph)),
            )
            out.append(
                Manifest(
                    id=mid,
                    kind="SC",
                    placement_block=block,
                    guard_instructions=guard,
                    protected_instruction_ids=protected,
                    protected_block_ids=frozenset(b.id for b in fn.blocks),
                    constraints=constraints,
                    cost=cost_of("SC", len(guard), block, program, config),
                    placeholder=ph,
                    target=fn.id,
                )
            )
    return out


def _propose_hashing(view: _View, config: PassConfig, scheme: str) -> list[Manifest]:
    """OH (one global hash variable) and SROH (one local variable per function)."""
    program = view.program
    hash_kind, verify_kind = f"{scheme}_HASH", f"{scheme}_VERIFY"
    prefix = scheme.lower()
    if scheme == "OH":
        def covered(inst):
            return inst.deterministic
    else:
        def covered(inst):
            return not inst.deterministic and (inst.is_branch_condition or inst.is_constant_data)

    runs_by_fn = []
    for fn in program.functions:
        runs = [(b.id, run) for b in fn.blocks for run in _runs(view.code(b), covered)]
        if runs:
            runs_by_fn.append((fn, runs))
    if not runs_by_fn:
        return []

    global_var = view.new_inst(f"{prefix}.hashvar", size=8, constant=True) if scheme == "OH" else None
    # ids: every hash first, then the verifiers, in function order
    hash_ids = {(fn.id, k): view.new_manifest_id() for fn, runs in runs_by_fn for k in range(len(runs))}
    verify_ids = {fn.id: view.new_manifest_id() for fn, _ in runs_by_fn}
    all_verifiers = frozenset(M(v) for v in verify_ids.values())

    hashes, verifiers = [], []
    for fn, runs in runs_by_fn:
        var = global_var or view.new_inst(f"{prefix}.hashvar", size=8, constant=True)
        fn_hashes = []
        for k, (bid, run) in enumerate(runs):
            mid = hash_ids[(fn.id, k)]
            guard = tuple(view.new_inst(f"{prefix}.hash") for _ in run)
            constraints = [Order(I(i.id), I(var.id)) for i in run]
            owners = sorted({view.owner[i.id] for i in run if i.id in view.owner})
            constraints += [Present(mid, frozenset({M(o)}), 1) for o in owners]
            # a hash is only useful while something verifies its variable
            required = all_verifiers if scheme == "OH" else frozenset({M(verify_ids[fn.id])})
            constraints.append(Present(mid, required, 1))
            m = Manifest(
                id=mid,
                kind=hash_kind,
                placement_block=bid,
                guard_instructions=guard,
                protected_instruction_ids=frozenset(i.id for i in run),
                protected_block_ids=frozenset({bid}),
                constraints=tuple(constraints),
                cost=cost_of(hash_kind, len(guard), bid, program, config),
                hash_var=var,
            )
            fn_hashes.append(m)
        hashes += fn_hashes

        vid = verify_ids[fn.id]
        block = view.coldest_block(fn)
        guard, ph = _placeholder_guard(view, prefix, GUARD_SIZE[verify_kind])
        hashed_originals = sorted(
            i for h in fn_hashes for i in h.protected_instruction_ids if i not in view.owner
        )
        constraints = [Order(I(var.id), M(vid))]
        constraints += [Order(I(i), M(vid)) for i in hashed_originals]
        constraints += [
            Present(vid, frozenset(M(h.id) for h in fn_hashes), 1),
            Preserve(frozenset({ph})),
            Order(M(vid), I(ph)),
        ]
        verifiers.append(
            Manifest(
                id=vid,
                kind=verify_kind,
                placement_block=block,
                guard_instructions=guard,
                constraints=tuple(constraints),
                cost=cost_of(verify_kind, len(guard), block, program, config),
                placeholder=ph,
                hash_var=var,
            )
        )
    return hashes + verifiers


def _propose_csiv(view: _View, config: PassConfig) -> list[Manifest]:
    program = view.program
    sensitive = [f for f in program.functions if f.sensitive]
    if not sensitive:
        return []
    reach = {f.id: reachable_from(program, f.id) for f in program.functions}
    paths = {s.id: [f for f in program.functions if s.id in reach[f.id]] for s in sensitive}
    on_path = [f for f in program.functions if any(f in fs for fs in paths.values())]
    on_path_ids = {f.id for f in on_path}
    shadow = view.new_inst("csiv.shadow", size=8, constant=True)

    reg_ids = {f.id: view.new_manifest_id() for f in on_path}
    ver_ids = {s.id: view.new_manifest_id() for s in sensitive}
    owner = {i.id: f.id for f in program.functions for b in f.blocks for i in b.instructions}
    call_blocks = {}
    for site, callee in program.call_edges:
        if callee in on_path_ids:
            fid = owner[site]
            bid = program.block_of_instruction(site).id
            fn = program.function(fid)
            pos = [b.id for b in fn.blocks].index(bid)
            if fid not in call_blocks or pos < call_blocks[fid][0]:
                call_blocks[fid] = (pos, bid)

    out = []
    tokens = {}
    for fn in on_path:
        mid = reg_ids[fn.id]
        block = call_blocks.get(fn.id, (0, fn.entry_block))[1]
        token = view.new_inst("csiv.register")
        tokens[fn.id] = token
        out.append(
            Manifest(
                id=mid,
                kind="CSIV_REGISTER",
                placement_block=block,
                guard_instructions=(token,),
                protected_block_ids=frozenset({block}),
                constraints=(Order(I(token.id), I(shadow.id)),),
                cost=cost_of("CSIV_REGISTER", 1, block, program, config),
                hash_var=shadow,
            )
        )
    for s in sensitive:
        vid = ver_ids[s.id]
        guard, ph = _placeholder_guard(view, "csiv", GUARD_SIZE["CSIV_VERIFY"])
        constraints = (
            Order(I(shadow.id), M(vid)),
            Present(vid, frozenset(M(reg_ids[f.id]) for f in paths[s.id]), 1),
            Preserve(frozenset({ph})),
            Order(M(vid), I(ph)),
        )
        out.append(
            Manifest(
                id=vid,
                kind="CSIV_VERIFY",
                placement_block=s.entry_block,
                guard_instructions=guard,
                protected_block_ids=frozenset({s.entry_block}),
                constraints=constraints,
                cost=cost_of("CSIV_VERIFY", len(guard), s.entry_block, program, config),
                placeholder=ph,
                hash_var=shadow,
            )
        )
    return out


def _propose_cm(view: _View, config: PassConfig) -> list[Manifest]:
    program = view.program
    out = []
    for fn in program.functions[1:]:
        mid = view.new_manifest_id()
        stub = view.new_inst("cm.stub", size=5)
        out.append(
            Manifest(
                id=mid,
                kind="CM",
                placement_block=fn.entry_block,
                guard_instructions=(stub,),
                protected_block_ids=frozenset(b.id for b in fn.blocks),
                constraints=(Absent(fn.id),),
                cost=cost_of("CM", 1, fn.entry_block, program, config),
                target=fn.id,
            )
        )
    return out


def _propose_obf(view: _View, config: PassConfig) -> list[Manifest]:
    program = view.program
    out = []
    for fn in program.functions:
        mid = view.new_manifest_id()
        dispatch = view.new_inst("obf.dispatch", deterministic=False)
        out.append(
            Manifest(
                id=mid,
                kind="OBF",
                placement_block=fn.entry_block,
                guard_instructions=(dispatch,),
                cost=cost_of("OBF", 1, fn.entry_block, program, config),
                target=fn.id,
            )
        )
    return out


_PROPOSERS = {
    "SC": _propose_sc,
    "OH": lambda v, c: _propose_hashing(v, c, "OH"),
    "SROH": lambda v, c: _propose_hashing(v, c, "SROH"),
    "CSIV": _propose_csiv,
    "CM": _propose_cm,
    "OBF": _propose_obf,
}


def propose(kind: str, program: ProgramModel, config: PassConfig, prior: Sequence[Manifest] = ()) -> list[Manifest]:
    """Manifests one pass proposes for ``program``, given earlier passes' proposals."""
    if kind not in _PROPOSERS:
        raise UnknownKind(f"unknown pass {kind!r}")
    if kind not in config.enabled:
        raise DisabledPass(f"pass {kind} is not enabled")
    return _PROPOSERS[kind](_View(program, prior), config)


def propose_all(program: ProgramModel, config: PassConfig) -> list[Manifest]:
    manifests: list[Manifest] = []
    for kind in PASS_ORDER:
        if kind in config.enabled:
            manifests += propose(kind, program, config, manifests)
    return manifests


# -- protection relation ---------------------------------------------------------


def protects(protector: Manifest, protectee: Manifest, program: ProgramModel) -> bool:
    """True if ``protector`` checks (some of) ``protectee``'s guard instructions."""
    if protector.id == protectee.id:
        return False
    if protector.kind == "SC":
        return program.function_of_block(protectee.placement_block).id == protector.target
    if protector.kind in ("OH_HASH", "SROH_HASH"):
        return not protector.protected_instruction_ids.isdisjoint(protectee.guard_ids())
    return False


def protection_arcs(manifests: Sequence[Manifest], program: ProgramModel) -> list[tuple[int, int]]:
    """All (protector id, protectee id) pairs, sorted."""
    arcs = []
    for j in manifests:
        if j.kind not in ("SC", "OH_HASH", "SROH_HASH"):
            continue
        for i in manifests:
            if protects(j, i, program):
                arcs.append((j.id, i.id))
    return sorted(arcs)


def sc_cm_exclusions(manifests: Sequence[Manifest]) -> list[tuple[int, int]]:
    """(SC id, CM id) pairs where CM would move a function SC needs in place."""
    pinned = {}
    for m in manifests:
        for c in m.presents():
            for n in c.required:
                if n.kind == "f":
                    pinned.setdefault(n.id, []).append(m.id)
    pairs = []
    for m in manifests:
        for fid in m.absent_functions():
            pairs += [(sc, m.id) for sc in pinned.get(fid, ())]
    return sorted(pairs)


def unmet_presence(selected: Sequence[Manifest]) -> list[tuple[int, Present]]:
    """Present constraints over manifests that the selection leaves unsatisfied."""
    ids = {m.id for m in selected}
    bad = []
    for m in selected:
        for c in m.presents():
            mrefs = [n for n in c.required if n.kind == "m"]
            if mrefs and sum(n.id in ids for n in mrefs) < c.min_count:
                bad.append((m.id, c))
    return bad


# -- step two: apply ---------------------------------------------------------------


def _manifest_present(program: ProgramModel, mid: int) -> bool:
    return any(g.manifest_id == mid for g in program.guards())


def _check_refs(manifest: Manifest, program: ProgramModel) -> None:
    own = manifest.guard_ids() | ({manifest.hash_var.id} if manifest.hash_var else set())

    def exists(n: Node) -> bool:
        if n.kind == "i":
            return n.id in own or program.has_instruction(n.id)
        if n.kind == "f":
            return program.has_function(n.id)
        return n.id == manifest.id or _manifest_present(program, n.id)

    if not program.has_block(manifest.placement_block):
        raise StaleManifest(f"m{manifest.id}: placement block {manifest.placement_block} is gone")
    for c in manifest.orders():
        for n in (c.before, c.after):
            if not exists(n):
                raise StaleManifest(f"m{manifest.id}: referenced node {n} was removed")
    for iid in manifest.protected_instruction_ids:
        if not program.has_instruction(iid):
            raise StaleManifest(f"m{manifest.id}: protected instruction {iid} was removed")
    for c in manifest.presents():
        frefs = [n for n in c.required if n.kind != "m"]
        if not frefs:
            continue
        ok = sum(
            1
            for n in frefs
            if exists(n) and not (n.kind == "f" and program.function(n.id).mobilized)
        )
        if ok < c.min_count:
            raise PresenceViolation(f"m{manifest.id}: required nodes {sorted(map(str, frefs))} not present")
    if any(program.has_instruction(i) for i in manifest.guard_ids()):
        raise StaleManifest(f"m{manifest.id} is already applied")


def _map_function(program: ProgramModel, fid: int, fn_map) -> ProgramModel:
    functions = tuple(fn_map(f) if f.id == fid else f for f in program.functions)
    return replace(program, functions=functions)


def _insert_guards(program: ProgramModel, manifest: Manifest) -> ProgramModel:
    targets = [manifest.target if manifest.kind == "SC" else None] * len(manifest.guard_instructions)
    if manifest.kind in HASH_KINDS:
        # hash guard k folds the k-th protected instruction (by id) into the hash variable
        targets = sorted(manifest.protected_instruction_ids)
    new = tuple(
        Guard(
            instruction=inst,
            manifest_id=manifest.id,
            kind=manifest.kind,
            slot="expected" if inst.id == manifest.placeholder else None,
            target=t,
        )
        for inst, t in zip(manifest.guard_instructions, targets)
    )
    fid = program.function_of_block(manifest.placement_block).id

    def add(fn: Function) -> Function:
        blocks = tuple(
            replace(b, guards=b.guards + new) if b.id == manifest.placement_block else b for b in fn.blocks
        )
        return replace(fn, blocks=blocks)

    return _map_function(program, fid, add)


def _obfuscate(fn: Function, keep: frozenset) -> Function:
    def rw(inst: Instruction) -> Instruction:
        if inst.id in keep or inst.opcode.startswith("obf."):
            return inst
        return replace(inst, opcode=f"obf.{inst.opcode}")

    blocks = tuple(
        replace(
            b,
            instructions=tuple(rw(i) for i in b.instructions),
            guards=tuple(replace(g, instruction=rw(g.instruction)) for g in b.guards),
        )
        for b in fn.blocks
    )
    return replace(fn, blocks=blocks)


def apply(manifest: Manifest, program: ProgramModel, honor_preserve: bool = True) -> ProgramModel:
    """Carry out one manifest's transformation on a copy of ``program``.

    ``honor_preserve=False`` lets obfuscation rewrite placeholders too; it
    exists only to demonstrate the resulting finalization failure.
    """
    _check_refs(manifest, program)
    if manifest.kind == "SC" and program.function(manifest.target).mobilized:
        raise PresenceViolation(f"m{manifest.id}: function {manifest.target} is mobilized")
    if manifest.kind == "CM":
        pins = [g.manifest_id for g in program.guards() if g.kind == "SC" and g.target == manifest.target]
        if pins:
            raise PresenceViolation(
                f"m{manifest.id}: function {manifest.target} must stay in place for SC manifests {sorted(set(pins))}"
            )
        program = _map_function(program, manifest.target, lambda f: replace(f, mobilized=True))
    if manifest.kind == "OBF":
        keep = frozenset(g.instruction.id for g in program.guards() if g.slot is not None) if honor_preserve else frozenset()
        program = _map_function(program, manifest.target, lambda f: _obfuscate(f, keep))
    return _insert_guards(program, manifest)


def apply_all(manifests: Iterable[Manifest], program: ProgramModel) -> ProgramModel:
    for m in sorted(manifests, key=Manifest.sort_key):
        program = apply(m, program)
    return program
