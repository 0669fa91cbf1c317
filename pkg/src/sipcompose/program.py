"""Program IR: functions, basic blocks and instructions with profile counts.

Programs are immutable. Protection guards inserted by `passes.apply` live in
per-block ``guards`` tuples next to the original instructions, so the
original program is always recoverable from a protected one.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterator, Optional

from .errors import ParseError, UnknownBlock, ValidationError


@dataclass(frozen=True)
class Instruction:
    id: int
    opcode: str
    size_bytes: int = 4
    deterministic: bool = False
    is_branch_condition: bool = False
    is_constant_data: bool = False


@dataclass(frozen=True)
class Guard:
    """An inserted protection instruction, tagged with its owning manifest.

    ``slot`` names a placeholder that finalization patches; ``value`` is the
    patched content (None until finalized). ``target`` is the function a
    guard addresses statically (SC checkers), which code mobility must not
    move, or the instruction a hash guard folds into its hash variable.
    """

    instruction: Instruction
    manifest_id: int
    kind: str
    slot: Optional[str] = None
    value: Optional[str] = None
    target: Optional[int] = None


@dataclass(frozen=True)
class BasicBlock:
    id: int
    exec_freq: float
    instructions: tuple[Instruction, ...] = ()
    guards: tuple[Guard, ...] = ()

    def code(self) -> tuple[Instruction, ...]:
        """Guards first (in insertion order), then the original instructions."""
        return tuple(g.instruction for g in self.guards) + self.instructions


@dataclass(frozen=True)
class Function:
    id: int
    name: str
    blocks: tuple[BasicBlock, ...]
    entry_block: int
    sensitive: bool = False
    mobilized: bool = False


@dataclass(frozen=True)
class ProgramModel:
    name: str
    functions: tuple[Function, ...] = ()
    call_edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        _validate(self)

    # -- indices -----------------------------------------------------------

    @cached_property
    def _fn_index(self) -> dict[int, Function]:
        return {f.id: f for f in self.functions}

    @cached_property
    def _block_index(self) -> dict[int, tuple[Function, BasicBlock]]:
        return {b.id: (f, b) for f in self.functions for b in f.blocks}

    @cached_property
    def _inst_index(self) -> dict[int, tuple[BasicBlock, Instruction]]:
        out = {}
        for f in self.functions:
            for b in f.blocks:
                for inst in b.code():
                    out[inst.id] = (b, inst)
        return out

    @cached_property
    def _guard_index(self) -> dict[int, Guard]:
        return {g.instruction.id: g for f in self.functions for b in f.blocks for g in b.guards}

    def function(self, fid: int) -> Function:
        return self._fn_index[fid]

    def has_function(self, fid: int) -> bool:
        return fid in self._fn_index

    def block(self, bid: int) -> BasicBlock:
        try:
            return self._block_index[bid][1]
        except KeyError:
            raise UnknownBlock(f"no block {bid}") from None

    def has_block(self, bid: int) -> bool:
        return bid in self._block_index

    def function_of_block(self, bid: int) -> Function:
        try:
            return self._block_index[bid][0]
        except KeyError:
            raise UnknownBlock(f"no block {bid}") from None

    def instruction(self, iid: int) -> Instruction:
        return self._inst_index[iid][1]

    def has_instruction(self, iid: int) -> bool:
        return iid in self._inst_index

    def block_of_instruction(self, iid: int) -> BasicBlock:
        return self._inst_index[iid][0]

    def guard(self, iid: int) -> Optional[Guard]:
        return self._guard_index.get(iid)

    def guards(self) -> Iterator[Guard]:
        for f in self.functions:
            for b in f.blocks:
                yield from b.guards

    def blocks(self) -> Iterator[BasicBlock]:
        for f in self.functions:
            yield from f.blocks

    def instructions(self) -> Iterator[Instruction]:
        """Original (unguarded) instructions in program order."""
        for b in self.blocks():
            yield from b.instructions

    def max_id(self) -> int:
        ids = [0]
        ids += [f.id for f in self.functions]
        ids += [b.id for b in self.blocks()]
        ids += list(self._inst_index)
        return max(ids)

    @cached_property
    def max_freq(self) -> float:
        return max((b.exec_freq for b in self.blocks()), default=0.0)

    @cached_property
    def call_graph(self) -> dict[int, set[int]]:
        owner = {}
        for f in self.functions:
            for b in f.blocks:
                for i in b.instructions:
                    owner[i.id] = f.id
        graph: dict[int, set[int]] = {f.id: set() for f in self.functions}
        for site, callee in self.call_edges:
            graph[owner[site]].add(callee)
        return graph

    def canonical_hash(self) -> str:
        return hashlib.sha256(dumps(self).encode()).hexdigest()


def _validate(p: ProgramModel) -> None:
    fids, bids, iids = set(), set(), set()
    for f in p.functions:
        if f.id in fids:
            raise ValidationError(f"duplicate function id {f.id}")
        fids.add(f.id)
        if not f.blocks:
            raise ValidationError(f"function {f.id} has no blocks")
        if f.entry_block not in {b.id for b in f.blocks}:
            raise ValidationError(f"entry block {f.entry_block} not in function {f.id}")
        for b in f.blocks:
            if b.id in bids:
                raise ValidationError(f"duplicate block id {b.id}")
            bids.add(b.id)
            if not b.exec_freq >= 0:
                raise ValidationError(f"block {b.id} has negative exec_freq")
            for inst in b.code():
                if inst.id in iids:
                    raise ValidationError(f"duplicate instruction id {inst.id}")
                iids.add(inst.id)
                if inst.size_bytes < 1:
                    raise ValidationError(f"instruction {inst.id} has size < 1")
    originals = {i.id for f in p.functions for b in f.blocks for i in b.instructions}
    for site, callee in p.call_edges:
        if site not in originals:
            raise ValidationError(f"call edge from unknown instruction {site}")
        if callee not in fids:
            raise ValidationError(f"call edge to unknown function {callee}")


def normalized_freq(program: ProgramModel, block_id: int) -> float:
    """Block frequency divided by the program-wide maximum (0 if all are 0)."""
    block = program.block(block_id)
    top = program.max_freq
    return block.exec_freq / top if top > 0 else 0.0


# -- JSON -------------------------------------------------------------------

_PROGRAM_KEYS = {"name", "functions", "call_edges"}
_FUNCTION_KEYS = {"id", "name", "sensitive", "entry_block", "blocks"}
_BLOCK_KEYS = {"id", "exec_freq", "instructions"}
_INST_KEYS = {"id", "opcode", "size_bytes", "deterministic", "is_branch_condition", "is_constant_data"}
_GUARD_KEYS = {"manifest", "kind", "slot", "value", "target", "instruction"}


def _check_keys(obj, required, optional, where):
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: expected an object")
    unknown = set(obj) - required - optional
    if unknown:
        raise ValidationError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ValidationError(f"{where}: missing keys {sorted(missing)}")


def _typed(value, types, where):
    # bool is an int subclass; never accept it where a number is expected
    if isinstance(value, bool) and bool not in types:
        raise ValidationError(f"{where}: expected {types}, got bool")
    if not isinstance(value, types):
        raise ValidationError(f"{where}: expected {types}, got {type(value).__name__}")
    return value


def _inst_from(d, where) -> Instruction:
    _check_keys(d, _INST_KEYS, set(), where)
    return Instruction(
        id=_typed(d["id"], (int,), where + ".id"),
        opcode=_typed(d["opcode"], (str,), where + ".opcode"),
        size_bytes=_typed(d["size_bytes"], (int,), where + ".size_bytes"),
        deterministic=_typed(d["deterministic"], (bool,), where + ".deterministic"),
        is_branch_condition=_typed(d["is_branch_condition"], (bool,), where + ".is_branch_condition"),
        is_constant_data=_typed(d["is_constant_data"], (bool,), where + ".is_constant_data"),
    )


def from_dict(data: dict) -> ProgramModel:
    """Build a program from its JSON form; protected programs may carry
    ``guards`` on blocks and ``mobilized`` on functions."""
    _check_keys(data, _PROGRAM_KEYS, set(), "program")
    functions = []
    for fi, fd in enumerate(_typed(data["functions"], (list,), "functions")):
        where = f"functions[{fi}]"
        _check_keys(fd, _FUNCTION_KEYS, {"mobilized"}, where)
        blocks = []
        for bi, bd in enumerate(_typed(fd["blocks"], (list,), where + ".blocks")):
            bw = f"{where}.blocks[{bi}]"
            _check_keys(bd, _BLOCK_KEYS, {"guards"}, bw)
            insts = tuple(
                _inst_from(d, f"{bw}.instructions[{k}]")
                for k, d in enumerate(_typed(bd["instructions"], (list,), bw + ".instructions"))
            )
            guards = []
            for k, gd in enumerate(bd.get("guards", [])):
                gw = f"{bw}.guards[{k}]"
                _check_keys(gd, _GUARD_KEYS, set(), gw)
                guards.append(
                    Guard(
                        instruction=_inst_from(gd["instruction"], gw + ".instruction"),
                        manifest_id=_typed(gd["manifest"], (int,), gw + ".manifest"),
                        kind=_typed(gd["kind"], (str,), gw + ".kind"),
                        slot=gd["slot"],
                        value=gd["value"],
                        target=gd["target"],
                    )
                )
            freq = _typed(bd["exec_freq"], (int, float), bw + ".exec_freq")
            blocks.append(
                BasicBlock(
                    id=_typed(bd["id"], (int,), bw + ".id"),
                    exec_freq=float(freq),
                    instructions=insts,
                    guards=tuple(guards),
                )
            )
        functions.append(
            Function(
                id=_typed(fd["id"], (int,), where + ".id"),
                name=_typed(fd["name"], (str,), where + ".name"),
                sensitive=_typed(fd["sensitive"], (bool,), where + ".sensitive"),
                entry_block=_typed(fd["entry_block"], (int,), where + ".entry_block"),
                blocks=tuple(blocks),
                mobilized=_typed(fd.get("mobilized", False), (bool,), where + ".mobilized"),
            )
        )
    edges = []
    for k, e in enumerate(_typed(data["call_edges"], (list,), "call_edges")):
        if not (isinstance(e, list) and len(e) == 2):
            raise ValidationError(f"call_edges[{k}]: expected [caller_instruction, callee_function]")
        edges.append((_typed(e[0], (int,), "call_edges"), _typed(e[1], (int,), "call_edges")))
    return ProgramModel(
        name=_typed(data["name"], (str,), "name"),
        functions=tuple(functions),
        call_edges=tuple(edges),
    )


def _inst_dict(i: Instruction) -> dict:
    return {
        "id": i.id,
        "opcode": i.opcode,
        "size_bytes": i.size_bytes,
        "deterministic": i.deterministic,
        "is_branch_condition": i.is_branch_condition,
        "is_constant_data": i.is_constant_data,
    }


def to_dict(program: ProgramModel) -> dict:
    functions = []
    for f in program.functions:
        blocks = []
        for b in f.blocks:
            bd = {"id": b.id, "exec_freq": b.exec_freq, "instructions": [_inst_dict(i) for i in b.instructions]}
            if b.guards:
                bd["guards"] = [
                    {
                        "manifest": g.manifest_id,
                        "kind": g.kind,
                        "slot": g.slot,
                        "value": g.value,
                        "target": g.target,
                        "instruction": _inst_dict(g.instruction),
                    }
                    for g in b.guards
                ]
            blocks.append(bd)
        fd = {"id": f.id, "name": f.name, "sensitive": f.sensitive, "entry_block": f.entry_block, "blocks": blocks}
        if f.mobilized:
            fd["mobilized"] = True
        functions.append(fd)
    return {"name": program.name, "functions": functions, "call_edges": [list(e) for e in program.call_edges]}


def dumps(program: ProgramModel) -> str:
    return json.dumps(to_dict(program), indent=1, sort_keys=True)


def loads(text: str) -> ProgramModel:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed program JSON: {exc}") from None
    return from_dict(data)


def load_program(path) -> ProgramModel:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    return loads(text)


def save_program(program: ProgramModel, path) -> None:
    Path(path).write_text(dumps(program) + "\n")


# -- synthetic corpus --------------------------------------------------------

_OPCODES = ("load", "store", "add", "mul", "xor", "sub", "gep", "cast")


def generate_program(seed: int, n_functions: int, mean_blocks: int, det_ratio: float) -> ProgramModel:
    """Seeded random program whose call graph is a rooted DAG from function 0.

    Exactly ``round(det_ratio * n)`` of the n instructions are deterministic.
    """
    if n_functions < 1 or mean_blocks < 1:
        raise ValueError("n_functions and mean_blocks must be >= 1")
    if not 0.0 <= det_ratio <= 1.0:
        raise ValueError("det_ratio must be in [0, 1]")
    rng = random.Random(seed)

    # skeleton: number of instructions per block, per function
    shapes = []
    for _ in range(n_functions):
        nb = rng.randint(1, 2 * mean_blocks - 1)
        shapes.append([rng.randint(2, 5) for _ in range(nb)])

    # call sites: a spanning tree rooted at 0 plus a few forward edges
    calls = []  # (caller fn, block index, callee fn)
    for callee in range(1, n_functions):
        caller = rng.randrange(callee)
        calls.append((caller, rng.randrange(len(shapes[caller])), callee))
    for _ in range(n_functions // 3):
        a, b = sorted(rng.sample(range(n_functions), 2)) if n_functions > 1 else (0, 0)
        if a != b:
            calls.append((a, rng.randrange(len(shapes[a])), b))

    total = sum(sum(s) for s in shapes) + len(calls)
    n_det = round(det_ratio * total)
    det_flags = [True] * n_det + [False] * (total - n_det)
    rng.shuffle(det_flags)

    next_id = iter(range(n_functions, 10**9))
    flag_iter = iter(det_flags)
    functions = []
    edges = []
    for fi, shape in enumerate(shapes):
        blocks = []
        for bi, count in enumerate(shape):
            bid = next(next_id)
            insts = []
            for k in range(count):
                branch = bi < len(shape) - 1 and k == count - 1
                const = not branch and rng.random() < 0.2
                opcode = "icmp" if branch else ("const" if const else rng.choice(_OPCODES))
                insts.append(
                    Instruction(
                        id=next(next_id),
                        opcode=opcode,
                        size_bytes=rng.randint(1, 8),
                        deterministic=next(flag_iter),
                        is_branch_condition=branch,
                        is_constant_data=const,
                    )
                )
            for caller, cbi, callee in calls:
                if caller == fi and cbi == bi:
                    site = Instruction(id=next(next_id), opcode="call", size_bytes=5, deterministic=next(flag_iter))
                    insts.insert(0, site)
                    edges.append((site.id, callee))
            freq = float(rng.choice([0, 1, 2, 5, 10, 20, 50, 100, 500, 1000]))
            blocks.append(BasicBlock(id=bid, exec_freq=freq, instructions=tuple(insts)))
        sensitive = fi > 0 and rng.random() < 0.3
        functions.append(
            Function(id=fi, name=f"fn{fi}", blocks=tuple(blocks), entry_block=blocks[0].id, sensitive=sensitive)
        )
    if n_functions > 1 and not any(f.sensitive for f in functions):
        functions[-1] = replace(functions[-1], sensitive=True)
    return ProgramModel(name=f"synthetic-{seed}", functions=tuple(functions), call_edges=tuple(edges))


def reachable_from(program: ProgramModel, root: int) -> set[int]:
    seen, stack = {root}, [root]
    while stack:
        for nxt in program.call_graph[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen
