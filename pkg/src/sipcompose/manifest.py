"""Protection manifests and the constraints they carry."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Union

from .errors import ParseError, ValidationError
from .program import Instruction, _inst_dict, _inst_from

# pass order; obfuscation runs after integrity passes, before finalization
PASS_ORDER = ("SC", "OH", "SROH", "CSIV", "CM", "OBF")

PASS_KINDS = {
    "SC": ("SC",),
    "OH": ("OH_HASH", "OH_VERIFY"),
    "SROH": ("SROH_HASH", "SROH_VERIFY"),
    "CSIV": ("CSIV_REGISTER", "CSIV_VERIFY"),
    "CM": ("CM",),
    "OBF": ("OBF",),
}
KINDS = tuple(k for p in PASS_ORDER for k in PASS_KINDS[p])
KIND_PASS = {k: p for p, ks in PASS_KINDS.items() for k in ks}
HASH_KINDS = ("OH_HASH", "SROH_HASH")
VERIFY_KINDS = ("OH_VERIFY", "SROH_VERIFY")


class Node(NamedTuple):
    """Defense-graph node reference: kind is 'm' (manifest), 'f' or 'i'."""

    kind: str
    id: int

    def __str__(self):
        return f"{self.kind}{self.id}"

    @classmethod
    def parse(cls, text: str) -> "Node":
        if len(text) < 2 or text[0] not in "mfi" or not text[1:].lstrip("-").isdigit():
            raise ValidationError(f"bad node reference {text!r}")
        return cls(text[0], int(text[1:]))


def M(i: int) -> Node:
    return Node("m", i)


def F(i: int) -> Node:
    return Node("f", i)


def I(i: int) -> Node:
    return Node("i", i)


@dataclass(frozen=True)
class Order:
    """``after`` may only be finalized once ``before`` is final."""

    before: Node
    after: Node

    def __post_init__(self):
        if self.before == self.after:
            raise ValidationError(f"order constraint endpoints coincide: {self.before}")


@dataclass(frozen=True)
class Preserve:
    instructions: frozenset[int]


@dataclass(frozen=True)
class Present:
    """``dependent`` needs at least ``min_count`` of ``required`` to exist."""

    dependent: int
    required: frozenset[Node]
    min_count: int = 1

    def __post_init__(self):
        if not 1 <= self.min_count <= len(self.required):
            raise ValidationError(
                f"present constraint of m{self.dependent}: min_count {self.min_count} "
                f"not in [1, {len(self.required)}]"
            )


@dataclass(frozen=True)
class Absent:
    """Static-presence negation: the function leaves the static image."""

    function: int


Constraint = Union[Order, Preserve, Present, Absent]


@dataclass(frozen=True)
class Manifest:
    id: int
    kind: str
    placement_block: int
    guard_instructions: tuple[Instruction, ...] = ()
    protected_instruction_ids: frozenset[int] = frozenset()
    protected_block_ids: frozenset[int] = frozenset()
    constraints: tuple[Constraint, ...] = ()
    cost: float = 0.0
    placeholder: Optional[int] = None  # guard instruction id patched at finalization
    hash_var: Optional[Instruction] = None
    target: Optional[int] = None  # function addressed statically (SC) or mobilized (CM)

    @property
    def node(self) -> Node:
        return M(self.id)

    def guard_ids(self) -> frozenset[int]:
        return frozenset(i.id for i in self.guard_instructions)

    def orders(self) -> list[Order]:
        return [c for c in self.constraints if isinstance(c, Order)]

    def presents(self) -> list[Present]:
        return [c for c in self.constraints if isinstance(c, Present)]

    def preserved(self) -> frozenset[int]:
        out = frozenset()
        for c in self.constraints:
            if isinstance(c, Preserve):
                out |= c.instructions
        return out

    def absent_functions(self) -> list[int]:
        return [c.function for c in self.constraints if isinstance(c, Absent)]

    def sort_key(self):
        return (PASS_ORDER.index(KIND_PASS[self.kind]), self.id)


# -- JSON ---------------------------------------------------------------------


def _constraint_dict(c: Constraint) -> dict:
    if isinstance(c, Order):
        return {"type": "order", "before": str(c.before), "after": str(c.after)}
    if isinstance(c, Preserve):
        return {"type": "preserve", "instructions": sorted(c.instructions)}
    if isinstance(c, Present):
        return {
            "type": "present",
            "dependent": c.dependent,
            "required": sorted(str(n) for n in c.required),
            "min_count": c.min_count,
        }
    return {"type": "absent", "function": c.function}


def _constraint_from(d: dict) -> Constraint:
    kind = d.get("type")
    if kind == "order":
        return Order(Node.parse(d["before"]), Node.parse(d["after"]))
    if kind == "preserve":
        return Preserve(frozenset(d["instructions"]))
    if kind == "present":
        return Present(d["dependent"], frozenset(Node.parse(n) for n in d["required"]), d["min_count"])
    if kind == "absent":
        return Absent(d["function"])
    raise ValidationError(f"unknown constraint type {kind!r}")


def manifest_to_dict(m: Manifest) -> dict:
    return {
        "id": m.id,
        "kind": m.kind,
        "placement_block": m.placement_block,
        "guard_instructions": [_inst_dict(i) for i in m.guard_instructions],
        "protected_instruction_ids": sorted(m.protected_instruction_ids),
        "protected_block_ids": sorted(m.protected_block_ids),
        "constraints": [_constraint_dict(c) for c in m.constraints],
        "cost": m.cost,
        "placeholder": m.placeholder,
        "hash_var": _inst_dict(m.hash_var) if m.hash_var else None,
        "target": m.target,
    }


def manifest_from_dict(d: dict) -> Manifest:
    try:
        if d["kind"] not in KINDS:
            raise ValidationError(f"unknown manifest kind {d['kind']!r}")
        return Manifest(
            id=d["id"],
            kind=d["kind"],
            placement_block=d["placement_block"],
            guard_instructions=tuple(_inst_from(i, "guard") for i in d["guard_instructions"]),
            protected_instruction_ids=frozenset(d["protected_instruction_ids"]),
            protected_block_ids=frozenset(d["protected_block_ids"]),
            constraints=tuple(_constraint_from(c) for c in d["constraints"]),
            cost=float(d["cost"]),
            placeholder=d["placeholder"],
            hash_var=_inst_from(d["hash_var"], "hash_var") if d["hash_var"] else None,
            target=d["target"],
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed manifest: {exc!r}") from None


def dump_manifests(manifests, path) -> None:
    Path(path).write_text(json.dumps([manifest_to_dict(m) for m in manifests], indent=1) + "\n")


def load_manifests(path) -> list[Manifest]:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed manifests JSON: {exc}") from None
    return [manifest_from_dict(d) for d in data]
