"""0/1 ILP model for manifest selection.

Variables: ``m<i>`` selects manifest i, ``e_<j>_<i>`` is 1 when both
manifest j and the manifest i whose guard j protects are selected, ``f<i>``
is 1 when at least one selected manifest protects i's guard.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from ..errors import InconsistentInput, ValidationError
from ..graph import Cycle, DefenseGraph
from ..manifest import Manifest
from ..passes import protection_arcs, sc_cm_exclusions

METRICS = ("explicit_instructions", "explicit_blocks", "implicit_instructions", "implicit_blocks", "manifest_count")
COVERAGE_METRICS = METRICS[:4]
INF = math.inf


def m_name(i: int) -> str:
    return f"m{i}"


def e_name(j: int, i: int) -> str:
    return f"e_{j}_{i}"


def f_name(i: int) -> str:
    return f"f{i}"


@dataclass(frozen=True)
class LinearConstraint:
    coeffs: tuple[tuple[str, float], ...]
    lo: float = -INF
    hi: float = INF
    name: str = ""

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValidationError(f"constraint {self.name}: lo {self.lo} > hi {self.hi}")

    def activity(self, x: dict[str, float]) -> float:
        return sum(c * x[v] for v, c in self.coeffs)

    def satisfied(self, x: dict[str, float], tol: float = 1e-9) -> bool:
        a = self.activity(x)
        return self.lo - tol <= a <= self.hi + tol


@dataclass(frozen=True)
class Requirement:
    metric: str
    sense: str  # ">=" or "<="
    value: float

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValidationError(f"unknown requirement metric {self.metric!r}")
        if self.sense not in (">=", "<="):
            raise ValidationError(f"requirement sense must be '>=' or '<=', got {self.sense!r}")
        if isinstance(self.value, bool) or not isinstance(self.value, (int, float)) or self.value < 0:
            raise ValidationError(f"requirement value must be a non-negative number, got {self.value!r}")


@dataclass
class IlpModel:
    vars: list[str] = field(default_factory=list)
    constraints: list[LinearConstraint] = field(default_factory=list)
    objective: dict[str, float] = field(default_factory=dict)
    sense: str = "minimize"
    # manifest id -> per-metric explicit score, used for requirements and metrics
    scores: dict[int, dict[str, float]] = field(default_factory=dict)
    # protectee id -> protector ids, i.e. the e vars feeding f<i>
    protectors: dict[int, list[int]] = field(default_factory=dict)

    def add_var(self, name: str) -> None:
        if name not in self._var_set:
            self.vars.append(name)
            self._var_set.add(name)

    def __post_init__(self):
        self._var_set = set(self.vars)

    def add(self, coeffs, lo=-INF, hi=INF, name=None) -> LinearConstraint:
        merged: dict[str, float] = {}
        for v, c in coeffs:
            if v not in self._var_set:
                raise InconsistentInput(f"constraint references unknown variable {v}")
            merged[v] = merged.get(v, 0.0) + c
        row = LinearConstraint(
            tuple((v, c) for v, c in merged.items() if c != 0), lo, hi, name or f"c{len(self.constraints)}"
        )
        self.constraints.append(row)
        return row

    def manifest_ids(self) -> list[int]:
        return [int(v[1:]) for v in self.vars if v.startswith("m")]

    def objective_value(self, x: dict[str, float]) -> float:
        return sum(c * x[v] for v, c in self.objective.items())

    def violated(self, x: dict[str, float], tol: float = 1e-9) -> list[LinearConstraint]:
        return [c for c in self.constraints if not c.satisfied(x, tol)]

    def is_feasible(self, x: dict[str, float], tol: float = 1e-9) -> bool:
        return all(x.get(v) in (0, 1) for v in self.vars) and not self.violated(x, tol)

    def complete(self, selected: set[int]) -> dict[str, int]:
        """Full assignment for a manifest subset, with e and f at their exact values."""
        x = {m_name(i): int(i in selected) for i in self.manifest_ids()}
        self.complete_assignment(x)
        return x

    def complete_assignment(self, x: dict[str, int]) -> bool:
        """Overwrite e and f in ``x`` with their exact values given the m values."""
        for i, prots in self.protectors.items():
            mi = x[m_name(i)]
            any_e = 0
            for j in prots:
                e = int(mi and x[m_name(j)])
                x[e_name(j, i)] = e
                any_e |= e
            x[f_name(i)] = any_e
        return True

    def coverage(self, x: dict[str, float]) -> dict[str, float]:
        """Value of each requirement metric under assignment ``x``."""
        out = dict.fromkeys(METRICS, 0.0)
        for v, c in self.metric_coeffs().items():
            out[v] = sum(k * x[name] for name, k in c)
        return out

    def metric_coeffs(self) -> dict[str, list[tuple[str, float]]]:
        out: dict[str, list[tuple[str, float]]] = {k: [] for k in METRICS}
        for i, s in sorted(self.scores.items()):
            out["explicit_instructions"].append((m_name(i), s["instructions"]))
            out["explicit_blocks"].append((m_name(i), s["blocks"]))
            out["manifest_count"].append((m_name(i), 1.0))
            if i in self.protectors:
                out["implicit_instructions"].append((f_name(i), s["instructions"]))
                out["implicit_blocks"].append((f_name(i), s["blocks"]))
        return out

    def add_requirement(self, req: Requirement) -> LinearConstraint:
        coeffs = self.metric_coeffs()[req.metric]
        lo, hi = (req.value, INF) if req.sense == ">=" else (-INF, req.value)
        return self.add(coeffs, lo, hi, name=f"req_{req.metric}_{'ge' if req.sense == '>=' else 'le'}")

    def add_cycle(self, cycle: Cycle) -> LinearConstraint:
        ids = cycle.all_ids
        unknown = [i for i in ids if i not in self.scores]
        if unknown:
            raise InconsistentInput(f"cycle references unknown manifests {unknown}")
        return self.add([(m_name(i), 1.0) for i in ids], hi=len(ids) - 1, name="cyc_" + "_".join(map(str, ids)))

    def copy(self) -> "IlpModel":
        return IlpModel(
            vars=list(self.vars),
            constraints=list(self.constraints),
            objective=dict(self.objective),
            sense=self.sense,
            scores={k: dict(v) for k, v in self.scores.items()},
            protectors={k: list(v) for k, v in self.protectors.items()},
        )


def build_model(
    graph: DefenseGraph,
    manifests: Sequence[Manifest],
    cycles: Sequence[Cycle] = (),
    requirements: Sequence[Requirement] = (),
    costs: Optional[dict[int, float]] = None,
    literal_f: bool = False,
) -> IlpModel:
    """Selection model over ``manifests`` minimizing total cost.

    ``literal_f`` encodes the protected-guard flag as the single double
    inequality 0 <= |E|*f - sum(E) <= 1 instead of the disjunction
    linearization; it exists to demonstrate that form's infeasibility.
    """
    program = graph.program
    manifests = sorted(manifests, key=lambda m: m.id)
    ids = {m.id for m in manifests}
    if costs is None:
        costs = {m.id: m.cost for m in manifests}
    model = IlpModel()
    for m in manifests:
        model.add_var(m_name(m.id))
        model.scores[m.id] = {
            "instructions": float(len(m.protected_instruction_ids)),
            "blocks": float(len(m.protected_block_ids)),
        }

    arcs = protection_arcs(manifests, program)
    for j, i in arcs:
        model.protectors.setdefault(i, []).append(j)
    for j, i in arcs:
        model.add_var(e_name(j, i))
    for i in sorted(model.protectors):
        model.add_var(f_name(i))

    for cycle in cycles:
        model.add_cycle(cycle)

    for m in manifests:
        for c in m.presents():
            mrefs = sorted(n.id for n in c.required if n.kind == "m")
            if not any(n.kind == "m" for n in c.required):
                continue
            live = [r for r in mrefs if r in ids]
            dep = m_name(c.dependent)
            if len(live) == 1 and c.min_count == 1:
                model.add([(dep, 1.0), (m_name(live[0]), -1.0)], hi=0, name=f"pres_{c.dependent}_{live[0]}")
            else:
                row = [(m_name(r), 1.0) for r in live] + [(dep, -float(c.min_count))]
                model.add(row, lo=0, name=f"pres_{c.dependent}_n{c.min_count}")

    for j, i in arcs:
        model.add([(m_name(i), 1.0), (m_name(j), 1.0), (e_name(j, i), -2.0)], lo=0, hi=1, name=f"arc_{j}_{i}")
        # implied by the row above for 0/1 points; they only tighten the LP relaxation
        model.add([(e_name(j, i), 1.0), (m_name(i), -1.0)], hi=0, name=f"arc_{j}_{i}_le_m{i}")
        model.add([(e_name(j, i), 1.0), (m_name(j), -1.0)], hi=0, name=f"arc_{j}_{i}_le_m{j}")

    for i, prots in sorted(model.protectors.items()):
        es = [(e_name(j, i), 1.0) for j in prots]
        if literal_f:
            model.add([(f_name(i), float(len(prots)))] + [(e, -1.0) for e, _ in es], lo=0, hi=1, name=f"dup_{i}")
        else:
            model.add([(f_name(i), 1.0)] + [(e, -1.0) for e, _ in es], hi=0, name=f"or_{i}")
            for e, _ in es:
                model.add([(f_name(i), 1.0), (e, -1.0)], lo=0, name=f"or_{i}_{e}")

    for sc, cm in sc_cm_exclusions(manifests):
        model.add([(m_name(sc), 1.0), (m_name(cm), 1.0)], hi=1, name=f"excl_{sc}_{cm}")

    for req in requirements:
        model.add_requirement(req)

    model.objective = {m_name(m.id): float(costs[m.id]) for m in manifests if costs[m.id] != 0}
    model.sense = "minimize"
    return model
