"""End-to-end composition: propose, graph, select, apply, finalize, verify."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

from .errors import (
    FinalizationInconsistent,
    InfeasibleRequirements,
    IterationLimitExceeded,
    ParseError,
    ValidationError,
)
from .finalize import PatchState, finalization_order, finalize_and_verify, tamper_check
from .graph import Cycle, build_graph, elementary_cycles, find_cycles
from .ilp import COVERAGE_METRICS, INFEASIBLE, IlpModel, Requirement, Solution, build_model, e_name, f_name, m_name, solve
from .manifest import PASS_ORDER, Manifest
from .passes import DEFAULT_KIND_WEIGHT, PassConfig, apply_all, propose_all
from .program import ProgramModel

__all__ = [
    "CompositionConfig",
    "CompositionResult",
    "Selection",
    "compose",
    "finalize_selection",
    "load_config",
    "select_manifests",
    "tamper_check",
]

_CONFIG_KEYS = {
    "two_phase",
    "requirements",
    "passes",
    "sc_connectivity",
    "seed",
    "time_limit_s",
    "max_iterations",
    "sc_targets",
    "kind_weight",
}


@dataclass(frozen=True)
class CompositionConfig:
    requirements: tuple[Requirement, ...] = ()
    two_phase: bool = False
    time_limit_s: float = 30.0
    seed: int = 0
    max_iterations: int = 50
    passes: tuple[str, ...] = PASS_ORDER
    sc_connectivity: int = 1
    sc_targets: str = "all"
    kind_weight: Optional[dict] = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if self.time_limit_s <= 0:
            raise ValidationError("time_limit_s must be positive")
        unknown = set(self.passes) - set(PASS_ORDER)
        if unknown:
            raise ValidationError(f"unknown passes {sorted(unknown)}")

    @property
    def pass_order(self) -> tuple[str, ...]:
        """Enabled passes in the fixed scheduling order."""
        return tuple(p for p in PASS_ORDER if p in self.passes)

    def pass_config(self) -> PassConfig:
        try:
            return PassConfig(
                sc_connectivity=self.sc_connectivity,
                enabled=frozenset(self.passes),
                seed=self.seed,
                kind_weight=dict(self.kind_weight or DEFAULT_KIND_WEIGHT),
                sc_targets=self.sc_targets,
            )
        except ValueError as exc:
            raise ValidationError(str(exc)) from None

    @classmethod
    def from_dict(cls, data: dict) -> "CompositionConfig":
        if not isinstance(data, dict):
            raise ValidationError("config must be a JSON object")
        extra = set(data) - _CONFIG_KEYS
        if extra:
            raise ValidationError(f"unknown config keys {sorted(extra)}")
        try:
            reqs = tuple(
                Requirement(r["metric"], r["sense"], r["value"]) for r in data.get("requirements", [])
            )
            if any(set(r) - {"metric", "sense", "value"} for r in data.get("requirements", [])):
                raise ValidationError("unknown requirement keys")
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed requirement: {exc!r}") from None
        kw = {}
        for key, typ in (
            ("two_phase", bool),
            ("sc_connectivity", int),
            ("seed", int),
            ("max_iterations", int),
            ("time_limit_s", (int, float)),
            ("sc_targets", str),
        ):
            if key in data:
                v = data[key]
                if not isinstance(v, typ) or (typ is not bool and isinstance(v, bool)):
                    raise ValidationError(f"config key {key} has wrong type")
                kw[key] = v
        if "passes" in data:
            if not isinstance(data["passes"], list) or not all(isinstance(p, str) for p in data["passes"]):
                raise ValidationError("passes must be a list of pass names")
            kw["passes"] = tuple(data["passes"])
        if "kind_weight" in data:
            kw["kind_weight"] = {**DEFAULT_KIND_WEIGHT, **data["kind_weight"]}
        return cls(requirements=reqs, **kw)

    def to_dict(self) -> dict:
        return {
            "two_phase": self.two_phase,
            "requirements": [{"metric": r.metric, "sense": r.sense, "value": r.value} for r in self.requirements],
            "passes": list(self.pass_order),
            "sc_connectivity": self.sc_connectivity,
            "seed": self.seed,
            "time_limit_s": self.time_limit_s,
            "max_iterations": self.max_iterations,
            "sc_targets": self.sc_targets,
        }


def load_config(path) -> CompositionConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed config JSON: {exc}") from None
    return CompositionConfig.from_dict(data)


@dataclass
class Selection:
    """Outcome of the solve / re-analyze loop for one objective."""

    solution: Solution
    model: IlpModel
    selected: list[Manifest]
    iterations: int
    initial_cycles: list[Cycle]
    cuts: list[Cycle]

    @property
    def coverage(self) -> dict[str, float]:
        return self.model.coverage(self.solution.assignment)

    @property
    def cost(self) -> float:
        return sum(m.cost for m in self.selected)


@dataclass
class CompositionResult:
    program: ProgramModel
    proposed: list[Manifest]
    selected_manifests: list[Manifest]
    protected_program: ProgramModel
    finalization_order: list[int]
    metrics: Any
    iterations_used: int
    objective_value: float
    initial_cycles: list[Cycle] = field(default_factory=list)
    cuts: list[Cycle] = field(default_factory=list)
    patch_state: Optional[PatchState] = None
    phase_a: Optional[Selection] = None
    selection: Optional[Selection] = None

    @property
    def selected_ids(self) -> list[int]:
        return sorted(m.id for m in self.selected_manifests)

    def report(self) -> dict:
        sel = set(self.selected_ids)
        out = {
            "program": self.program.name,
            "proposed": len(self.proposed),
            "selected": sorted(sel),
            "selected_count": len(sel),
            "dropped": sorted(m.id for m in self.proposed if m.id not in sel),
            "cycles": [_cycle_dict(c) for c in self.initial_cycles],
            "cuts": [_cycle_dict(c) for c in self.cuts],
            "iterations": self.iterations_used,
            "objective": self.objective_value,
            "finalization_order": self.finalization_order,
            "metrics": self.metrics.to_dict(),
        }
        if self.phase_a is not None:
            out["phase_a"] = {
                "selected": [m.id for m in self.phase_a.selected],
                "cost": self.phase_a.cost,
                "coverage": {k: self.phase_a.coverage[k] for k in COVERAGE_METRICS},
                "iterations": self.phase_a.iterations,
            }
        return out


def _cycle_dict(c: Cycle) -> dict:
    return {"manifest_ids": list(c.manifest_ids), "support_ids": list(c.support_ids)}


def check_linearization(model: IlpModel, assignment: dict[str, int]) -> None:
    """Assert e = m_i AND m_j and f = OR(E_i) on a solver assignment."""
    for i, prots in model.protectors.items():
        es = []
        for j in prots:
            e = assignment[e_name(j, i)]
            if e != (assignment[m_name(i)] & assignment[m_name(j)]):
                raise FinalizationInconsistent(f"{e_name(j, i)} disagrees with its manifests")
            es.append(e)
        if assignment[f_name(i)] != int(any(es)):
            raise FinalizationInconsistent(f"{f_name(i)} disagrees with its arcs")


def coverage_objective(model: IlpModel) -> dict[str, float]:
    """Lexicographic maximize: coverage first, then the number of manifests."""
    n = len(model.scores)
    weight = float(n + 1)
    obj: dict[str, float] = {}
    for i, s in model.scores.items():
        score = s["instructions"] + s["blocks"]
        obj[m_name(i)] = weight * score + 1.0
        if i in model.protectors:
            obj[f_name(i)] = weight * score
    return {v: c for v, c in obj.items() if c}


def select_manifests(
    manifests: Sequence[Manifest],
    program: ProgramModel,
    requirements: Sequence[Requirement] = (),
    objective: str = "cost",
    time_limit_s: float = 30.0,
    max_iterations: int = 50,
    extra_cuts: Sequence[Cycle] = (),
) -> Selection:
    """Solve, re-analyze the selection for residual cycles, cut, repeat."""
    by_id = {m.id: m for m in manifests}
    graph = build_graph(manifests, program)
    initial = find_cycles(graph)
    model = build_model(graph, manifests, initial, requirements)
    for c in extra_cuts:
        model.add_cycle(c)
    if objective == "coverage":
        model.objective = coverage_objective(model)
        model.sense = "maximize"
    elif objective != "cost":
        raise ValidationError(f"unknown objective {objective!r}")
    cuts = list(extra_cuts)
    for iteration in range(1, max_iterations + 1):
        sol = solve(model, time_limit_s)
        if sol.objective_value is None:
            raise InfeasibleRequirements(
                "no conflict-free selection meets the requirements"
                + (" within the time limit" if sol.status != INFEASIBLE else "")
            )
        check_linearization(model, sol.assignment)
        chosen = [by_id[i] for i in sol.selected()]
        residual = elementary_cycles(build_graph(chosen, program, universe=manifests))
        if not residual:
            return Selection(sol, model, chosen, iteration, initial, cuts)
        for c in residual:
            model.add_cycle(c)
            cuts.append(c)
    raise IterationLimitExceeded(f"selection still cyclic after {max_iterations} solves")


def finalize_selection(program: ProgramModel, selected: Sequence[Manifest], universe: Sequence[Manifest]):
    """Apply the selection, order it, and run the finalization simulator."""
    protected = apply_all(selected, program)
    graph = build_graph(selected, program, universe=universe)
    order = finalization_order(graph)
    state = finalize_and_verify(protected, order)
    return state, order


def compose(program: ProgramModel, config: CompositionConfig = CompositionConfig()) -> CompositionResult:
    from .metrics import compute_metrics  # metrics builds on composition results

    manifests = propose_all(program, config.pass_config())
    phase_a = None
    if config.two_phase:
        phase_a = select_manifests(
            manifests, program, objective="coverage",
            time_limit_s=config.time_limit_s, max_iterations=config.max_iterations,
        )
        cov = phase_a.coverage
        reqs = [Requirement(k, ">=", cov[k]) for k in COVERAGE_METRICS]
        sel = select_manifests(
            manifests, program, reqs, objective="cost",
            time_limit_s=config.time_limit_s, max_iterations=config.max_iterations,
            extra_cuts=phase_a.cuts,
        )
    else:
        sel = select_manifests(
            manifests, program, config.requirements, objective="cost",
            time_limit_s=config.time_limit_s, max_iterations=config.max_iterations,
        )
    selected = sorted(sel.selected, key=Manifest.sort_key)
    state, order = finalize_selection(program, selected, manifests)
    iterations = sel.iterations + (phase_a.iterations if phase_a else 0)
    return CompositionResult(
        program=program,
        proposed=manifests,
        selected_manifests=selected,
        protected_program=state.program,
        finalization_order=order,
        metrics=compute_metrics(selected, program),
        iterations_used=iterations,
        objective_value=sel.solution.objective_value,
        initial_cycles=sel.initial_cycles,
        cuts=sel.cuts,
        patch_state=state,
        phase_a=phase_a,
        selection=sel,
    )
