"""Coverage metrics, the heuristic baseline and the ILP-vs-baseline comparison."""

from __future__ import annotations

import csv
import random
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator, Sequence

from .composer import CompositionConfig, CompositionResult, compose, finalize_selection
from .graph import build_graph, find_cycles
from .ilp import Requirement
from .manifest import Manifest
from .passes import propose_all, protects, sc_cm_exclusions, unmet_presence
from .program import ProgramModel, generate_program

BASELINE_PASSES = ("SC", "OH", "SROH")


@dataclass
class MetricsReport:
    explicit_instr_sum: int = 0
    explicit_instr_union: int = 0
    explicit_block_sum: int = 0
    explicit_block_union: int = 0
    implicit_instr: int = 0
    implicit_block: int = 0
    estimated_cost: float = 0.0
    connectivity_histogram: dict[int, int] = field(default_factory=dict)
    manifest_count: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["connectivity_histogram"] = {str(k): v for k, v in sorted(self.connectivity_histogram.items())}
        return d


def manifest_scores(m: Manifest) -> tuple[int, int]:
    """Explicit (instruction, block) coverage of one manifest."""
    return len(m.protected_instruction_ids), len(m.protected_block_ids)


def guard_protected(selected: Sequence[Manifest], program: ProgramModel) -> set[int]:
    """Ids of selected manifests whose guard another selected manifest protects."""
    return {i.id for i in selected if any(protects(j, i, program) for j in selected)}


def compute_metrics(result, program: ProgramModel = None) -> MetricsReport:
    """Metrics of a composition result, or of a plain list of selected manifests."""
    if isinstance(result, CompositionResult):
        selected, program = result.selected_manifests, program or result.program
    else:
        selected = list(result)
    instr = Counter(i for m in selected for i in m.protected_instruction_ids)
    blocks = Counter(b for m in selected for b in m.protected_block_ids)
    flagged = guard_protected(selected, program)
    return MetricsReport(
        explicit_instr_sum=sum(instr.values()),
        explicit_instr_union=len(instr),
        explicit_block_sum=sum(blocks.values()),
        explicit_block_union=len(blocks),
        implicit_instr=sum(len(m.protected_instruction_ids) for m in selected if m.id in flagged),
        implicit_block=sum(len(m.protected_block_ids) for m in selected if m.id in flagged),
        estimated_cost=sum(m.cost for m in selected),
        connectivity_histogram=dict(sorted(Counter(instr.values()).items())),
        manifest_count=len(selected),
    )


def coverage_requirements(report: MetricsReport) -> list[Requirement]:
    """The four coverage floors a composition must match to dominate ``report``."""
    return [
        Requirement("explicit_instructions", ">=", report.explicit_instr_sum),
        Requirement("explicit_blocks", ">=", report.explicit_block_sum),
        Requirement("implicit_instructions", ">=", report.implicit_instr),
        Requirement("implicit_blocks", ">=", report.implicit_block),
    ]


def _presence_closure(selected: list[Manifest]) -> list[Manifest]:
    while True:
        bad = {mid for mid, _ in unmet_presence(selected)}
        bad |= {cm for _, cm in sc_cm_exclusions(selected)}
        if not bad:
            return selected
        selected = [m for m in selected if m.id not in bad]


def baseline_selection(manifests: Sequence[Manifest], program: ProgramModel) -> tuple[list[Manifest], int]:
    """Accept everything, then break each cycle by dropping its least-covering manifest.

    Ties drop the highest id. Returns the selection and the number of rounds.
    """
    selected = sorted(manifests, key=Manifest.sort_key)
    rounds = 0
    while True:
        rounds += 1
        selected = _presence_closure(selected)
        cycles = find_cycles(build_graph(selected, program, universe=manifests))
        if not cycles:
            return selected, rounds
        by_id = {m.id: m for m in selected}
        drop = set()
        for c in cycles:
            victim = min(c.manifest_ids, key=lambda i: (manifest_scores(by_id[i])[0], -i))
            drop.add(victim)
        selected = [m for m in selected if m.id not in drop]


def _baseline_config(config: CompositionConfig) -> CompositionConfig:
    passes = tuple(p for p in config.pass_order if p in BASELINE_PASSES) or BASELINE_PASSES
    return replace(config, passes=passes, two_phase=False, requirements=())


def run_baseline(program: ProgramModel, config: CompositionConfig = CompositionConfig()) -> CompositionResult:
    config = _baseline_config(config)
    manifests = propose_all(program, config.pass_config())
    selected, rounds = baseline_selection(manifests, program)
    state, order = finalize_selection(program, selected, manifests)
    return CompositionResult(
        program=program,
        proposed=manifests,
        selected_manifests=selected,
        protected_program=state.program,
        finalization_order=order,
        metrics=compute_metrics(selected, program),
        iterations_used=rounds,
        objective_value=sum(m.cost for m in selected),
        patch_state=state,
    )


@dataclass
class Comparison:
    program: str
    manifests_base: int
    manifests_opt: int
    cost_base: float
    cost_opt: float
    decrease_pct: float
    explicit: int
    implicit: int

    FIELDS = ("program", "manifests_base", "manifests_opt", "cost_base", "cost_opt", "decrease_pct", "explicit", "implicit")

    def row(self) -> dict:
        return {k: getattr(self, k) for k in self.FIELDS}


def compare(program: ProgramModel, config: CompositionConfig = CompositionConfig()) -> Comparison:
    """Baseline cost versus the cheapest selection with at least its coverage."""
    config = _baseline_config(config)
    base = run_baseline(program, config)
    opt = compose(program, replace(config, requirements=tuple(coverage_requirements(base.metrics))))
    cb, co = base.metrics.estimated_cost, opt.metrics.estimated_cost
    return Comparison(
        program=program.name,
        manifests_base=base.metrics.manifest_count,
        manifests_opt=opt.metrics.manifest_count,
        cost_base=cb,
        cost_opt=co,
        decrease_pct=(cb - co) / cb * 100.0 if cb > 0 else 0.0,
        explicit=opt.metrics.explicit_instr_sum,
        implicit=opt.metrics.implicit_instr,
    )


CORPUS_PARAMS = {"n_functions": (2, 4), "mean_blocks": (1, 2), "det_ratio": (0.3, 0.7)}


def corpus(corpus_seed: int, count: int) -> Iterator[ProgramModel]:
    """Seeded desk-scale synthetic programs."""
    rng = random.Random(corpus_seed)
    for _ in range(count):
        seed = rng.randrange(2**31)
        yield generate_program(
            seed,
            rng.randint(*CORPUS_PARAMS["n_functions"]),
            rng.randint(*CORPUS_PARAMS["mean_blocks"]),
            round(rng.uniform(*CORPUS_PARAMS["det_ratio"]), 2),
        )


def write_csv(rows: Sequence[Comparison], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=Comparison.FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow(r.row())
