"""Conflict-free composition of software integrity protections.

Protection passes propose manifests; a defense graph exposes cyclic
dependencies between them; a 0/1 ILP picks a conflict-free, cheapest subset
that meets coverage requirements; a finalization simulator checks that the
result raises no false tamper alarms.
"""

from .composer import CompositionConfig, CompositionResult, compose, load_config
from .finalize import finalization_order, finalize_and_verify, tamper_check
from .graph import Cycle, DefenseGraph, build_graph, export_dot, find_cycles
from .ilp import IlpModel, Requirement, Solution, build_model, export_lp, parse_lp, solve
from .manifest import Absent, Manifest, Order, Present, Preserve
from .metrics import MetricsReport, compare, compute_metrics, run_baseline
from .passes import PassConfig, apply, propose, propose_all
from .program import ProgramModel, generate_program, load_program, normalized_freq

__all__ = [
    "Absent",
    "CompositionConfig",
    "CompositionResult",
    "Cycle",
    "DefenseGraph",
    "IlpModel",
    "Manifest",
    "MetricsReport",
    "Order",
    "PassConfig",
    "Present",
    "Preserve",
    "ProgramModel",
    "Requirement",
    "Solution",
    "apply",
    "build_graph",
    "build_model",
    "compare",
    "compose",
    "compute_metrics",
    "export_dot",
    "export_lp",
    "finalization_order",
    "finalize_and_verify",
    "find_cycles",
    "generate_program",
    "load_config",
    "load_program",
    "normalized_freq",
    "parse_lp",
    "propose",
    "propose_all",
    "run_baseline",
    "solve",
    "tamper_check",
]
