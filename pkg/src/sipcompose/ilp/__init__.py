"""Manifest-selection ILP: model building, exact solving and LP export."""

from .lpformat import export_lp, one_sided_rows, parse_lp
from .model import (
    COVERAGE_METRICS,
    METRICS,
    IlpModel,
    LinearConstraint,
    Requirement,
    build_model,
    e_name,
    f_name,
    m_name,
)
from .solver import INFEASIBLE, OPTIMAL, TIMED_OUT, Solution, solve

__all__ = [
    "COVERAGE_METRICS",
    "INFEASIBLE",
    "METRICS",
    "OPTIMAL",
    "TIMED_OUT",
    "IlpModel",
    "LinearConstraint",
    "Requirement",
    "Solution",
    "build_model",
    "e_name",
    "export_lp",
    "f_name",
    "m_name",
    "one_sided_rows",
    "parse_lp",
    "solve",
]
