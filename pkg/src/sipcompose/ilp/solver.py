"""Depth-first branch-and-bound for 0/1 models with LP-relaxation bounds."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csr_matrix

from .model import IlpModel

OPTIMAL, INFEASIBLE, TIMED_OUT = "Optimal", "Infeasible", "TimedOut"
_INT_TOL = 1e-6
_PRUNE_TOL = 1e-9


@dataclass
class Solution:
    assignment: dict[str, int] = field(default_factory=dict)
    objective_value: Optional[float] = None
    status: str = INFEASIBLE
    nodes_explored: int = 0

    def selected(self) -> list[int]:
        return sorted(int(v[1:]) for v, x in self.assignment.items() if v.startswith("m") and x == 1)

    def to_dict(self) -> dict:
        return {
            "assignment": dict(sorted(self.assignment.items())),
            "objective": self.objective_value,
            "status": self.status,
            "nodes_explored": self.nodes_explored,
        }


class _Matrices:
    def __init__(self, model: IlpModel):
        col = {v: k for k, v in enumerate(model.vars)}
        n = len(model.vars)
        ub_rows, ub_rhs, eq_rows, eq_rhs = [], [], [], []
        for c in model.constraints:
            row = np.zeros(n)
            for v, a in c.coeffs:
                row[col[v]] += a
            if c.lo == c.hi:
                eq_rows.append(row)
                eq_rhs.append(c.lo)
                continue
            if math.isfinite(c.hi):
                ub_rows.append(row)
                ub_rhs.append(c.hi)
            if math.isfinite(c.lo):
                ub_rows.append(-row)
                ub_rhs.append(-c.lo)
        self.quantum = _objective_quantum(model.objective.values())
        sign = -1.0 if model.sense == "maximize" else 1.0
        self.c = np.zeros(n)
        for v, a in model.objective.items():
            self.c[col[v]] = sign * a
        self.sign = sign
        self.A_ub = csr_matrix(np.array(ub_rows)) if ub_rows else None
        self.b_ub = np.array(ub_rhs) if ub_rows else None
        self.A_eq = csr_matrix(np.array(eq_rows)) if eq_rows else None
        self.b_eq = np.array(eq_rhs) if eq_rows else None

    def relax(self, lb: np.ndarray, ub: np.ndarray):
        res = linprog(
            self.c,
            A_ub=self.A_ub,
            b_ub=self.b_ub,
            A_eq=self.A_eq,
            b_eq=self.b_eq,
            bounds=np.column_stack([lb, ub]),
            method="highs",
        )
        if res.status != 0:
            return None, None
        return res.fun, res.x


def _objective_quantum(coeffs, denominator: int = 1024) -> float:
    """Largest q with every integer point's objective a multiple of q, or 0.

    Lets the solver round LP bounds up to the next attainable value.
    """
    nums = []
    for c in coeffs:
        scaled = c * denominator
        if abs(scaled - round(scaled)) > 1e-9 or abs(scaled) > 2**52:
            return 0.0
        nums.append(abs(int(round(scaled))))
    g = math.gcd(*nums) if nums else 0
    return g / denominator


def solve(model: IlpModel, time_limit: float = 30.0) -> Solution:
    """Exact solve. Branches on the lowest-index fractional variable, 0 first."""
    start = time.monotonic()
    n = len(model.vars)
    mats = _Matrices(model)
    best_val = math.inf  # in minimization form
    best_x: Optional[np.ndarray] = None
    nodes = 0
    timed_out = False
    stack = [(np.zeros(n), np.ones(n))]
    while stack:
        if time.monotonic() - start > time_limit:
            timed_out = True
            break
        lb, ub = stack.pop()
        nodes += 1
        if n == 0:
            val, x = 0.0, np.zeros(0)
        else:
            val, x = mats.relax(lb, ub)
        if val is None:
            continue
        if mats.quantum:
            val = math.ceil(val / mats.quantum - 1e-6) * mats.quantum
        if val >= best_val - _PRUNE_TOL:
            continue
        frac = np.flatnonzero(np.abs(x - np.round(x)) > _INT_TOL)
        if len(frac):
            # cheap primal heuristic: the integral part of the relaxation
            floor = np.floor(x + _INT_TOL)
            cand = {v: int(floor[k]) for k, v in enumerate(model.vars)}
            if model.complete_assignment(cand) and model.is_feasible(cand):
                obj = float(mats.c @ np.array([cand[v] for v in model.vars]))
                if obj < best_val - _PRUNE_TOL:
                    best_val, best_x = obj, np.array([cand[v] for v in model.vars], dtype=float)
        else:
            xi = np.round(x)
            assignment = {v: int(xi[k]) for k, v in enumerate(model.vars)}
            if model.is_feasible(assignment):
                obj = float(mats.c @ xi)
                if obj < best_val - _PRUNE_TOL:
                    best_val, best_x = obj, xi
                continue
            # rounding broke a row; branch on the first free variable instead
            frac = np.flatnonzero(lb != ub)
            if not len(frac):
                continue
        k = frac[0]
        lb1, ub0 = lb.copy(), ub.copy()
        lb1[k] = 1.0
        ub0[k] = 0.0
        stack.append((lb1, ub))
        stack.append((lb, ub0))

    if best_x is None:
        return Solution(status=TIMED_OUT if timed_out else INFEASIBLE, nodes_explored=nodes)
    assignment = {v: int(best_x[k]) for k, v in enumerate(model.vars)}
    return Solution(
        assignment=assignment,
        objective_value=model.objective_value(assignment),
        status=TIMED_OUT if timed_out else OPTIMAL,
        nodes_explored=nodes,
    )
