"""Independent reference computations used to check the production code.

None of these reuse the package's solver, SCC code or linearization logic:
the brute-force optimum enumerates subsets with numpy, e/f values are
recomputed from variable names alone, and SCCs come from pairwise
reachability.
"""

from __future__ import annotations

import math
import re
from itertools import product

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

_E = re.compile(r"^e_(-?\d+)_(-?\d+)$")
_F = re.compile(r"^f(-?\d+)$")
_M = re.compile(r"^m(-?\d+)$")


def _columns(model):
    col = {v: k for k, v in enumerate(model.vars)}
    A = np.zeros((len(model.constraints), len(model.vars)))
    lo = np.empty(len(model.constraints))
    hi = np.empty(len(model.constraints))
    for r, c in enumerate(model.constraints):
        for v, a in c.coeffs:
            A[r, col[v]] += a
        lo[r], hi[r] = c.lo, c.hi
    obj = np.zeros(len(model.vars))
    for v, a in model.objective.items():
        obj[col[v]] = a
    return col, A, lo, hi, obj


def subset_assignments(model) -> np.ndarray:
    """Every subset of manifest variables, with e and f derived from the names.

    Row k encodes subset k: e_j_i = m_i AND m_j, f_i = OR of all e_*_i.
    """
    col = {v: k for k, v in enumerate(model.vars)}
    mvars = [v for v in model.vars if _M.match(v)]
    n = len(mvars)
    X = np.zeros((2**n, len(model.vars)), dtype=np.int8)
    bits = ((np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1).astype(np.int8)
    for k, v in enumerate(mvars):
        X[:, col[v]] = bits[:, k]
    for v in model.vars:
        m = _E.match(v)
        if m:
            j, i = m.groups()
            X[:, col[v]] = X[:, col[f"m{i}"]] & X[:, col[f"m{j}"]]
    for v in model.vars:
        m = _F.match(v)
        if m:
            i = m.group(1)
            es = [col[e] for e in model.vars if _E.match(e) and _E.match(e).group(2) == i]
            X[:, col[v]] = X[:, es].max(axis=1) if es else 0
    return X


def brute_force(model):
    """(optimal objective or None if infeasible, feasible-row mask, X)."""
    _, A, lo, hi, obj = _columns(model)
    X = subset_assignments(model).astype(float)
    if len(model.constraints):
        act = X @ A.T
        ok = np.all((act >= lo - 1e-9) & (act <= hi + 1e-9), axis=1)
    else:
        ok = np.ones(len(X), dtype=bool)
    if not ok.any():
        return None, ok, X
    vals = X[ok] @ obj
    best = vals.max() if model.sense == "maximize" else vals.min()
    return float(best), ok, X


def milp_optimum(model):
    """Optimum from scipy's MILP solver, as a second opinion on larger models."""
    _, A, lo, hi, obj = _columns(model)
    sign = -1.0 if model.sense == "maximize" else 1.0
    cons = [LinearConstraint(A, lo, hi)] if len(model.constraints) else []
    res = milp(sign * obj, constraints=cons, integrality=np.ones(len(obj)), bounds=Bounds(0, 1))
    if res.status != 0:
        return None
    return sign * float(res.fun)


def sccs_by_reachability(nodes, arcs):
    """Strongly connected components as frozensets, via pairwise reachability."""
    succ = {n: set() for n in nodes}
    for a, b in arcs:
        succ[a].add(b)

    def reach(s):
        seen, stack = {s}, [s]
        while stack:
            for w in succ[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return seen

    r = {n: reach(n) for n in nodes}
    comps = set()
    for n in nodes:
        comps.add(frozenset(x for x in r[n] if n in r[x]))
    return comps


def has_cycle(nodes, arcs) -> bool:
    for comp in sccs_by_reachability(nodes, arcs):
        if len(comp) > 1:
            return True
    return any(a == b for a, b in arcs)


def enumerate_assignments(n):
    return product((0, 1), repeat=n)


def quantized(x: float, q: float = 1 / 1024) -> bool:
    return math.isclose(x / q, round(x / q), abs_tol=1e-9)
