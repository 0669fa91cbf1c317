import math

import pytest
from hypothesis import given, settings, strategies as st

from builders import chain_program, nested_cycles, plain_manifest, ring, sc_manifest
from oracles import brute_force, milp_optimum
from sipcompose.composer import check_linearization, select_manifests
from sipcompose.errors import InconsistentInput, InfeasibleRequirements, ValidationError
from sipcompose.graph import Cycle, build_graph, find_cycles
from sipcompose.ilp import (
    INFEASIBLE,
    OPTIMAL,
    TIMED_OUT,
    IlpModel,
    Requirement,
    build_model,
    solve,
)
from sipcompose.passes import PassConfig, propose_all
from sipcompose.program import generate_program


def model_for(manifests, program, reqs=(), **kw):
    g = build_graph(manifests, program)
    return build_model(g, manifests, find_cycles(g), reqs, **kw)


def literal_fixture():
    """Manifest 1 in function 0, guarded by three SC checkers of function 0."""
    p = chain_program(4)
    ms = [plain_manifest(1, coverage=3)] + [sc_manifest(k + 1, k, 0, p) for k in (1, 2, 3)]
    return p, ms


def pin(model, values):
    for v, x in values.items():
        model.add([(v, 1.0)], lo=x, hi=x, name=f"pin_{v}")


def test_two_cycle_picks_cheaper():
    p = chain_program(1)
    ms = [plain_manifest(1, after=(2,), cost=1.0), plain_manifest(2, after=(1,), cost=2.0)]
    model = model_for(ms, p, [Requirement("manifest_count", ">=", 1)])
    rows = [c for c in model.constraints if c.name.startswith("cyc_")]
    assert [(dict(c.coeffs), c.hi) for c in rows] == [({"m1": 1.0, "m2": 1.0}, 1)]
    sol = solve(model)
    assert sol.status == OPTIMAL and sol.selected() == [1] and sol.objective_value == 1.0


def test_no_requirements_selects_nothing():
    p = chain_program(2)
    sol = solve(model_for(ring([1, 2, 3]), p))
    assert sol.selected() == [] and sol.objective_value == 0


def test_infeasible_requirements():
    p = chain_program(1)
    model = model_for(ring([1, 2]), p, [Requirement("manifest_count", ">=", 2)])
    sol = solve(model)
    assert sol.status == INFEASIBLE and sol.objective_value is None
    with pytest.raises(InfeasibleRequirements):
        select_manifests(ring([1, 2]), p, [Requirement("manifest_count", ">=", 2)])


def test_empty_model_solves_to_zero():
    sol = solve(IlpModel())
    assert sol.status == OPTIMAL and sol.objective_value == 0


def test_time_limit_zero_reports_timeout():
    p = generate_program(1, 3, 2, 0.5)
    ms = propose_all(p, PassConfig())
    sol = solve(model_for(ms, p), time_limit=-1)
    assert sol.status == TIMED_OUT


def test_f_rows_for_three_protectors():
    p, ms = literal_fixture()
    model = model_for(ms, p)
    assert sorted(model.protectors[1]) == [2, 3, 4]
    names = {c.name for c in model.constraints}
    assert {"or_1", "or_1_e_2_1", "or_1_e_3_1", "or_1_e_4_1"} <= names
    lit = model_for(ms, p, literal_f=True)
    dup = next(c for c in lit.constraints if c.name == "dup_1")
    assert dict(dup.coeffs) == {"f1": 3.0, "e_2_1": -1.0, "e_3_1": -1.0, "e_4_1": -1.0}
    assert (dup.lo, dup.hi) == (0, 1)


def test_literal_f_single_active_arc_is_infeasible():
    p, ms = literal_fixture()
    pins = {"m1": 1, "m2": 1, "m3": 0, "m4": 0}
    ok = model_for(ms, p)
    pin(ok, pins)
    sol = solve(ok)
    assert sol.status == OPTIMAL and sol.assignment["f1"] == 1
    lit = model_for(ms, p, literal_f=True)
    pin(lit, pins)
    assert solve(lit).status == INFEASIBLE


def test_cycle_with_unknown_manifest_rejected():
    model = model_for(ring([1, 2]), chain_program(1))
    with pytest.raises(InconsistentInput):
        model.add_cycle(Cycle((1, 7)))


@pytest.mark.parametrize(
    "metric,sense,value", [("nope", ">=", 1), ("manifest_count", "==", 1), ("manifest_count", ">=", -1)]
)
def test_bad_requirement(metric, sense, value):
    with pytest.raises(ValidationError):
        Requirement(metric, sense, value)


def _random_fixture(seed, n):
    import random

    rng = random.Random(seed)
    ms = []
    for i in range(1, n + 1):
        after = tuple(j for j in range(1, n + 1) if j != i and rng.random() < 0.25)
        ms.append(plain_manifest(i, after=after, coverage=rng.randint(0, 6), blocks=rng.randint(0, 2),
                                 cost=rng.randint(1, 8) / 4))
    return ms


@given(seed=st.integers(0, 10**6), n=st.integers(1, 8), need=st.integers(0, 20))
def test_solver_matches_brute_force_on_random_orders(seed, n, need):
    p = chain_program(1)
    ms = _random_fixture(seed, n)
    model = model_for(ms, p, [Requirement("explicit_instructions", ">=", need)])
    best, _, _ = brute_force(model)
    sol = solve(model)
    if best is None:
        assert sol.status == INFEASIBLE
    else:
        assert sol.status == OPTIMAL
        assert sol.objective_value == best
        check_linearization(model, sol.assignment)


@settings(max_examples=15)
@given(seed=st.integers(0, 10**6))
def test_solver_matches_scipy_milp_on_generated_programs(seed):
    p = generate_program(seed, 3, 2, 0.5)
    ms = propose_all(p, PassConfig())
    model = model_for(ms, p, [Requirement("explicit_instructions", ">=", 10)])
    ref = milp_optimum(model)
    sol = solve(model)
    if ref is None:
        assert sol.objective_value is None
    else:
        assert math.isclose(sol.objective_value, ref, abs_tol=1e-6)


@given(seed=st.integers(0, 10**6), lo=st.integers(0, 10), extra=st.integers(0, 10))
def test_monotone_in_requirement(seed, lo, extra):
    p = chain_program(1)
    ms = _random_fixture(seed, 6)
    a = solve(model_for(ms, p, [Requirement("explicit_instructions", ">=", lo)]))
    b = solve(model_for(ms, p, [Requirement("explicit_instructions", ">=", lo + extra)]))
    if b.objective_value is not None:
        assert a.objective_value is not None and a.objective_value <= b.objective_value


def test_deterministic_assignment():
    p = generate_program(9, 3, 2, 0.5)
    ms = propose_all(p, PassConfig())
    model = model_for(ms, p, [Requirement("explicit_instructions", ">=", 12)])
    assert solve(model).assignment == solve(model).assignment


def test_nested_cycles_coverage_maximum():
    sel = select_manifests(nested_cycles(), chain_program(1), objective="coverage")
    assert [m.id for m in sel.selected] == [2]
    assert sel.iterations >= 2


def test_contradictory_bounds_infeasible():
    m = IlpModel()
    m.add_var("m1")
    m.add([("m1", 1.0)], lo=1, name="ge")
    m.add([("m1", 1.0)], hi=0, name="le")
    assert solve(m).status == INFEASIBLE
