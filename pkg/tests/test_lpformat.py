import pytest
from hypothesis import given, strategies as st

from builders import chain_program, plain_manifest, ring
from sipcompose.errors import ParseError
from sipcompose.graph import build_graph, find_cycles
from sipcompose.ilp import IlpModel, Requirement, build_model, export_lp, one_sided_rows, parse_lp
from sipcompose.passes import PassConfig, propose_all
from sipcompose.program import generate_program


def test_empty_model():
    text = export_lp(IlpModel())
    assert "Minimize" in text.splitlines()[:2]
    assert text.rstrip().endswith("End")
    back = parse_lp(text)
    assert back.vars == [] and back.constraints == []


def test_two_cycle_row():
    p = chain_program(1)
    ms = ring([1, 2])
    g = build_graph(ms, p)
    text = export_lp(build_model(g, ms, find_cycles(g)))
    assert "m1 + m2 <= 1" in text
    assert "Binary" in text


def test_double_bound_becomes_two_rows():
    m = IlpModel()
    for v in ("a", "b"):
        m.add_var(v)
    m.add([("a", 1.0), ("b", 1.0)], lo=0, hi=1, name="r")
    text = export_lp(m)
    assert "r_lo:" in text and "r_hi:" in text
    assert one_sided_rows(parse_lp(text)) == one_sided_rows(m)


@pytest.mark.parametrize("bad", ["", "Minimize\n obj: x +\nEnd", "Maximize\n obj: 2 x\nSubject To\n c: x <=\nEnd"])
def test_parse_errors(bad):
    with pytest.raises(ParseError):
        parse_lp(bad)


@given(seed=st.integers(0, 5000), need=st.integers(0, 30))
def test_round_trip_generated(seed, need):
    p = generate_program(seed, 3, 2, 0.5)
    ms = propose_all(p, PassConfig())
    g = build_graph(ms, p)
    model = build_model(g, ms, find_cycles(g), [Requirement("explicit_instructions", ">=", need)])
    back = parse_lp(export_lp(model))
    assert set(back.vars) == set(model.vars)
    assert back.sense == model.sense
    assert back.objective == pytest.approx(model.objective)
    assert one_sided_rows(back) == one_sided_rows(model)


def test_maximize_header():
    m = IlpModel(sense="maximize")
    m.add_var("x")
    m.objective = {"x": 2.5}
    text = export_lp(m)
    assert "Maximize" in text.splitlines()[:2] and "2.5 x" in text
    assert parse_lp(text).objective == {"x": 2.5}
    assert plain_manifest
