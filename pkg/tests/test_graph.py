import random

import pytest
from hypothesis import given, strategies as st

from builders import chain_program, plain_manifest, ring, sc_manifest
from oracles import has_cycle, sccs_by_reachability
from sipcompose.errors import DanglingReference
from sipcompose.graph import (
    build_graph,
    elementary_cycles,
    export_dot,
    find_cycles,
    strongly_connected_components,
    summary,
)
from sipcompose.manifest import F, I, M
from sipcompose.passes import PassConfig, propose_all
from sipcompose.program import generate_program


def test_mileage_single_cycle(mileage, mileage_manifests):
    cycles = find_cycles(build_graph(mileage_manifests, mileage))
    assert len(cycles) == 1
    by = {m.id: m for m in mileage_manifests}
    assert {by[i].kind for i in cycles[0].manifest_ids} == {"SC", "OH_VERIFY"}


def test_function_arc_expands_to_instructions(mileage, mileage_manifests):
    g = build_graph(mileage_manifests, mileage)
    sc = next(m for m in mileage_manifests if m.kind == "SC")
    target_code = {i.id for b in mileage.function(sc.target).blocks for i in b.instructions}
    assert (M(sc.id), F(sc.target)) in g.dependency_arcs
    for iid in target_code:
        assert (M(sc.id), I(iid)) in g.dependency_arcs
    # guards placed in the target function are expanded too
    placed = [m for m in mileage_manifests if mileage.function_of_block(m.placement_block).id == sc.target]
    for m in placed:
        for gid in m.guard_ids():
            assert (M(sc.id), I(gid)) in g.dependency_arcs


def test_empty_graph():
    g = build_graph([], chain_program(0))
    assert find_cycles(g) == []
    assert summary(g)["nodes"] == 0
    assert export_dot(g).startswith("digraph defense {")


def test_dangling_reference():
    p = chain_program(1)
    with pytest.raises(DanglingReference):
        build_graph([plain_manifest(1, after=(99,))], p)


def test_ring_of_three_is_one_cycle():
    g = build_graph(ring([1, 2, 3]), chain_program(1))
    cycles = find_cycles(g)
    assert [c.manifest_ids for c in cycles] == [(1, 2, 3)]
    dot = export_dot(g)
    solid = [l for l in dot.splitlines() if "->" in l and "dashed" not in l]
    assert len(solid) == 3


def test_chain_is_acyclic():
    ms = [plain_manifest(1, after=(2,)), plain_manifest(2, after=(3,)), plain_manifest(3)]
    assert find_cycles(build_graph(ms, chain_program(1))) == []


def test_dot_has_dashed_present_arc(mileage, mileage_manifests):
    by = {m.id: m for m in mileage_manifests}
    dot = export_dot(build_graph(mileage_manifests, mileage))
    verify = next(m for m in mileage_manifests if m.kind == "OH_VERIFY")
    hashes = [m.id for m in mileage_manifests if m.kind == "OH_HASH"]
    dashed = [l for l in dot.splitlines() if "dashed" in l]
    assert any(f'"m{verify.id}" -> "m{h}"' in l for l in dashed for h in hashes), dashed
    assert by


def test_sc_cycle_between_two_checkers():
    p = chain_program(2)
    g = build_graph([sc_manifest(1, 0, 1, p), sc_manifest(2, 1, 0, p)], p)
    assert [c.manifest_ids for c in find_cycles(g)] == [(1, 2)]


def _graph_nodes_arcs(g):
    return g.nodes, g.dependency_arcs


@given(seed=st.integers(0, 3000), n=st.integers(2, 4))
def test_sccs_match_reachability_oracle(seed, n):
    p = generate_program(seed, n, 2, 0.5)
    g = build_graph(propose_all(p, PassConfig()), p)
    ours = {frozenset(c) for c in strongly_connected_components(g)}
    oracle = sccs_by_reachability(*_graph_nodes_arcs(g))
    assert {c for c in ours if len(c) > 1} == {c for c in oracle if len(c) > 1}


@given(seed=st.integers(0, 3000))
def test_removing_cycle_members_leaves_acyclic(seed):
    p = generate_program(seed, 3, 2, 0.5)
    ms = propose_all(p, PassConfig())
    g = build_graph(ms, p)
    drop = {c.manifest_ids[0] for c in elementary_cycles(g)}
    while True:
        kept = [m for m in ms if m.id not in drop]
        h = build_graph(kept, p, universe=ms)
        cyc = elementary_cycles(h)
        if not cyc:
            break
        drop |= {c.manifest_ids[0] for c in cyc}
    assert not has_cycle(h.nodes, h.dependency_arcs)


@given(seed=st.integers(0, 3000), shuffle=st.integers(0, 1000))
def test_insertion_order_invariance(seed, shuffle):
    p = generate_program(seed, 3, 2, 0.5)
    ms = propose_all(p, PassConfig())
    shuffled = list(ms)
    random.Random(shuffle).shuffle(shuffled)
    a, b = build_graph(ms, p), build_graph(shuffled, p)
    assert a.nodes == b.nodes and a.dependency_arcs == b.dependency_arcs and a.present_arcs == b.present_arcs
    assert find_cycles(a) == find_cycles(b)
    assert export_dot(a) == export_dot(b)


@given(seed=st.integers(0, 3000))
def test_cycle_support_recreates_component(seed):
    p = generate_program(seed, 3, 2, 0.5)
    ms = propose_all(p, PassConfig())
    for c in find_cycles(build_graph(ms, p)):
        sub = [m for m in ms if m.id in set(c.all_ids)]
        h = build_graph(sub, p, universe=ms)
        assert has_cycle(h.nodes, h.dependency_arcs)


def test_summary_counts(mileage, mileage_manifests):
    g = build_graph(mileage_manifests, mileage)
    s = summary(g)
    assert s["manifest_nodes"] == 12
    assert s["nodes"] == len(g.nodes)
    assert s["dependency_arcs"] == len(g.dependency_arcs)
    assert s["sccs"] == 1
