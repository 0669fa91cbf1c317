from collections import Counter
from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from builders import chain_program, sc_manifest
from sipcompose.errors import DisabledPass, PresenceViolation, StaleManifest, UnknownKind
from sipcompose.manifest import PASS_ORDER, Manifest, Node, Present
from sipcompose.passes import (
    COST_QUANTUM,
    PassConfig,
    apply,
    apply_all,
    propose,
    propose_all,
    protects,
    sc_cm_exclusions,
    unmet_presence,
)
from sipcompose.program import generate_program, normalized_freq


def test_mileage_proposes_twelve(mileage_manifests):
    assert len(mileage_manifests) == 12
    assert Counter(m.kind for m in mileage_manifests) == {
        "SC": 1,
        "OH_HASH": 3,
        "OH_VERIFY": 2,
        "SROH_HASH": 2,
        "SROH_VERIFY": 1,
        "CSIV_REGISTER": 2,
        "CSIV_VERIFY": 1,
    }


def test_mileage_sc_scores(mileage_manifests):
    sc = next(m for m in mileage_manifests if m.kind == "SC")
    assert (len(sc.protected_instruction_ids), len(sc.protected_block_ids)) == (6, 1)


def test_propose_does_not_mutate(mileage, mileage_config):
    before = mileage.canonical_hash()
    propose_all(mileage, mileage_config.pass_config())
    assert mileage.canonical_hash() == before


def test_no_deterministic_instructions_gives_no_oh():
    p = generate_program(3, 3, 2, 0.0)
    assert propose("OH", p, PassConfig()) == []


@pytest.mark.parametrize("k", [1, 2])
def test_sc_connectivity_per_function(k):
    p = generate_program(11, 4, 2, 0.5)
    ms = propose("SC", p, PassConfig(sc_connectivity=k))
    assert Counter(m.target for m in ms) == {f.id: k for f in p.functions}
    assert all(p.function_of_block(m.placement_block).id != m.target for m in ms)


def test_unknown_and_disabled_pass():
    p = chain_program(2)
    with pytest.raises(UnknownKind):
        propose("XYZ", p, PassConfig())
    with pytest.raises(DisabledPass):
        propose("CM", p, PassConfig(enabled=frozenset({"SC"})))
    with pytest.raises(UnknownKind):
        PassConfig(enabled=frozenset({"NOPE"}))


def test_cost_formula_matches_independent_computation():
    p = generate_program(8, 3, 2, 0.5)
    for m in propose_all(p, PassConfig()):
        raw = (1 + normalized_freq(p, m.placement_block)) * len(m.guard_instructions)
        assert abs(m.cost - raw) <= COST_QUANTUM / 2
        assert m.cost / COST_QUANTUM == round(m.cost / COST_QUANTUM)


def _nodes_exist(m: Manifest, ids, program, guard_ids):
    def ok(n: Node):
        if n.kind == "m":
            return n.id in ids
        if n.kind == "f":
            return program.has_function(n.id)
        return program.has_instruction(n.id) or n.id in guard_ids

    return ok


@given(seed=st.integers(0, 5000), n=st.integers(2, 4), blocks=st.integers(1, 2))
def test_proposal_invariants(seed, n, blocks):
    p = generate_program(seed, n, blocks, 0.5)
    ms = propose_all(p, PassConfig())
    ids = {m.id for m in ms}
    assert len(ids) == len(ms)
    guard_ids = {g for m in ms for g in m.guard_ids()} | {m.hash_var.id for m in ms if m.hash_var}
    assert not guard_ids & {i.id for i in p.instructions()}
    for m in ms:
        assert m.guard_instructions, m
        assert m.cost > 0
        ok = _nodes_exist(m, ids, p, guard_ids)
        for o in m.orders():
            assert ok(o.before) and ok(o.after)
        for c in m.presents():
            assert all(ok(r) for r in c.required)
        if m.placeholder is not None:
            assert m.placeholder in m.guard_ids()
            assert m.placeholder in m.preserved()
    # every preserved placeholder belongs to exactly one manifest
    for m in ms:
        for ph in m.preserved():
            assert sum(ph in x.guard_ids() for x in ms) == 1


def test_apply_sc_inserts_guard_with_slot():
    p = chain_program(2)
    m = sc_manifest(1, 0, 1, p)
    q = apply(m, p)
    guards = [g for g in q.guards() if g.manifest_id == 1]
    assert [g.instruction.id for g in guards] == sorted(m.guard_ids())
    assert [g.slot for g in guards if g.instruction.id == m.placeholder] == ["expected"]
    assert list(p.guards()) == []


def test_apply_twice_is_stale():
    p = chain_program(2)
    m = sc_manifest(1, 0, 1, p)
    with pytest.raises(StaleManifest):
        apply(m, apply(m, p))


def test_obf_preserves_placeholders():
    p = generate_program(4, 3, 2, 0.5)
    ms = propose_all(p, PassConfig(enabled=frozenset({"SC", "OBF"})))
    q = apply_all(ms, p)
    for m in ms:
        if m.kind == "SC":
            ph = q.instruction(m.placeholder)
            assert ph.opcode == "sc.placeholder"
    obf_changed = [i for i in q.instructions() if i.opcode.startswith("obf.")]
    assert obf_changed


def test_cm_conflicts_with_sc_on_same_function():
    p = generate_program(4, 3, 2, 0.5)
    ms = propose_all(p, PassConfig(enabled=frozenset({"SC", "CM"})))
    pairs = sc_cm_exclusions(ms)
    assert pairs
    sc_id, cm_id = pairs[0]
    by = {m.id: m for m in ms}
    with pytest.raises(PresenceViolation):
        apply(by[cm_id], apply(by[sc_id], p))


def test_unmet_presence_detects_missing_dependency(mileage_manifests):
    verify = next(m for m in mileage_manifests if m.kind == "OH_VERIFY")
    unmet = unmet_presence([verify])
    assert unmet and unmet[0][0] == verify.id
    assert isinstance(unmet[0][1], Present)


def test_protects_relation(mileage_manifests, mileage):
    by = {m.id: m for m in mileage_manifests}
    sc = next(m for m in mileage_manifests if m.kind == "SC")
    for m in mileage_manifests:
        in_target = mileage.function_of_block(m.placement_block).id == sc.target
        assert protects(sc, m, mileage) == (in_target and m.id != sc.id)
    for h in (m for m in mileage_manifests if m.kind.endswith("_HASH")):
        for m in mileage_manifests:
            assert protects(h, m, mileage) == bool(h.protected_instruction_ids & m.guard_ids())
    assert by


def test_pass_order_constant():
    assert PASS_ORDER == ("SC", "OH", "SROH", "CSIV", "CM", "OBF")


def test_config_validation():
    with pytest.raises(ValueError):
        PassConfig(sc_connectivity=-1)
    with pytest.raises(ValueError):
        replace(PassConfig(), sc_targets="some")


def test_apply_mileage_sc_guards_checker_function(mileage, mileage_manifests):
    sc = next(m for m in mileage_manifests if m.kind == "SC")
    q = apply(sc, mileage)
    checker = mileage.function_of_block(sc.placement_block)
    assert checker.name == "onWheelRotationCompleted"
    added = [g for b in q.function(checker.id).blocks for g in b.guards]
    assert {g.instruction.id for g in added} == set(sc.guard_ids())
    assert any(g.slot == "expected" for g in added)
