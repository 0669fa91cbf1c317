import json

import pytest
from hypothesis import given, strategies as st

from sipcompose.errors import ParseError, UnknownBlock, ValidationError
from sipcompose.program import (
    ProgramModel,
    dumps,
    from_dict,
    generate_program,
    loads,
    normalized_freq,
    reachable_from,
    to_dict,
)


def tiny(freqs):
    return {
        "name": "t",
        "functions": [
            {
                "id": 0,
                "name": "f",
                "sensitive": False,
                "entry_block": 1,
                "blocks": [
                    {"id": k + 1, "exec_freq": f, "instructions": [
                        {"id": 100 + k, "opcode": "add", "size_bytes": 4, "deterministic": True,
                         "is_branch_condition": False, "is_constant_data": False}]}
                    for k, f in enumerate(freqs)
                ],
            }
        ],
        "call_edges": [],
    }


def test_mileage_shape(mileage):
    assert [f.id for f in mileage.functions] == [0, 1]
    assert sorted(b.id for b in mileage.blocks()) == [10, 11, 12, 20]
    assert mileage.call_graph[0] == {1}


def test_empty_program_is_valid():
    p = from_dict({"name": "empty", "functions": [], "call_edges": []})
    assert list(p.instructions()) == []
    assert loads(dumps(p)) == p


def test_normalized_freq_examples():
    p = from_dict(tiny([10, 40, 50]))
    assert [normalized_freq(p, b) for b in (1, 2, 3)] == [0.2, 0.8, 1.0]


def test_normalized_freq_all_zero():
    p = from_dict(tiny([0, 0]))
    assert normalized_freq(p, 1) == 0.0


def test_normalized_freq_unknown_block():
    with pytest.raises(UnknownBlock):
        normalized_freq(from_dict(tiny([1])), 99)


def test_duplicate_instruction_id_rejected():
    d = tiny([1, 2])
    d["functions"][0]["blocks"][1]["instructions"][0]["id"] = 100
    with pytest.raises(ValidationError):
        from_dict(d)


def test_dangling_call_edge_rejected():
    d = tiny([1])
    d["call_edges"] = [[100, 7]]
    with pytest.raises(ValidationError):
        from_dict(d)


def test_unknown_key_rejected():
    d = tiny([1])
    d["extra"] = 1
    with pytest.raises(ValidationError):
        from_dict(d)


def test_malformed_json_is_parse_error():
    with pytest.raises(ParseError):
        loads("{not json")


def test_generate_is_deterministic():
    assert dumps(generate_program(3, 3, 2, 0.5)) == dumps(generate_program(3, 3, 2, 0.5))


def test_generate_single_function_all_deterministic():
    p = generate_program(7, 1, 1, 1.0)
    assert len(p.functions) == 1
    assert all(i.deterministic for i in p.instructions())


def test_generate_det_fraction():
    p = generate_program(42, 10, 4, 0.5)
    insts = list(p.instructions())
    frac = sum(i.deterministic for i in insts) / len(insts)
    assert 0.4 <= frac <= 0.6


def test_generated_functions_reachable_from_entry():
    p = generate_program(5, 6, 2, 0.5)
    assert reachable_from(p, p.functions[0].id) == {f.id for f in p.functions}


@given(
    seed=st.integers(0, 2**31 - 1),
    n=st.integers(1, 5),
    blocks=st.integers(1, 3),
    det=st.floats(0, 1),
)
def test_round_trip(seed, n, blocks, det):
    p = generate_program(seed, n, blocks, det)
    q = loads(dumps(p))
    assert q == p
    assert q.canonical_hash() == p.canonical_hash()
    assert to_dict(q) == json.loads(dumps(p))


@given(seed=st.integers(0, 10_000))
def test_instruction_ids_unique_and_indexed(seed):
    p = generate_program(seed, 3, 2, 0.5)
    ids = [i.id for i in p.instructions()]
    assert len(ids) == len(set(ids))
    for iid in ids:
        assert p.block_of_instruction(iid).id in {b.id for b in p.blocks()}
    assert isinstance(p, ProgramModel)


def test_mileage_function_names(mileage):
    assert [f.name for f in mileage.functions] == ["onWheelRotationCompleted", "incrementMileage"]


def test_generate_byte_identical():
    assert dumps(generate_program(7, 5, 3, 0.6)).encode() == dumps(generate_program(7, 5, 3, 0.6)).encode()
