#!/usr/bin/env python3
"""Walk through the bundled mileage example: proposals, the conflict, the selection.

Usage: python3 scripts/mileage_demo.py
"""

from sipcompose.cli import example_path
from sipcompose.composer import compose, load_config
from sipcompose.errors import FalseAlarm
from sipcompose.finalize import finalize_and_verify, tamper_check
from sipcompose.graph import build_graph, find_cycles
from sipcompose.passes import apply_all, propose_all
from sipcompose.program import load_program


def main() -> int:
    program = load_program(example_path("mileage.json"))
    config = load_config(example_path("mileage_config.json"))
    manifests = propose_all(program, config.pass_config())
    print(f"{len(manifests)} proposed manifests:")
    for m in manifests:
        print(f"  m{m.id:<3} {m.kind:<14} block {m.placement_block:<3} "
              f"covers {len(m.protected_instruction_ids)} instructions, cost {m.cost:g}")

    cycles = find_cycles(build_graph(manifests, program))
    for c in cycles:
        print(f"\nconflict: manifests {list(c.manifest_ids)} (support {list(c.support_ids)})")

    # accepting everything: no finalization order can satisfy both hashes
    protected = apply_all(manifests, program)
    pair = list(cycles[0].manifest_ids)
    rest = [m.id for m in manifests if m.id not in pair]
    for order in (pair, pair[::-1]):
        try:
            finalize_and_verify(protected, rest + order)
        except FalseAlarm as exc:
            print(f"  finalizing {order[0]} before {order[1]}: false alarm in {exc.manifest_ids}")

    result = compose(program, config)
    rep = result.report()
    print(f"\nselected {rep['selected']} (dropped {rep['dropped']}) after {rep['iterations']} solves")
    print(f"finalization order {rep['finalization_order']}")
    for k, v in rep["metrics"].items():
        print(f"  {k}: {v}")
    sc = next(m for m in result.selected_manifests if m.kind == "SC")
    victim = min(sc.protected_instruction_ids)
    print(f"\ntampering instruction {victim} trips manifests {sorted(tamper_check(result, victim))}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
