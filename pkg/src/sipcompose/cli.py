"""Command-line frontend.

Exit codes: 0 success, 1 domain error (infeasible, false alarm, ...),
2 usage or input error. Errors are printed to stderr as one line:
``ERROR <code>: <ErrorName>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from .composer import CompositionConfig, compose, load_config
from .errors import CompositionError, InputError, ParseError
from .finalize import failing_checks, finalization_order, finalize_and_verify, tamper_check
from .graph import build_graph, export_dot, find_cycles, summary
from .ilp import build_model, export_lp
from .manifest import dump_manifests, load_manifests
from .metrics import compare, corpus, write_csv
from .passes import propose_all
from .program import generate_program, load_program, save_program


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"ERROR 2: UsageError: {message}", file=sys.stderr)
        raise SystemExit(2)


def example_path(name: str) -> Path:
    """Path of a bundled example file (``mileage.json``, ``mileage_config.json``)."""
    return Path(str(resources.files("sipcompose") / "data" / name))


def _config(path: Optional[str]) -> CompositionConfig:
    return load_config(path) if path else CompositionConfig()


def cmd_gen(args) -> int:
    if args.example:
        program = load_program(example_path(f"{args.example}.json"))
    else:
        if args.functions < 1 or args.blocks < 1 or not 0 <= args.det_ratio <= 1:
            raise InputError("need --functions >= 1, --blocks >= 1 and --det-ratio in [0, 1]")
        program = generate_program(args.seed, args.functions, args.blocks, args.det_ratio)
    save_program(program, args.output)
    n_inst = sum(1 for _ in program.instructions())
    print(f"wrote {args.output}: {len(program.functions)} functions, {n_inst} instructions")
    return 0


def cmd_compose(args) -> int:
    program = load_program(args.program)
    config = _config(args.config)
    result = compose(program, config)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    save_program(result.protected_program, out / "protected.json")
    dump_manifests(result.proposed, out / "manifests.json")
    (out / "report.json").write_text(json.dumps(result.report(), indent=1) + "\n")
    if args.lp and result.selection is not None:
        (out / "problem.lp").write_text(export_lp(result.selection.model))
    if args.dot:
        (out / "graph.dot").write_text(export_dot(build_graph(result.proposed, program)))
    rep = result.report()
    print(f"proposed {rep['proposed']} manifests, selected {rep['selected_count']}, dropped {rep['dropped']}")
    print(f"cycles {[c['manifest_ids'] for c in rep['cycles']]}, solver iterations {rep['iterations']}")
    print(f"estimated cost {result.metrics.estimated_cost:g}; artifacts in {out}")
    return 0


def cmd_graph(args) -> int:
    program = load_program(args.program)
    manifests = propose_all(program, _config(args.config).pass_config())
    graph = build_graph(manifests, program)
    if args.dot:
        Path(args.dot).write_text(export_dot(graph))
    info = summary(graph)
    if args.summary:
        Path(args.summary).write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")
    cycles = find_cycles(graph)
    print(
        f"{info['nodes']} nodes ({info['manifest_nodes']} manifests), "
        f"{info['dependency_arcs']} dependency arcs, {info['present_arcs']} present arcs"
    )
    for c in cycles:
        print(f"cycle: manifests {list(c.manifest_ids)} (support {list(c.support_ids)})")
    return 0


def cmd_export_lp(args) -> int:
    program = load_program(args.program)
    config = _config(args.config)
    manifests = propose_all(program, config.pass_config())
    graph = build_graph(manifests, program)
    model = build_model(graph, manifests, find_cycles(graph), config.requirements)
    Path(args.output).write_text(export_lp(model))
    print(f"wrote {args.output}: {len(model.vars)} variables, {len(model.constraints)} constraints")
    return 0


def _sibling_manifests(protected_path: str, explicit: Optional[str]) -> Path:
    path = Path(explicit) if explicit else Path(protected_path).with_name("manifests.json")
    if not path.exists():
        raise ParseError(f"manifest file {path} not found (use --manifests)")
    return path


def cmd_simulate(args) -> int:
    protected = load_program(args.protected)
    proposed = load_manifests(_sibling_manifests(args.protected, args.manifests))
    present = {g.manifest_id for g in protected.guards()}
    selected = [m for m in proposed if m.id in present]
    order = finalization_order(build_graph(selected, protected, universe=proposed))
    try:
        state = finalize_and_verify(protected, order)
        stale = failing_checks(protected)
    except CompositionError as exc:
        print(f"FAIL: {type(exc).__name__}: {exc}")
        return 1
    if stale:
        print(f"FAIL: stored values disagree for manifests {sorted(stale)}")
        return 1
    print(f"PASS: {len(state.slots)} placeholders finalized in order {order}")
    return 0


def cmd_tamper(args) -> int:
    protected = load_program(args.protected)
    print(json.dumps(sorted(tamper_check(protected, args.inst))))
    return 0


def cmd_compare(args) -> int:
    config = _config(args.config)
    rows = [compare(p, config) for p in corpus(args.corpus_seed, args.count)]
    write_csv(rows, args.output)
    if rows:
        dec = [r.decrease_pct for r in rows]
        print(
            f"{len(rows)} programs; decrease% median {statistics.median(dec):.2f}, "
            f"mean {statistics.mean(dec):.2f}, min {min(dec):.2f}; wrote {args.output}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sipcompose", description="Compose software integrity protections without conflicts.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a seeded synthetic program (or write a bundled example)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--functions", type=int, default=4)
    g.add_argument("--blocks", type=int, default=2)
    g.add_argument("--det-ratio", type=float, default=0.5)
    g.add_argument("--example", choices=["mileage"], help="write a bundled example instead")
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen)

    c = sub.add_parser("compose", help="select, apply and finalize protections")
    c.add_argument("program")
    c.add_argument("--config")
    c.add_argument("-o", "--output", default="out")
    c.add_argument("--lp", action="store_true", help="also write the final problem.lp")
    c.add_argument("--dot", action="store_true", help="also write graph.dot over all proposals")
    c.set_defaults(func=cmd_compose)

    gr = sub.add_parser("graph", help="build and export the defense graph")
    gr.add_argument("program")
    gr.add_argument("--config")
    gr.add_argument("--dot")
    gr.add_argument("--summary", help="write node/arc/SCC counts as JSON")
    gr.set_defaults(func=cmd_graph)

    e = sub.add_parser("export-lp", help="write the initial selection model in CPLEX LP format")
    e.add_argument("program")
    e.add_argument("--config")
    e.add_argument("-o", "--output", required=True)
    e.set_defaults(func=cmd_export_lp)

    s = sub.add_parser("simulate", help="finalize and verify a protected program")
    s.add_argument("protected")
    s.add_argument("--manifests", help="proposed manifests (default: manifests.json beside the program)")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("tamper", help="list manifests whose checks fire after tampering one instruction")
    t.add_argument("protected")
    t.add_argument("--inst", type=int, required=True)
    t.set_defaults(func=cmd_tamper)

    cm = sub.add_parser("compare", help="ILP selection versus the heuristic baseline over a corpus")
    cm.add_argument("--corpus-seed", type=int, required=True)
    cm.add_argument("--count", type=int, required=True)
    cm.add_argument("--config")
    cm.add_argument("-o", "--output", required=True)
    cm.set_defaults(func=cmd_compare)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CompositionError as exc:
        msg = " ".join(str(exc).split())
        print(f"ERROR {exc.exit_code}: {type(exc).__name__}: {msg}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"ERROR 2: IOError: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
