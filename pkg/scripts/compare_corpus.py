#!/usr/bin/env python3
"""Compare ILP composition against the heuristic baseline on a seeded corpus.

Usage: python3 scripts/compare_corpus.py [--corpus-seed 1] [--count 30] [-o comparison.csv]
"""

import argparse
import statistics
import time

from sipcompose.metrics import compare, corpus, write_csv


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--corpus-seed", type=int, default=1)
    ap.add_argument("--count", type=int, default=30)
    ap.add_argument("-o", "--output", default="comparison.csv")
    args = ap.parse_args()

    start = time.monotonic()
    rows = []
    for p in corpus(args.corpus_seed, args.count):
        r = compare(p)
        rows.append(r)
        print(f"{r.program:<28} base {r.cost_base:9.3f} ({r.manifests_base:2d})  "
              f"opt {r.cost_opt:9.3f} ({r.manifests_opt:2d})  decrease {r.decrease_pct:6.2f}%")
    write_csv(rows, args.output)
    dec = [r.decrease_pct for r in rows]
    print(f"\n{len(rows)} programs in {time.monotonic() - start:.1f}s")
    print(f"decrease%: median {statistics.median(dec):.2f}, mean {statistics.mean(dec):.2f}, "
          f"min {min(dec):.2f}, max {max(dec):.2f}")
    print(f"opt <= base on every instance: {all(r.cost_opt <= r.cost_base for r in rows)}")
    print(f"wrote {args.output}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
