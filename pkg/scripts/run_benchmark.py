#!/usr/bin/env python3
"""Time one outer sampler iteration across location counts and fit the trend.

Reports seconds per iteration at each size, the least-squares log-log
slope, and the pairwise slopes between consecutive sizes (the growth rate
approaches its asymptote from below as fixed per-iteration overhead stops
mattering).

Example:
    python scripts/run_benchmark.py --s-values 10,20,40,80,160 --repeats 5
"""

from __future__ import annotations

import argparse
from pathlib import Path

from flowbreaks.simharness import SimScenario, bench_scaling


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--s-values", default="10,20,40,80")
    parser.add_argument("--iterations", type=int, default=25, help="timed iterations per size")
    parser.add_argument("--warmup", type=int, default=5)
    parser.add_argument("--repeats", type=int, default=3, help="take the median of this many runs")
    parser.add_argument("--case", choices=("I", "II"), default="I")
    parser.add_argument("--seed", type=int, default=0, help="scenario seed for the timing datasets")
    parser.add_argument("--output-dir", default="bench_out")
    return parser.parse_args()


def main() -> int:
    args = parse_args()
    s_values = [int(tok) for tok in args.s_values.split(",") if tok.strip()]
    report = bench_scaling(
        s_values,
        case=args.case,
        iterations=args.iterations,
        warmup=args.warmup,
        repeats=args.repeats,
        scenario=SimScenario(seed=args.seed),
    )
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.csv").write_text(report.to_text())
    print(report.to_text(), end="")
    print(f"wrote bench.csv to {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
