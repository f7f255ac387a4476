#!/usr/bin/env python3
"""Sweep the controller's inlier-fraction threshold on a fault-injection run.

Replays one synthetic sequence with garbage flow inside a fault window,
once per threshold, and reports how each threshold routes and scores.
Outside the window the rows should agree; differences appear only where
a loose threshold accepts corrupt flow the strict one rejects.
"""

import argparse
import csv

from quadtrack.evaluation import run_threshold_ablation
from quadtrack.synth import SceneSpec, SegmentSpec


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--frames", type=int, default=60)
    parser.add_argument("--fault-start", type=int, default=25)
    parser.add_argument("--fault-end", type=int, default=31, help="exclusive")
    parser.add_argument(
        "--thresholds", default="0.10,0.20,0.30", help="comma-separated fractions"
    )
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None, help="optional CSV path")
    args = parser.parse_args()

    thresholds = tuple(float(v) for v in args.thresholds.split(","))
    spec = SceneSpec(
        width=320,
        height=260,
        texture="noise",
        texture_seed=args.seed,
        quad=(90.0, 70.0, 230.0, 74.0, 226.0, 190.0, 94.0, 186.0),
        segments=(
            SegmentSpec(kind="translate", frames=args.frames, vector=(1.2, 0.6)),
        ),
    )
    fault = range(args.fault_start, args.fault_end)
    rows = run_threshold_ablation(spec, fault, thresholds=thresholds)

    print(f"fault window: frames {args.fault_start}..{args.fault_end - 1}")
    print(f"{'threshold':>9} {'p@5':>7} {'p@15':>7} {'paths in window':<40}")
    for row in rows:
        window_paths = ",".join(row["paths"][t] for t in fault)
        print(
            f"{row['threshold']:>9.2f} {row['p'][5.0]:>7.3f} {row['p'][15.0]:>7.3f} "
            f"{window_paths:<40}"
        )

    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "p5", "p15", "max_err"])
            for row in rows:
                writer.writerow(
                    [
                        row["threshold"],
                        row["p"][5.0],
                        row["p"][15.0],
                        float(row["errors"].max()),
                    ]
                )
        print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
