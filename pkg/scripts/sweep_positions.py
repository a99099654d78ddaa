#!/usr/bin/env python3
"""Sweep the feature-update position and compare against never updating.

For each seed, runs the proxy-only pipeline plus one aligned run per forced
update position, all scored against the same random baseline curve.

Usage:
    python3 scripts/sweep_positions.py --seeds 3 --positions 200,400,600,800
"""

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from asvp.alignment import AlignmentConfig
from asvp.backbone import SynthSpec
from asvp.metrics import avg_saving_ratio, saving
from asvp.orchestrator import RunConfig, Seeds, run, run_random_baseline


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=3)
    parser.add_argument("--positions", default="200,400,600,800,1000")
    parser.add_argument("--iterations", type=int, default=10)
    parser.add_argument("--batch", type=int, default=100)
    parser.add_argument("--init", type=int, default=100)
    parser.add_argument("--out", default="runs/position-sweep")
    args = parser.parse_args()

    positions = [int(v) for v in args.positions.split(",")]
    grid = [args.init + t * args.batch for t in range(1, args.iterations + 1)]
    bad = [p for p in positions if p not in grid]
    if bad:
        print(f"position {bad[0]} is not on the labeled-count grid {grid}", file=sys.stderr)
        return 2

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    per_position: dict[str, list[float]] = {str(p): [] for p in positions}
    per_position["never"] = []
    for seed in range(args.seeds):
        base = RunConfig(mode="svpp", strategy="margin", n_iters=args.iterations,
                         batch_k=args.batch, init_size=args.init,
                         seeds=Seeds(seed, seed, seed), synth=SynthSpec(seed=seed))
        _, curve = run_random_baseline(base)

        def ratio_of(ledger):
            return avg_saving_ratio([saving(curve, r.labeled_count, r.accuracy_final).ratio
                                     for r in ledger.records])

        never = ratio_of(run(base))
        per_position["never"].append(never)
        rows.append({"seed": seed, "position": "never", "avg_saving_ratio": never})
        print(f"seed={seed} never-update ratio={never:+.4f}")
        for pos in positions:
            cfg = replace(base, mode="asvp",
                          alignment=AlignmentConfig(forced_update_at=pos))
            r = ratio_of(run(cfg))
            per_position[str(pos)].append(r)
            rows.append({"seed": seed, "position": pos, "avg_saving_ratio": r})
            print(f"seed={seed} update@{pos} ratio={r:+.4f}")

    with open(out / "positions.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)

    print(f"\n{'position':>10s} {'mean ratio':>12s}")
    for key, vals in per_position.items():
        print(f"{key:>10s} {np.mean(vals):+12.4f}")
    print(f"\nwrote {out / 'positions.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
