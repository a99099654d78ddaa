#!/usr/bin/env python3
"""Compare standard / proxy-only / aligned-proxy pipelines over several seeds.

Writes one CSV row per (seed, mode) with the average sample-saving ratio
against that seed's random baseline, plus a small summary table to stdout.

Usage:
    python3 scripts/run_benchmark.py --seeds 5 --out runs/benchmark
"""

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

from asvp.backbone import SynthSpec
from asvp.metrics import avg_saving_ratio, saving
from asvp.orchestrator import RunConfig, Seeds, run, run_random_baseline


def config_for(mode: str, seed: int, args) -> RunConfig:
    return RunConfig(mode=mode, strategy=args.strategy, n_iters=args.iterations,
                     batch_k=args.batch, init_size=args.init,
                     seeds=Seeds(seed, seed, seed), synth=SynthSpec(seed=seed))


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--iterations", type=int, default=10)
    parser.add_argument("--batch", type=int, default=100)
    parser.add_argument("--init", type=int, default=100)
    parser.add_argument("--strategy", default="margin",
                        choices=["random", "margin", "confidence", "badge"])
    parser.add_argument("--out", default="runs/benchmark")
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    modes = ["standard", "svpp", "asvp"]
    results: dict[str, list[float]] = {m: [] for m in modes}
    t0 = time.time()

    rows = []
    for seed in range(args.seeds):
        _, curve = run_random_baseline(config_for("svpp", seed, args))
        for mode in modes:
            ledger = run(config_for(mode, seed, args))
            ratio = avg_saving_ratio([saving(curve, r.labeled_count, r.accuracy_final).ratio
                                      for r in ledger.records])
            results[mode].append(ratio)
            fired = sum(r.update_fired for r in ledger.records)
            rows.append({"seed": seed, "mode": mode, "avg_saving_ratio": ratio,
                         "final_accuracy": ledger.final_accuracy, "updates_fired": fired})
            print(f"seed={seed} mode={mode:8s} avg_saving_ratio={ratio:+.4f} "
                  f"final_acc={ledger.final_accuracy:.4f} updates={fired}")

    with open(out / "benchmark.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)

    print(f"\n{'mode':10s} {'mean ratio':>12s} {'std':>8s}")
    for mode in modes:
        vals = np.array(results[mode])
        print(f"{mode:10s} {vals.mean():+12.4f} {vals.std():8.4f}")
    print(f"\nwrote {out / 'benchmark.csv'} in {time.time() - t0:.0f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
