"""Re-run the table2 preset (Base+Agg) across generator separability values.

Writes one CSV row per (separability, model, level) plus a summary of which
model holds the best mean per level.  Runs are cached, so an interrupted
sweep resumes where it stopped.

    python3 scripts/separability_sweep.py --values 0.1,0.3,0.5,0.7 --out results/sweep
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
import time
from pathlib import Path

from fraudseq.harness import best_models, preset, report, run_experiment
from fraudseq.metrics import LEVELS


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--values", default="0.1,0.3,0.5,0.7")
    ap.add_argument("--knob", default="separability", help="GeneratorConfig field to sweep")
    ap.add_argument("--preset", default="table2")
    ap.add_argument("--runs", type=int, default=5)
    ap.add_argument("--out", default="results/sweep")
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    rows_out, summary = [], []
    for raw in args.values.split(","):
        value = float(raw)
        spec = preset(args.preset, feature_sets=("base+agg",), n_runs=args.runs)
        spec.generator = dataclasses.replace(spec.generator, **{args.knob: value})
        rows = run_experiment(spec, out / "cache",
                              log=lambda m: print(f"{time.time() - t0:7.1f}s {args.knob}={value} {m}", flush=True))
        print(report(rows), flush=True)
        best = best_models(rows)
        for r in rows:
            rows_out.append({args.knob: value, **dataclasses.asdict(r), "best": (r.model, r.feature_set, r.level) in best})
        for lvl in LEVELS:
            winners = sorted(m for m, _, l in best if l == lvl)
            summary.append((value, lvl, "/".join(winners)))
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows_out[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows_out)
    with open(out / "summary.txt", "w") as fh:
        for value, lvl, winner in summary:
            fh.write(f"{args.knob}={value}  {lvl:<10}  best: {winner}\n")
    sys.stdout.write((out / "summary.txt").read_text())
    return 0


if __name__ == "__main__":
    sys.exit(main())
