"""Run one or more experiment presets and write their reports.

    python3 scripts/run_presets.py table1 table2 --feature-sets base+agg --out results
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from fraudseq.harness import PRESETS, preset, report, run_experiment


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("presets", nargs="+", choices=sorted(PRESETS))
    ap.add_argument("--feature-sets", default="base,base+agg")
    ap.add_argument("--runs", type=int, default=5)
    ap.add_argument("--out", default="results")
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    for name in args.presets:
        spec = preset(name, feature_sets=tuple(args.feature_sets.split(",")), n_runs=args.runs)
        rows = run_experiment(spec, out / "cache", log=lambda m: print(f"{time.time() - t0:7.1f}s {m}", flush=True))
        text = report(rows)
        (out / f"{name}.txt").write_text(text)
        (out / f"{name}.csv").write_text(report(rows, "csv"))
        print(f"== {name}\n{text}", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
