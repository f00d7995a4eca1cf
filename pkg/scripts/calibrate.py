"""Print the generator's delay statistics next to their target ranges.

    python3 scripts/calibrate.py --n-cards 40000 --fraud-card-rate 0.2 --fraud-rate 0.04
"""

from __future__ import annotations

import argparse
import sys
import time

from fraudseq.datagen import GeneratorConfig, generate
from fraudseq.metrics import future_availability_curves, verification_delay_cdf

TARGETS = {"delay CDF(1h)": (0.005, 0.02), "delay CDF(1d)": (0.25, 0.35),
           "curve_1(1d)": (0.85, 0.95), "curve_4(1d)": (0.55, 0.75)}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-cards", type=int, default=40000)
    ap.add_argument("--fraud-card-rate", type=float, default=0.2)
    ap.add_argument("--fraud-rate", type=float, default=0.04)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    t0 = time.time()
    cfg = GeneratorConfig(n_cards=args.n_cards, fraud_card_rate=args.fraud_card_rate,
                          fraud_txn_rate_target=args.fraud_rate, seed=args.seed)
    stream, episodes = generate(cfg)
    cdf = verification_delay_cdf(episodes)
    curves = future_availability_curves(stream, episodes)
    got = {"delay CDF(1h)": cdf.at(3600), "delay CDF(1d)": cdf.at(86400),
           "curve_1(1d)": curves[0].at(86400), "curve_4(1d)": curves[3].at(86400)}
    print(f"{len(stream)} transactions, {len(episodes)} episodes, "
          f"fraud rate {stream.label.mean():.5f}, {time.time() - t0:.1f}s")
    for k in (2, 3):
        print(f"curve_{k}(1d) = {curves[k - 1].at(86400):.4f}")
    ok = True
    for name, (lo, hi) in TARGETS.items():
        inside = lo <= got[name] <= hi
        ok &= inside
        print(f"{name:<14} {got[name]:.4f}  target [{lo}, {hi}]  {'ok' if inside else 'OUT'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
