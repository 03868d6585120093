"""Adaptive against continuous sampling on a bundled scenario.

    python3 scripts/compare_modes.py [--config data/corridor/corridor.conf] [--seeds 1]
"""

import argparse
import statistics

from chokepoint.cli import sim_config
from chokepoint.config import load_config
from chokepoint.simulator import compare_modes


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="data/corridor/corridor.conf")
    ap.add_argument("--seeds", type=int, default=1, help="repeat with seeds config.seed .. + n - 1")
    args = ap.parse_args()

    base = load_config(args.config)
    ratios, delays = [], []
    for k in range(args.seeds):
        cfg = load_config(args.config, {"seed": base.seed + k})
        comp = compare_modes(sim_config(cfg))
        if k == 0:
            for key, value in comp.rows():
                print(f"{key}: {value}")
        ratios.append(comp.sample_ratio)
        if comp.adaptive.mean_zone_delay is not None:
            delays.append(comp.adaptive.mean_zone_delay)
    if args.seeds > 1:
        print(f"sample ratio over {args.seeds} seeds: mean {statistics.fmean(ratios):.3f}, "
              f"min {min(ratios):.3f}, max {max(ratios):.3f}")
        if delays:
            print(f"adaptive zone-entry delay: mean {statistics.fmean(delays):.2f} s")


if __name__ == "__main__":
    main()
