"""Trip energy as a function of s_max, plus the budget check.

    python3 scripts/energy_curve.py [--out out/energy_curve.csv] [--budget 560]
"""

import argparse
from pathlib import Path

from chokepoint.energy import (TripParams, energy_breakdown, energy_curve, n_out_stepwise, select_params,
                               write_energy_curve)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out/energy_curve.csv")
    ap.add_argument("--budget", type=float, default=560.0)
    args = ap.parse_args()

    p = TripParams()
    for k, v in energy_breakdown(p).items():
        print(f"{k}: {v:g}")
    print(f"n_out by stepping the sampling law: {n_out_stepwise(p)}")
    grid = [float(s) for s in range(10, 301, 10)]
    rows = energy_curve(p, grid)
    e = dict(rows)
    print(f"drop 10 s -> 60 s: {e[10] - e[60]:.1f} J, 60 s -> 120 s: {e[60] - e[120]:.1f} J, "
          f"120 s -> 300 s: {e[120] - e[300]:.1f} J")
    s_min, s_max = select_params(args.budget, p, [p.s_min], grid)
    print(f"smallest s_max within {args.budget:g} J: {s_max:g} s")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_energy_curve(rows, out)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
