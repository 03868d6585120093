"""Flash-congestion detection time across build-up rates: closed form against simulation.

    python3 scripts/flash_sweep.py [--seeds 20] [--out out/flash_sweep.csv]
"""

import argparse
import csv
from pathlib import Path

from chokepoint.flash import AlertMode, IncidentParams, batch_runs, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--rates", default="1,2,5,10,15,20", help="comma-separated lambda_a - lambda_d per minute")
    ap.add_argument("--out", default="out/flash_sweep.csv")
    args = ap.parse_args()

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rate_diff", "closed_form_min", "regular_min", "expedited_min", "speedup", "timeouts"])
        print(f"{'rate':>6} {'closed':>8} {'regular':>8} {'expedited':>9} {'speedup':>7}")
        for rate in (float(x) for x in args.rates.split(",")):
            s = summarize(batch_runs(IncidentParams(rate), list(AlertMode), range(args.seeds)))
            reg, exp = s.mean_min[AlertMode.REGULAR], s.mean_min[AlertMode.EXPEDITED]
            timeouts = sum(s.timeouts.values())
            w.writerow([f"{rate:g}", f"{s.closed_form_min:.4f}", "" if reg is None else f"{reg:.4f}",
                        "" if exp is None else f"{exp:.4f}", "" if s.speedup is None else f"{s.speedup:.3f}", timeouts])
            fmt = lambda x: "-" if x is None else f"{x:.2f}"
            print(f"{rate:6g} {s.closed_form_min:8.2f} {fmt(reg):>8} {fmt(exp):>9} {fmt(s.speedup):>7}")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
