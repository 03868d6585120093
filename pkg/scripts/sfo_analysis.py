"""Replay the bundled cab fixture and score the tagged segments against its ground truth.

    python3 scripts/sfo_analysis.py [--data data/sfo] [--out out/sfo]
"""

import argparse
from pathlib import Path

from chokepoint import traces
from chokepoint.hotspot_engine import HotspotEngine
from chokepoint.road_network import load_network


def read_truth(path: Path) -> dict[str, set[int]]:
    truth = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if "=" in line:
            key, ids = line.split("=", 1)
            truth[key.strip()] = {int(x) for x in ids.split()}
    return truth


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", default="data/sfo")
    ap.add_argument("--out", default="out/sfo")
    args = ap.parse_args()

    data, out = Path(args.data), Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    net = load_network(data / "network.txt")
    eng = HotspotEngine(net)
    rep = traces.ingest_trace(data / "cabs", net, eng)
    for key, value in rep.rows():
        print(f"{key}: {value}")
    print(f"reconciled: {rep.reconciles()}")

    nd = traces.nd_report(eng)
    print(f"ND dominance KS: {nd.dominance_ks():.3f}")
    tagged = {r.segment for r in nd.rows if r.hotspot}
    truth = read_truth(data / "truth.txt")
    hot, slow = truth.get("hot", set()), truth.get("slow", set())
    print(f"tagged {len(tagged)} segments: {len(tagged & hot)} of {len(hot)} congestion-cluster segments, "
          f"{len(tagged & slow)} of {len(slow)} slow roads, {len(tagged - hot - slow)} others")
    per_bin = traces.hotspots_over_time(eng)
    print("hotspots per bin: " + " ".join(f"{b}:{n}" for b, n in per_bin if n))

    traces.write_nd_cdf(nd, out / "nd_cdf.csv")
    traces.write_hotspots_per_bin(per_bin, out / "hotspots_per_bin.csv")
    traces.write_heatmap(traces.heatmap_rows(eng), out / "heatmap.csv")
    print(f"wrote tables under {out}")


if __name__ == "__main__":
    main()
