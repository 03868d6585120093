"""Regenerate the bundled fixtures under data/.

    python scripts/make_fixtures.py [--data-dir data]

Everything is seeded, so rerunning reproduces the committed files.
"""

import argparse
from pathlib import Path

from chokepoint import synth
from chokepoint.config import write_vehicles
from chokepoint.road_network import save_network

CORRIDOR_CONF = """\
# 10 km corridor with a standing hotspot on segment 0
network = network.txt
vehicles = vehicles.csv
preset_hotspots = 0
seed = 1
start_s = 28800
horizon_s = 3600
"""

TRIP_CONF = """\
# one trip away from a hotspot: 2 km at 2 m/s, then 8 km at 12.5 m/s, no noise
network = network.txt
vehicles = vehicles.csv
preset_hotspots = 0
speed_noise_frac = 0
gps_noise_m = 0
start_s = 28800
horizon_s = 3600
"""

INCIDENT_CONF = """\
# accident on segment 17 of a 6x6 grid at 07:30, Expedited alerts
network = network.txt
alert_mode = expedited
incident_segment = 17
incident_t0_s = 1800
rate_in = 6
rate_out = 1
start_s = 25200
horizon_s = 2400
seed = 3
"""

SFO_CONF = """\
# synthetic cab fleet, 15:00-19:00, congestion clusters in 17:00-18:30
network = network.txt
trace = cabs
"""


def write_cab_files(records, out_dir: Path) -> int:
    """One ``lat lon occupancy unix_time`` file per cab, newest fix first."""
    out_dir.mkdir(parents=True, exist_ok=True)
    for old in out_dir.glob("new_*.txt"):
        old.unlink()
    by_cab = {}
    for r in records:
        by_cab.setdefault(r.vehicle, []).append(r)
    for cab, recs in sorted(by_cab.items()):
        recs.sort(key=lambda r: r.t, reverse=True)
        lines = [f"{r.point.lat:.6f} {r.point.lon:.6f} {r.occupancy} {r.t:.0f}" for r in recs]
        (out_dir / f"new_{cab}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(by_cab)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data-dir", default=str(Path(__file__).resolve().parent.parent / "data"))
    args = ap.parse_args()
    data = Path(args.data_dir)

    corridor = data / "corridor"
    corridor.mkdir(parents=True, exist_ok=True)
    net = synth.corridor_network()
    save_network(net, corridor / "network.txt")
    write_vehicles(synth.corridor_vehicles(net), corridor / "vehicles.csv")
    (corridor / "corridor.conf").write_text(CORRIDOR_CONF, encoding="utf-8")

    trip = data / "paper_trip"
    trip.mkdir(parents=True, exist_ok=True)
    net, veh = synth.paper_trip()
    save_network(net, trip / "network.txt")
    write_vehicles([veh], trip / "vehicles.csv")
    (trip / "trip.conf").write_text(TRIP_CONF, encoding="utf-8")

    grid = data / "grid"
    grid.mkdir(parents=True, exist_ok=True)
    save_network(synth.grid_network(6, 6, 200.0), grid / "network.txt")
    (grid / "incident.conf").write_text(INCIDENT_CONF, encoding="utf-8")

    sfo = data / "sfo"
    sfo.mkdir(parents=True, exist_ok=True)
    fx = synth.cab_traces()
    save_network(fx.net, sfo / "network.txt")
    n = write_cab_files(fx.records, sfo / "cabs")
    (sfo / "sfo.conf").write_text(SFO_CONF, encoding="utf-8")
    (sfo / "truth.txt").write_text(
        "# segments generated as congestion clusters and as slow roads\n"
        f"hot = {' '.join(str(s) for s in sorted(fx.hot_segments))}\n"
        f"slow = {' '.join(str(s) for s in sorted(fx.slow_segments))}\n", encoding="utf-8")
    print(f"wrote fixtures to {data} ({n} cabs, {len(fx.records)} fixes)")


if __name__ == "__main__":
    main()
