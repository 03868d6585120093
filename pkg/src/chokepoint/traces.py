"""GPS trace ingestion and offline analysis tables.

Two input layouts are accepted: a directory (or single file) of per-vehicle
``lat lon occupancy unix_time`` lines, named by vehicle id, and a combined CSV
with a ``vehicle_id`` column. Consecutive fixes of one vehicle become a speed
sample on the segment of the later fix.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from scipy import stats

from .hotspot_engine import N_BINS, BIN_SECONDS, HotspotEngine, Level, BinStats, SpeedRejected
from .road_network import GeoPoint, RoadNetwork, Snap, SnapRejected, Unreachable

DEFAULT_GAP_MAX_S = 300.0

# outcome of one fix in the speed tracker
INGESTED = "ingested"
FIRST_FIX = "first_fix"
SNAP_REJECTED = "snap_rejected"
DUPLICATE_TIME = "duplicate_time"
OUT_OF_ORDER = "out_of_order"
GAP = "gap"
UNREACHABLE = "unreachable"
SPEED_CAP = "speed_cap"
OUTCOMES = (INGESTED, FIRST_FIX, SNAP_REJECTED, DUPLICATE_TIME, OUT_OF_ORDER, GAP, UNREACHABLE, SPEED_CAP)


@dataclass(frozen=True)
class TraceRecord:
    vehicle: str
    point: GeoPoint
    t: float
    occupancy: int | None = None


class TraceFormatError(ValueError):
    pass


@dataclass
class _Anchor:
    t: float
    snap: Snap


@dataclass
class SpeedTracker:
    """Turns a stream of per-vehicle fixes into engine speed samples.

    Every fix lands in exactly one outcome bucket, so ``sum(counts)`` equals
    the number of fixes observed.
    """

    net: RoadNetwork
    engine: HotspotEngine
    gap_max_s: float = DEFAULT_GAP_MAX_S
    max_snap_m: float = 50.0
    counts: Counter = field(default_factory=Counter)
    _last: dict[object, _Anchor] = field(default_factory=dict)

    def observe(self, vehicle, point: GeoPoint, t: float) -> str:
        outcome = self._observe(vehicle, point, t)
        self.counts[outcome] += 1
        return outcome

    def _observe(self, vehicle, point: GeoPoint, t: float) -> str:
        prev = self._last.get(vehicle)
        if prev is not None and t == prev.t:
            return DUPLICATE_TIME
        if prev is not None and t < prev.t:
            return OUT_OF_ORDER
        try:
            snap = self.net.snap(point, self.max_snap_m)
        except SnapRejected:
            return SNAP_REJECTED
        self._last[vehicle] = _Anchor(t, snap)
        if prev is None:
            return FIRST_FIX
        dt = t - prev.t
        if dt > self.gap_max_s:
            return GAP
        try:
            dist = self.net.road_distance(prev.snap.position, snap.position)
        except Unreachable:
            return UNREACHABLE
        try:
            self.engine.ingest(snap.segment_id, dist / dt, t)
        except SpeedRejected:
            return SPEED_CAP
        return INGESTED


# -- parsing ---------------------------------------------------------------


def _split(line: str) -> list[str]:
    return line.replace(",", " ").split()


def _parse_fix_line(vehicle: str, line: str) -> TraceRecord:
    parts = _split(line)
    if len(parts) != 4:
        raise TraceFormatError(f"expected 4 fields, got {len(parts)}")
    lat, lon, occ, ts = parts
    try:
        return TraceRecord(vehicle, GeoPoint(float(lat), float(lon)), float(ts), int(occ))
    except ValueError as exc:
        raise TraceFormatError(str(exc)) from None


def _vehicle_from_name(path: Path) -> str:
    stem = path.stem
    return stem[4:] if stem.startswith("new_") else stem


@dataclass
class ParsedTrace:
    records: list[TraceRecord]
    lines: int
    parse_errors: int
    errors: list[tuple[str, int, str]] = field(default_factory=list)


def _read_per_vehicle(path: Path, out: ParsedTrace) -> None:
    vehicle = _vehicle_from_name(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            out.lines += 1
            try:
                out.records.append(_parse_fix_line(vehicle, line))
            except (TraceFormatError, ValueError) as exc:
                out.parse_errors += 1
                out.errors.append((str(path), lineno, str(exc)))


def _read_combined(path: Path, out: ParsedTrace) -> None:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"vehicle_id", "lat", "lon", "unix_time"}
        if not need <= set(reader.fieldnames or ()):
            raise TraceFormatError(f"{path}: combined CSV needs columns {sorted(need)}")
        for row in reader:
            out.lines += 1
            try:
                occ = row.get("occupancy")
                out.records.append(TraceRecord(
                    row["vehicle_id"], GeoPoint(float(row["lat"]), float(row["lon"])),
                    float(row["unix_time"]), int(occ) if occ not in (None, "") else None))
            except (TypeError, ValueError) as exc:
                out.parse_errors += 1
                out.errors.append((str(path), reader.line_num, str(exc)))


def _is_combined(path: Path) -> bool:
    if path.suffix.lower() != ".csv":
        return False
    with open(path, encoding="utf-8") as fh:
        return "vehicle_id" in fh.readline()


def read_trace(path: str | Path) -> ParsedTrace:
    """Parse a trace directory, per-vehicle file, or combined CSV."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    out = ParsedTrace([], 0, 0)
    files = sorted(p for p in path.iterdir() if p.is_file() and p.suffix in (".txt", ".csv")) if path.is_dir() else [path]
    for f in files:
        if _is_combined(f):
            _read_combined(f, out)
        else:
            _read_per_vehicle(f, out)
    return out


def write_combined_csv(records: Iterable[TraceRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vehicle_id", "lat", "lon", "occupancy", "unix_time"])
        for r in records:
            w.writerow([r.vehicle, f"{r.point.lat:.6f}", f"{r.point.lon:.6f}",
                        "" if r.occupancy is None else r.occupancy, f"{r.t:.0f}"])


# -- replay ----------------------------------------------------------------


@dataclass
class IngestReport:
    lines: int
    parse_errors: int
    vehicles: int
    outcomes: Counter

    @property
    def samples(self) -> int:
        return self.outcomes[INGESTED]

    @property
    def accounted(self) -> int:
        return self.parse_errors + sum(self.outcomes.values())

    def reconciles(self) -> bool:
        return self.accounted == self.lines

    def rows(self) -> list[tuple[str, int]]:
        rows = [("lines", self.lines), ("parse_errors", self.parse_errors), ("vehicles", self.vehicles)]
        rows += [(k, self.outcomes[k]) for k in OUTCOMES]
        return rows


def replay_order(records: list[TraceRecord]) -> Iterator[TraceRecord]:
    """Timestamp order across vehicles; ties by vehicle id, then input order."""
    idx = sorted(range(len(records)), key=lambda i: (records[i].t, records[i].vehicle, i))
    for i in idx:
        yield records[i]


def replay(records: list[TraceRecord], net: RoadNetwork, engine: HotspotEngine,
           gap_max_s: float = DEFAULT_GAP_MAX_S, max_snap_m: float = 50.0,
           utc_offset_h: float = 0.0) -> Counter:
    """Feed records to the engine in replay order; ``utc_offset_h`` shifts unix time to local time."""
    tracker = SpeedTracker(net, engine, gap_max_s, max_snap_m)
    shift = utc_offset_h * 3600.0
    last_t = None
    for r in replay_order(records):
        t = r.t + shift
        if last_t is not None and t != last_t:
            engine.flush(last_t)
        tracker.observe(r.vehicle, r.point, t)
        last_t = t
    if last_t is not None:
        engine.flush(last_t)
    return tracker.counts


def ingest_trace(path: str | Path, net: RoadNetwork, engine: HotspotEngine,
                 gap_max_s: float = DEFAULT_GAP_MAX_S, max_snap_m: float = 50.0,
                 utc_offset_h: float = 0.0) -> IngestReport:
    parsed = read_trace(path)
    counts = replay(parsed.records, net, engine, gap_max_s, max_snap_m, utc_offset_h)
    vehicles = len({r.vehicle for r in parsed.records})
    return IngestReport(parsed.lines, parsed.parse_errors, vehicles, counts)


# -- analysis tables -------------------------------------------------------


def pooled_stats(engine: HotspotEngine, sid) -> BinStats:
    """Merge the bins of a segment that hold at least ``min_samples`` samples."""
    st = engine.segments[sid]
    total = BinStats()
    for b in st.bins:
        if b.count >= engine.config.min_samples:
            total = total.merged(b)
    return total


def is_hotspot_segment(engine: HotspotEngine, sid) -> bool:
    return any(engine.classify(sid, b) == (Level.HIGH, False) for b in range(N_BINS))


@dataclass(frozen=True)
class NDRow:
    segment: object
    nd: float
    hotspot: bool
    count: int


@dataclass
class NDReport:
    rows: list[NDRow]

    def values(self, hotspot: bool) -> np.ndarray:
        return np.array(sorted(r.nd for r in self.rows if r.hotspot is hotspot))

    def cdf(self, hotspot: bool) -> list[tuple[float, float]]:
        v = self.values(hotspot)
        return [(float(x), (i + 1) / len(v)) for i, x in enumerate(v)]

    def dominance_ks(self) -> float:
        """One-sided KS statistic, max over x of F_other(x) - F_hotspot(x)."""
        hot, other = self.values(True), self.values(False)
        if len(hot) == 0 or len(other) == 0:
            return 0.0
        return float(stats.ks_2samp(other, hot, alternative="greater").statistic)


def nd_report(engine: HotspotEngine) -> NDReport:
    rows = []
    for sid in sorted(engine.segments):
        pooled = pooled_stats(engine, sid)
        nd = pooled.nd
        if nd is None or pooled.count < 2:
            continue
        rows.append(NDRow(sid, nd, is_hotspot_segment(engine, sid), pooled.count))
    return NDReport(rows)


def hotspots_over_time(engine: HotspotEngine) -> list[tuple[int, int]]:
    counts = [0] * N_BINS
    for sid in engine.segments:
        for b in range(N_BINS):
            if engine.classify(sid, b) == (Level.HIGH, False):
                counts[b] += 1
    return list(enumerate(counts))


def heatmap_rows(engine: HotspotEngine) -> list[tuple[object, int, float, str]]:
    rows = []
    for sid in sorted(engine.segments):
        st = engine.segments[sid]
        for b, bs in enumerate(st.bins):
            if bs.count == 0:
                continue
            lvl, insufficient = engine.classify(sid, b)
            rows.append((sid, b, bs.mean, "insufficient" if insufficient else lvl.name.lower()))
    return rows


def _writer(path):
    fh = open(path, "w", newline="", encoding="utf-8")
    return fh, csv.writer(fh, lineterminator="\n")


def write_nd_cdf(report: NDReport, path: str | Path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["group", "nd", "cdf"])
        for group, flag in (("hotspot", True), ("other", False)):
            for x, p in report.cdf(flag):
                w.writerow([group, f"{x:.6f}", f"{p:.6f}"])


def write_hotspots_per_bin(rows: Iterable[tuple[int, int]], path: str | Path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["bin", "start", "hotspots"])
        for b, n in rows:
            start = b * BIN_SECONDS
            w.writerow([b, f"{start // 3600:02d}:{start % 3600 // 60:02d}", n])


def write_heatmap(rows: Iterable[tuple[object, int, float, str]], path: str | Path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["segment_id", "bin", "mean_speed", "level"])
        for sid, b, mean, lvl in rows:
            w.writerow([sid, b, f"{mean:.4f}", lvl])


def write_ingest_report(report: IngestReport, path: str | Path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["key", "value"])
        w.writerows(report.rows())
