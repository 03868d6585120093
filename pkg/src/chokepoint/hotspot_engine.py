"""Server-side congestion hotspot engine.

Per segment the engine keeps Welford speed statistics for each of 48
half-hour time-of-day bins, the maximum speed ever observed (the reference
speed), and a three-state machine::

    UNCONGESTED -> POSSIBLE -> HOTSPOT -> UNCONGESTED
                   POSSIBLE -> UNCONGESTED   (window expiry)

The state machine of a segment is stepped once per distinct sample
timestamp, after every sample carrying that timestamp has been added, so
the outcome does not depend on the arrival order of simultaneous samples.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterable

from .road_network import GeoPoint, RoadNetwork, SegmentId, SnapRejected

N_BINS = 48
BIN_SECONDS = 1800
DAY_SECONDS = 86400
CHECKPOINT_HEADER = "#chokepoint-engine-checkpoint v1"


def time_bin(t: float) -> int:
    """Half-hour time-of-day bin of a local timestamp in seconds."""
    return int((t % DAY_SECONDS) // BIN_SECONDS)


class Level(IntEnum):
    NONE = 0
    LOW = 1
    MEDIUM = 2
    HIGH = 3


class State(str, Enum):
    UNCONGESTED = "uncongested"
    POSSIBLE = "possible_hotspot"
    HOTSPOT = "hotspot"


class SpeedRejected(ValueError):
    """Speed above the glitch cap."""


@dataclass
class EngineConfig:
    min_samples: int = 5
    k_possible: int = 3
    window_samples: int = 10
    window_s: float = 600.0
    n_confirm: int = 30
    nd_min: float = 0.5
    speed_cap_mps: float = 70.0
    corr_min: float = 0.9
    d_in_m: float = 2000.0
    # thresholds are frac * v_max / vmax_divisor
    hot_frac: float = 0.25
    med_frac: float = 0.5
    low_frac: float = 0.75
    vmax_divisor: float = 2.0
    crossing_eps_mps: float = 0.1


@dataclass(frozen=True)
class Thresholds:
    t_hot: float
    t_med: float
    t_low: float


def thresholds(v_max: float, cfg: EngineConfig = EngineConfig()) -> Thresholds:
    ref = v_max / cfg.vmax_divisor
    return Thresholds(cfg.hot_frac * ref, cfg.med_frac * ref, cfg.low_frac * ref)


def level_for(mean: float, v_max: float, cfg: EngineConfig = EngineConfig()) -> Level:
    """Congestion level of a bin mean; boundaries go to the more congested class."""
    th = thresholds(v_max, cfg)
    if mean <= th.t_hot:
        return Level.HIGH
    if mean <= th.t_med:
        return Level.MEDIUM
    if mean <= th.t_low:
        return Level.LOW
    return Level.NONE


@dataclass
class BinStats:
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    last_update: float | None = None

    def add(self, x: float, t: float | None = None) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)
        self.last_update = t

    @property
    def variance(self) -> float | None:
        return self.m2 / (self.count - 1) if self.count >= 2 else None

    @property
    def std(self) -> float | None:
        v = self.variance
        return None if v is None else math.sqrt(max(v, 0.0))

    @property
    def nd(self) -> float | None:
        """Normalized deviation: standard deviation over mean."""
        s = self.std
        if s is None or self.mean <= 0:
            return None
        return s / self.mean

    def merged(self, other: BinStats) -> BinStats:
        """Pooled statistics of two disjoint sample sets (Chan et al. update)."""
        if other.count == 0:
            return BinStats(self.count, self.mean, self.m2, self.last_update)
        if self.count == 0:
            return BinStats(other.count, other.mean, other.m2, other.last_update)
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        last = max(t for t in (self.last_update, other.last_update) if t is not None) if (
            self.last_update is not None or other.last_update is not None
        ) else None
        return BinStats(n, mean, m2, last)


@dataclass
class SegmentState:
    v_max: float = 0.0
    bins: list[BinStats] = field(default_factory=lambda: [BinStats() for _ in range(N_BINS)])
    state: State = State.UNCONGESTED
    level: Level = Level.NONE
    # last W samples as (t, speed), kept as the W largest keys seen
    recent: list[tuple[float, float]] = field(default_factory=list)
    entered_t: float | None = None
    confirm_bin: int | None = None
    fresh_bin: int | None = None
    fresh_count: int = 0
    pending_t: float | None = None

    @property
    def total_count(self) -> int:
        return sum(b.count for b in self.bins)


@dataclass(frozen=True)
class Transition:
    segment: SegmentId
    t: float
    old: State
    new: State

    @property
    def expedite(self) -> bool:
        return self.new is State.POSSIBLE


@dataclass(frozen=True)
class HotspotRecord:
    segment: SegmentId
    level: Level
    bin: int
    anchor: GeoPoint
    d_in: float

    def __post_init__(self):
        if not self.d_in > 0:
            raise ValueError("d_in must be positive")


@dataclass(frozen=True)
class QueryResult:
    segment: SegmentId
    level: Level
    mean_speed: float | None
    crossing_time_s: float | None
    count: int
    insufficient: bool


class HotspotEngine:
    def __init__(self, net: RoadNetwork | None = None, config: EngineConfig | None = None,
                 d_in_overrides: dict[SegmentId, float] | None = None):
        self.net = net
        self.config = config or EngineConfig()
        self.d_in_overrides = dict(d_in_overrides or {})
        self.segments: dict[SegmentId, SegmentState] = {}
        self._outbox: list[Transition] = []
        self._pending: set[SegmentId] = set()

    def seg(self, sid: SegmentId) -> SegmentState:
        st = self.segments.get(sid)
        if st is None:
            st = self.segments[sid] = SegmentState()
        return st

    # -- ingestion -------------------------------------------------------

    def ingest(self, sid: SegmentId, speed: float, t: float) -> None:
        """Add one speed sample (m/s) observed on ``sid`` at local time ``t``."""
        if speed < 0 or math.isnan(speed):
            raise ValueError(f"negative speed {speed}")
        if speed > self.config.speed_cap_mps:
            raise SpeedRejected(f"{speed:.1f} m/s exceeds cap {self.config.speed_cap_mps}")
        st = self.seg(sid)
        if st.pending_t is not None and t != st.pending_t:
            self._step(sid, st, st.pending_t)
        b = time_bin(t)
        st.bins[b].add(speed, t)
        if speed > st.v_max:
            st.v_max = speed
        st.recent.append((t, speed))
        if len(st.recent) > self.config.window_samples:
            st.recent.sort()
            del st.recent[0]
        if st.state is State.HOTSPOT:
            if st.fresh_bin != b:
                st.fresh_bin, st.fresh_count = b, 0
            st.fresh_count += 1
        st.pending_t = t
        self._pending.add(sid)

    def flush(self, now: float | None = None) -> list[Transition]:
        """Step every segment with unprocessed samples, then run expiry at ``now``.

        Returns the transitions produced since the previous flush.
        """
        self._settle()
        if now is not None:
            for sid in sorted(s for s, st in self.segments.items() if st.state is State.POSSIBLE):
                self._step(sid, self.segments[sid], now)
        out, self._outbox = self._outbox, []
        return out

    def _settle(self) -> None:
        for sid in sorted(self._pending):
            st = self.segments[sid]
            if st.pending_t is not None:
                self._step(sid, st, st.pending_t)
        self._pending.clear()

    def step_state_machine(self, sid: SegmentId, now: float) -> Transition | None:
        st = self.seg(sid)
        if st.pending_t is not None:
            self._step(sid, st, st.pending_t)
        return self._step(sid, st, now)

    def _low_in_window(self, st: SegmentState, now: float) -> int:
        t_hot = thresholds(st.v_max, self.config).t_hot
        if t_hot <= 0:
            return 0
        lo = now - self.config.window_s
        return sum(1 for (t, v) in st.recent if lo <= t <= now and v <= t_hot)

    def _step(self, sid: SegmentId, st: SegmentState, now: float) -> Transition | None:
        if st.pending_t is not None and now >= st.pending_t:
            st.pending_t = None
        cfg = self.config
        b = time_bin(now)
        stats = st.bins[b]
        lvl = self._level(st, b)
        old = st.state
        if old is State.UNCONGESTED:
            if self._low_in_window(st, now) >= cfg.k_possible:
                st.state = State.POSSIBLE
                st.entered_t = now
        elif old is State.POSSIBLE:
            if stats.count >= cfg.n_confirm and lvl is Level.HIGH:
                st.state = State.HOTSPOT
                st.entered_t = now
                st.confirm_bin = b
                st.fresh_bin, st.fresh_count = b, 0
            elif self._low_in_window(st, now) == 0:
                st.state = State.UNCONGESTED
                st.entered_t = now
        elif old is State.HOTSPOT:
            th = thresholds(st.v_max, cfg)
            if st.fresh_bin == b and st.fresh_count >= cfg.n_confirm and stats.mean > th.t_low:
                st.state = State.UNCONGESTED
                st.entered_t = now
                st.confirm_bin = None
                st.fresh_bin, st.fresh_count = None, 0
        if st.state is State.HOTSPOT:
            if lvl is not Level.NONE:
                st.level = lvl
            elif st.level is Level.NONE:
                st.level = Level.HIGH
        else:
            st.level = lvl
        if st.state is not old:
            tr = Transition(sid, now, old, st.state)
            self._outbox.append(tr)
            return tr
        return None

    def _level(self, st: SegmentState, b: int) -> Level:
        stats = st.bins[b]
        if stats.count < self.config.min_samples:
            return Level.NONE
        return level_for(stats.mean, st.v_max, self.config)

    # -- classification --------------------------------------------------

    def classify(self, sid: SegmentId, b: int) -> tuple[Level, bool]:
        """Level of a (segment, bin) and whether the bin lacks data."""
        st = self.segments.get(sid)
        if st is None or st.bins[b].count < self.config.min_samples:
            return Level.NONE, True
        return level_for(st.bins[b].mean, st.v_max, self.config), False

    def separate_slow_roads(self, sid: SegmentId, b: int) -> bool:
        """True for a genuine hotspot bin, False for an inherently slow road."""
        lvl, insufficient = self.classify(sid, b)
        if insufficient or lvl is not Level.HIGH:
            return False
        st = self.segments[sid]
        stats = st.bins[b]
        nd = stats.nd or 0.0
        return nd >= self.config.nd_min or st.v_max >= 2 * stats.mean

    # -- publication -----------------------------------------------------

    def _eval_bin(self, st: SegmentState, now: float) -> int:
        b = time_bin(now)
        if st.bins[b].count < self.config.min_samples and st.confirm_bin is not None:
            return st.confirm_bin
        return b

    def correlation(self, s1: SegmentId, s2: SegmentId) -> float | None:
        """Pearson correlation of bin means over bins where both have data."""
        a, b = self.segments.get(s1), self.segments.get(s2)
        if a is None or b is None:
            return None
        m = self.config.min_samples
        pairs = [(x.mean, y.mean) for x, y in zip(a.bins, b.bins) if x.count >= m and y.count >= m]
        return pearson(pairs)

    def active_hotspots(self, now: float) -> list[HotspotRecord]:
        self._settle()
        candidates = []
        for sid in sorted(self.segments):
            st = self.segments[sid]
            if st.state is not State.HOTSPOT:
                continue
            b = self._eval_bin(st, now)
            if self.separate_slow_roads(sid, b):
                candidates.append((sid, b))
        kept: list[tuple[SegmentId, int]] = []
        for sid, b in candidates:
            if self.net is not None:
                nbrs = self.net.neighbors(sid)
                if any(k in nbrs and (self.correlation(k, sid) or 0.0) >= self.config.corr_min for k, _ in kept):
                    continue
            kept.append((sid, b))
        out = []
        for sid, b in kept:
            anchor = self.net.segment(sid).midpoint if self.net is not None and sid in self.net.segments else GeoPoint(0.0, 0.0)
            # level of the bin the record was published for, not of the latest sample
            level = self.classify(sid, b)[0]
            out.append(HotspotRecord(sid, level, b, anchor, self.d_in_overrides.get(sid, self.config.d_in_m)))
        return out

    def query(self, location: GeoPoint, t: float, max_snap_m: float = 50.0) -> QueryResult | None:
        """Bin statistics and crossing-time estimate at a location; None when unsnappable."""
        if self.net is None:
            raise ValueError("query needs a road network")
        try:
            snap = self.net.snap(location, max_snap_m)
        except SnapRejected:
            return None
        sid = snap.segment_id
        b = time_bin(t)
        st = self.segments.get(sid)
        stats = st.bins[b] if st is not None else BinStats()
        if stats.count == 0:
            return QueryResult(sid, Level.NONE, None, None, 0, True)
        lvl, insufficient = self.classify(sid, b)
        if st.state is State.HOTSPOT and st.level is not Level.NONE and not insufficient:
            lvl = st.level
        length = self.net.segment(sid).length_m
        crossing = length / max(stats.mean, self.config.crossing_eps_mps)
        return QueryResult(sid, lvl, stats.mean, crossing, stats.count, insufficient)

    # -- persistence -----------------------------------------------------

    def dumps(self) -> str:
        self._settle()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        buf.write(CHECKPOINT_HEADER + "\n")
        for f in fields(self.config):
            w.writerow(["config", f.name, repr(getattr(self.config, f.name))])
        for sid in sorted(self.d_in_overrides):
            w.writerow(["d_in", sid, repr(self.d_in_overrides[sid])])
        for sid in sorted(self.segments):
            st = self.segments[sid]
            w.writerow(["seg", sid, repr(st.v_max), st.state.value, int(st.level), _r(st.entered_t),
                        _r(st.confirm_bin), _r(st.fresh_bin), st.fresh_count])
            for b, bs in enumerate(st.bins):
                if bs.count:
                    w.writerow(["bin", sid, b, bs.count, repr(bs.mean), repr(bs.m2), _r(bs.last_update)])
            for t, v in sorted(st.recent):
                w.writerow(["ring", sid, repr(t), repr(v)])
        return buf.getvalue()

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str, net: RoadNetwork | None = None) -> HotspotEngine:
        lines = text.splitlines()
        if not lines or lines[0] != CHECKPOINT_HEADER:
            raise ValueError("not an engine checkpoint (bad header)")
        cfg_values: dict[str, str] = {}
        eng = cls(net)
        types = {f.name: f.type for f in fields(EngineConfig)}
        for row in csv.reader(lines[1:]):
            kind = row[0]
            if kind == "config":
                cfg_values[row[1]] = row[2]
            elif kind == "d_in":
                eng.d_in_overrides[int(row[1])] = float(row[2])
            elif kind == "seg":
                st = eng.seg(int(row[1]))
                st.v_max = float(row[2])
                st.state = State(row[3])
                st.level = Level(int(row[4]))
                st.entered_t = _f(row[5])
                st.confirm_bin = _i(row[6])
                st.fresh_bin = _i(row[7])
                st.fresh_count = int(row[8])
            elif kind == "bin":
                st = eng.seg(int(row[1]))
                st.bins[int(row[2])] = BinStats(int(row[3]), float(row[4]), float(row[5]), _f(row[6]))
            elif kind == "ring":
                eng.seg(int(row[1])).recent.append((float(row[2]), float(row[3])))
            else:
                raise ValueError(f"unknown checkpoint record {kind!r}")
        kwargs = {k: (int(v) if types[k] in ("int", int) else float(v)) for k, v in cfg_values.items() if k in types}
        eng.config = EngineConfig(**kwargs)
        return eng

    @classmethod
    def load(cls, path: str | Path, net: RoadNetwork | None = None) -> HotspotEngine:
        return cls.loads(Path(path).read_text(encoding="utf-8"), net)


def _r(x) -> str:
    return "" if x is None else repr(x)


def _f(s: str) -> float | None:
    return None if s == "" else float(s)


def _i(s: str) -> int | None:
    return None if s == "" else int(s)


def pearson(pairs: list[tuple[float, float]]) -> float | None:
    if len(pairs) < 3:
        return None
    n = len(pairs)
    mx = sum(p[0] for p in pairs) / n
    my = sum(p[1] for p in pairs) / n
    sxx = sum((p[0] - mx) ** 2 for p in pairs)
    syy = sum((p[1] - my) ** 2 for p in pairs)
    if sxx <= 0 or syy <= 0:
        return None
    sxy = sum((p[0] - mx) * (p[1] - my) for p in pairs)
    return sxy / math.sqrt(sxx * syy)


def write_hotspots_csv(records: Iterable[HotspotRecord], path_or_buf) -> None:
    """Hotspot list export: ``segment_id,level,bin,lat,lon,d_in_m``."""
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment_id", "level", "bin", "lat", "lon", "d_in_m"])
        for r in records:
            w.writerow([r.segment, r.level.name.lower(), r.bin, f"{r.anchor.lat:.7f}", f"{r.anchor.lon:.7f}", f"{r.d_in:.1f}"])
    finally:
        if own:
            fh.close()


def seed_hotspot(engine: HotspotEngine, sid: SegmentId, t: float, free_speed: float = 15.0,
                 crawl_speed: float = 1.0) -> None:
    """Drive a segment into the HOTSPOT state through the normal ingestion path.

    One free-flow sample establishes the reference speed, then ``n_confirm``
    crawl samples a millisecond apart confirm it. The samples sit just
    before ``t``, or just after it when ``t`` opens a time bin, so they
    always land in the bin of ``t``.
    """
    n = engine.config.n_confirm
    times = [t - (n + 1 - k) * 1e-3 for k in range(n + 1)]
    if time_bin(times[0]) != time_bin(t):
        times = [t + k * 1e-3 for k in range(n + 1)]
    engine.ingest(sid, free_speed, times[0])
    for tk in times[1:]:
        engine.ingest(sid, crawl_speed, tk)
    engine.step_state_machine(sid, times[-1])
    st = engine.segments[sid]
    if st.state is not State.HOTSPOT:
        raise RuntimeError(f"segment {sid} did not reach hotspot state (state={st.state})")
