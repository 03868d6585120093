"""Discrete-event fleet simulation: phones on vehicles sampling GPS and uploading to the engine.

Event order is total: (time, vehicle id, event kind), with kinds ordered
ACTIVITY < POLL < SAMPLE < ARRIVE. Randomness comes from per-vehicle
streams derived from the config seed, so results do not depend on how
events interleave.
"""

from __future__ import annotations

import csv
import heapq
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import Sequence

import numpy as np

from .activity import AccelVarianceRule, SensorSnapshot, classify_activity, GRAVITY
from .config import ConfigError
from .flash import AlertMode
from .hotspot_engine import EngineConfig, HotspotEngine, HotspotRecord, Transition, seed_hotspot
from .motion import Incident, Timeline, VehicleSpec, build_timelines, route_direction
from .road_network import RoadNetwork, SegmentId, great_circle_m, offset_point
from .sampler import NoHotspot, SamplerParams, SamplerState, distance_to_nearest_hotspot
from .traces import OUTCOMES, SpeedTracker


class EventKind(IntEnum):
    ACTIVITY = 0
    POLL = 1
    SAMPLE = 2
    ARRIVE = 3


@dataclass(frozen=True)
class ActivityModel:
    """Synthetic phone sensors, drawn per activity check."""

    window_s: float = 30.0
    towers_driving: float = 2.0  # mean handoffs per window
    towers_idle: float = 0.2
    wifi_prob_idle: float = 0.5
    accel_sd_driving: float = 1.5
    accel_sd_idle: float = 0.05
    accel_n: int = 30
    tower_min: int = 3
    accel_var_min: float = 0.5

    def snapshot(self, rng: np.random.Generator, driving: bool) -> SensorSnapshot:
        sd = self.accel_sd_driving if driving else self.accel_sd_idle
        z = GRAVITY + sd * rng.standard_normal(self.accel_n)
        xy = 0.1 * sd * rng.standard_normal((self.accel_n, 2))
        accel = tuple((float(a), float(b), float(c)) for (a, b), c in zip(xy, z))
        wifi = (not driving) and bool(rng.random() < self.wifi_prob_idle)
        towers = int(rng.poisson(self.towers_driving if driving else self.towers_idle))
        return SensorSnapshot(wifi, towers, accel, self.window_s)


@dataclass(frozen=True)
class SimConfig:
    net: RoadNetwork
    vehicles: tuple[VehicleSpec, ...]
    sampler: SamplerParams = field(default_factory=SamplerParams)
    engine: EngineConfig = field(default_factory=EngineConfig)
    e_in: float = 0.4
    e_out: float = 7.0
    bytes_per_sample: int = 20
    seed: int = 0
    start_s: float = 8 * 3600.0  # local time of day at simulation time zero
    horizon_s: float = 3 * 3600.0
    speed_noise_frac: float = 0.1
    min_speed: float = 0.5
    gps_noise_m: float = 5.0
    gps_noise_tau_s: float = 60.0  # correlation time of the fix error
    gap_max_s: float = 300.0
    max_snap_m: float = 50.0
    alert_mode: AlertMode = AlertMode.REGULAR
    incidents: tuple[Incident, ...] = ()
    preset_hotspots: tuple[SegmentId, ...] = ()
    activity: ActivityModel = field(default_factory=ActivityModel)

    def validate(self) -> None:
        ids = [v.id for v in self.vehicles]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate vehicle ids")
        for v in self.vehicles:
            missing = [s for s in v.route if s not in self.net.segments]
            if missing:
                raise ConfigError(f"vehicle {v.id}: unknown segments {missing}")
            try:
                route_direction(self.net, v.route)
            except ValueError:
                raise ConfigError(f"vehicle {v.id}: route is not connected") from None
        for inc in self.incidents:
            if inc.segment not in self.net.segments:
                raise ConfigError(f"incident on unknown segment {inc.segment}")
        for sid in self.preset_hotspots:
            if sid not in self.net.segments:
                raise ConfigError(f"preset hotspot on unknown segment {sid}")
        if not self.horizon_s > 0:
            raise ConfigError("horizon must be positive")


@dataclass
class SampleLog:
    t: float
    interval: float
    in_zone: bool
    expedited: bool
    joules: float
    outcome: str


@dataclass
class VehicleReport:
    id: int
    depart_s: float
    arrive_s: float | None
    distance_m: float
    samples: list[SampleLog]
    activity_checks: int
    activity_misses: int
    zone_entry_delay_s: float | None

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @property
    def joules(self) -> float:
        return math.fsum(s.joules for s in self.samples)

    def bytes(self, per_sample: int) -> int:
        return self.n_samples * per_sample


@dataclass
class SegmentReport:
    id: SegmentId
    state: str
    level: str
    v_max: float
    samples: int


@dataclass
class SimReport:
    vehicles: list[VehicleReport]
    segments: list[SegmentReport]
    events: Counter
    ingest: Counter
    transitions: list[Transition]
    bytes_per_sample: int

    @property
    def total_samples(self) -> int:
        return sum(v.n_samples for v in self.vehicles)

    @property
    def total_joules(self) -> float:
        return math.fsum(v.joules for v in self.vehicles)

    @property
    def total_bytes(self) -> int:
        return self.total_samples * self.bytes_per_sample

    def zone_delays(self) -> list[float]:
        return [v.zone_entry_delay_s for v in self.vehicles if v.zone_entry_delay_s is not None]

    @property
    def mean_zone_delay(self) -> float | None:
        d = self.zone_delays()
        return sum(d) / len(d) if d else None

    def reconciles(self) -> bool:
        """Every emitted sample was ingested or rejected with a reason."""
        return sum(self.ingest.values()) == self.total_samples

    def vehicle(self, vid: int) -> VehicleReport:
        return next(v for v in self.vehicles if v.id == vid)

    def summary_rows(self) -> list[tuple[str, str]]:
        rows = [
            ("vehicles", str(len(self.vehicles))),
            ("samples", str(self.total_samples)),
            ("bytes", str(self.total_bytes)),
            ("joules", f"{self.total_joules:.6f}"),
            ("mean_zone_entry_delay_s", _fmt(self.mean_zone_delay)),
            ("transitions", str(len(self.transitions))),
        ]
        rows += [(f"events_{k.name.lower()}", str(self.events[k])) for k in EventKind]
        rows += [(f"ingest_{k}", str(self.ingest[k])) for k in OUTCOMES]
        rows += [(f"events_{k}", str(self.events[k])) for k in ("expedite_broadcasts", "expedite_reschedules")]
        return rows

    def write(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / n for n in ("vehicles.csv", "samples.csv", "segments.csv", "transitions.csv", "summary.csv")]
        with _csv(paths[0]) as w:
            w.writerow(["vehicle_id", "depart_s", "arrive_s", "distance_m", "samples", "in_zone_samples",
                        "joules", "bytes", "zone_entry_delay_s", "activity_checks", "activity_misses"])
            for v in self.vehicles:
                w.writerow([v.id, _fmt(v.depart_s), _fmt(v.arrive_s), _fmt(v.distance_m), v.n_samples,
                            sum(s.in_zone for s in v.samples), _fmt(v.joules), v.bytes(self.bytes_per_sample),
                            _fmt(v.zone_entry_delay_s), v.activity_checks, v.activity_misses])
        with _csv(paths[1]) as w:
            w.writerow(["vehicle_id", "t_s", "interval_s", "in_zone", "expedited", "joules", "outcome"])
            for v in self.vehicles:
                for s in v.samples:
                    w.writerow([v.id, _fmt(s.t), _fmt(s.interval), int(s.in_zone), int(s.expedited),
                                _fmt(s.joules), s.outcome])
        with _csv(paths[2]) as w:
            w.writerow(["segment_id", "state", "level", "v_max", "samples"])
            for s in self.segments:
                w.writerow([s.id, s.state, s.level, _fmt(s.v_max), s.samples])
        with _csv(paths[3]) as w:
            w.writerow(["t_s", "segment_id", "from", "to"])
            for tr in self.transitions:
                w.writerow([_fmt(tr.t), tr.segment, tr.old.value, tr.new.value])
        with _csv(paths[4]) as w:
            w.writerow(["key", "value"])
            w.writerows(self.summary_rows())
        return paths


class _csv:
    def __init__(self, path: Path):
        self.fh = open(path, "w", newline="", encoding="utf-8")

    def __enter__(self):
        return csv.writer(self.fh, lineterminator="\n")

    def __exit__(self, *exc):
        self.fh.close()


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return ""
    return f"{x:.6f}"


@dataclass
class _Vehicle:
    spec: VehicleSpec
    timeline: Timeline
    sampler: SamplerState
    act_rng: np.random.Generator
    gps_rng: np.random.Generator
    active: bool = True
    gen: int = 0
    next_sample: float | None = None
    samples: list[SampleLog] = field(default_factory=list)
    checks: int = 0
    misses: int = 0
    gps_err: np.ndarray | None = None
    gps_err_t: float = 0.0

    def fix_error(self, t: float, sd: float, tau: float) -> np.ndarray:
        """North/east fix error as a stationary AR(1) process in time."""
        z = self.gps_rng.standard_normal(2)
        if self.gps_err is None:
            self.gps_err = sd * z
        else:
            rho = math.exp(-(t - self.gps_err_t) / tau) if tau > 0 else 0.0
            self.gps_err = rho * self.gps_err + math.sqrt(1.0 - rho * rho) * sd * z
        self.gps_err_t = t
        return self.gps_err


def _zone_entry_delay(net: RoadNetwork, tl: Timeline, hotspots: Sequence[HotspotRecord],
                      sample_times: Sequence[float], horizon: float, straight_line: bool) -> float | None:
    """Time from truly entering a hotspot zone to the first sample taken inside it."""
    if not hotspots or not sample_times:
        return None

    def inside(t: float) -> bool:
        try:
            d, rec = distance_to_nearest_hotspot(tl.position(t), hotspots, net, straight_line)
        except NoHotspot:
            return False
        return d <= rec.d_in

    t0, t_end = tl.depart, min(tl.arrive, horizon)
    if inside(t0):
        return None
    t = t0
    while t < t_end:
        nxt = min(t + 1.0, t_end)
        if inside(nxt):
            lo, hi = t, nxt
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                lo, hi = (lo, mid) if inside(mid) else (mid, hi)
            crossing = hi
            for ts in sample_times:
                if ts >= crossing - 1e-9 and inside(ts):
                    return ts - crossing
            return None
        t = nxt
    return None


def run(config: SimConfig) -> SimReport:
    config.validate()
    net = config.net
    cfg = config
    engine_cfg = cfg.engine
    if cfg.alert_mode is AlertMode.EXPEDITED:
        # one sub-threshold report is enough to raise the alert
        engine_cfg = replace(engine_cfg, k_possible=1)
    engine = HotspotEngine(net, engine_cfg)
    local0 = cfg.start_s
    for sid in sorted(cfg.preset_hotspots):
        seed_hotspot(engine, sid, local0)
    engine.flush(local0)
    initial_hotspots = engine.active_hotspots(local0)

    timelines = build_timelines(net, cfg.vehicles, cfg.incidents, cfg.seed, cfg.speed_noise_frac, cfg.min_speed)
    tracker = SpeedTracker(net, engine, cfg.gap_max_s, cfg.max_snap_m)
    accel_rule = AccelVarianceRule(var_min=cfg.activity.accel_var_min)
    radius = cfg.engine.d_in_m
    horizon = cfg.horizon_s
    s_min = cfg.sampler.s_min

    fleet: dict[int, _Vehicle] = {}
    heap: list[tuple[float, int, int, int]] = []
    events: Counter = Counter()
    transitions: list[Transition] = []

    def push(t: float, vid: int, kind: EventKind, gen: int = 0) -> None:
        if t <= horizon:
            heapq.heappush(heap, (t, vid, int(kind), gen))

    for spec in sorted(cfg.vehicles, key=lambda v: v.id):
        tl = timelines[spec.id]
        fleet[spec.id] = _Vehicle(spec, tl, SamplerState(cfg.sampler),
                                  np.random.default_rng([cfg.seed, spec.id, 1]),
                                  np.random.default_rng([cfg.seed, spec.id, 2]))
        push(tl.depart, spec.id, EventKind.ACTIVITY)
        if math.isfinite(tl.arrive):
            push(tl.arrive, spec.id, EventKind.ARRIVE)

    def schedule_sample(v: _Vehicle, t: float) -> None:
        v.gen += 1
        v.next_sample = t
        push(t, v.spec.id, EventKind.SAMPLE, v.gen)

    def broadcast(tr: Transition, now: float) -> None:
        events["expedite_broadcasts"] += 1
        for u in fleet.values():
            if not (u.active and u.sampler.driving):
                continue
            u.sampler.receive_expedite(tr.segment, now)
            last = u.sampler.last_sample_time
            if not u.sampler.expedite_applies(now, u.timeline.position(now), net, radius):
                continue
            due = now if last is None else max(last + s_min, now)
            if u.next_sample is None or due < u.next_sample:
                events["expedite_reschedules"] += 1
                schedule_sample(u, due)

    while heap:
        t, vid, kind_i, gen = heapq.heappop(heap)
        kind = EventKind(kind_i)
        v = fleet[vid]
        local = local0 + t
        if kind is EventKind.ACTIVITY:
            if not v.active:
                continue
            events[kind] += 1
            truth = v.timeline.depart <= t <= v.timeline.arrive
            verdict = classify_activity(cfg.activity.snapshot(v.act_rng, truth), accel_rule, cfg.activity.tower_min)
            v.checks += 1
            v.misses += verdict.driving != truth
            if verdict.driving and not v.sampler.driving:
                v.sampler.driving = True
                push(t, vid, EventKind.POLL)
                schedule_sample(v, t)
            elif not verdict.driving and v.sampler.driving:
                v.sampler.driving = False
                v.gen += 1
                v.next_sample = None
            push(t + cfg.activity.window_s, vid, EventKind.ACTIVITY)
        elif kind is EventKind.POLL:
            if not (v.active and v.sampler.driving):
                continue
            events[kind] += 1
            v.sampler.refresh(t, engine.active_hotspots(local))
            push(t + cfg.sampler.poll_interval, vid, EventKind.POLL)
        elif kind is EventKind.SAMPLE:
            if gen != v.gen or not (v.active and v.sampler.driving):
                continue
            events[kind] += 1
            pos = v.timeline.position(t)
            dec = v.sampler.compute_interval(t, pos, net, radius)
            v.sampler.last_sample_time = t
            v.sampler.interval = dec.interval
            fix = net.point_at(pos)
            if cfg.gps_noise_m > 0:
                n, e = v.fix_error(t, cfg.gps_noise_m, cfg.gps_noise_tau_s)
                fix = offset_point(fix, float(n), float(e))
            outcome = tracker.observe(vid, fix, local)
            joules = cfg.e_in if dec.in_zone else cfg.e_out
            v.samples.append(SampleLog(t, dec.interval, dec.in_zone, dec.expedited, joules, outcome))
            fresh = engine.flush(local)
            transitions.extend(fresh)
            if cfg.alert_mode is AlertMode.EXPEDITED:
                for tr in fresh:
                    if tr.expedite:
                        broadcast(tr, t)
            schedule_sample(v, t + dec.interval)
        else:
            events[kind] += 1
            v.active = False
            v.sampler.driving = False
            v.gen += 1
            v.next_sample = None

    vehicles = []
    for vid in sorted(fleet):
        v = fleet[vid]
        tl = v.timeline
        times = [s.t for s in v.samples]
        delay = _zone_entry_delay(net, tl, initial_hotspots, times, horizon, cfg.sampler.straight_line)
        arrive = tl.arrive if tl.arrive <= horizon else None
        vehicles.append(VehicleReport(vid, tl.depart, arrive, tl.distance_travelled(min(tl.arrive, horizon)),
                                      v.samples, v.checks, v.misses, delay))
    engine.flush(local0 + horizon)
    segments = [SegmentReport(sid, st.state.value, st.level.name.lower(), st.v_max, st.total_count)
                for sid, st in sorted(engine.segments.items())]
    return SimReport(vehicles, segments, events, Counter(tracker.counts), transitions, cfg.bytes_per_sample)


@dataclass(frozen=True)
class ModeComparison:
    continuous: SimReport
    adaptive: SimReport

    @property
    def sample_ratio(self) -> float:
        return self.continuous.total_samples / max(self.adaptive.total_samples, 1)

    @property
    def byte_ratio(self) -> float:
        return self.continuous.total_bytes / max(self.adaptive.total_bytes, 1)

    @property
    def energy_ratio(self) -> float:
        return self.continuous.total_joules / self.adaptive.total_joules if self.adaptive.total_joules else math.inf

    @property
    def delay_delta_s(self) -> float | None:
        a, c = self.adaptive.mean_zone_delay, self.continuous.mean_zone_delay
        return None if a is None or c is None else a - c

    def rows(self) -> list[tuple[str, str]]:
        return [
            ("samples_continuous", str(self.continuous.total_samples)),
            ("samples_adaptive", str(self.adaptive.total_samples)),
            ("sample_ratio", f"{self.sample_ratio:.4f}"),
            ("bytes_continuous", str(self.continuous.total_bytes)),
            ("bytes_adaptive", str(self.adaptive.total_bytes)),
            ("byte_ratio", f"{self.byte_ratio:.4f}"),
            ("joules_continuous", f"{self.continuous.total_joules:.4f}"),
            ("joules_adaptive", f"{self.adaptive.total_joules:.4f}"),
            ("energy_ratio", f"{self.energy_ratio:.4f}"),
            ("zone_delay_continuous_s", _fmt(self.continuous.mean_zone_delay)),
            ("zone_delay_adaptive_s", _fmt(self.adaptive.mean_zone_delay)),
            ("zone_delay_delta_s", _fmt(self.delay_delta_s)),
        ]


def compare_modes(config: SimConfig) -> ModeComparison:
    """Same scenario and seed under continuous (every ``s_min``) and adaptive sampling."""
    cont = replace(config, sampler=replace(config.sampler, s_max=config.sampler.s_min))
    return ModeComparison(run(cont), run(config))


def _walk(net: RoadNetwork, rng: np.random.Generator, node, avoid: SegmentId, length_m: float) -> list[SegmentId]:
    """Walk away from ``node`` without using ``avoid``, always moving farther from the start.

    Among the segments that increase the straight-line distance from the
    start the most (within 1 m), one is picked at random.
    """
    origin = net.nodes[node]
    out: list[SegmentId] = []
    used = {avoid}
    total = 0.0
    while total < length_m:
        here = great_circle_m(origin, net.nodes[node])
        options = []
        for sid in net.adjacency[node]:
            if sid in used:
                continue
            a, b = net.segment(sid).endpoints
            far = b if node == a else a
            gain = great_circle_m(origin, net.nodes[far]) - here
            if gain > 0:
                options.append((gain, sid, far))
        if not options:
            break
        best = max(g for g, _, _ in options)
        options = [o for o in options if o[0] >= best - 1.0]
        _, sid, node = options[int(rng.integers(len(options)))]
        used.add(sid)
        out.append(sid)
        total += net.segment(sid).length_m
    return out


def inject_incident(config: SimConfig, segment: SegmentId, t0: float, lambda_a: float, lambda_d: float = 0.0,
                    t1: float = math.inf, crawl_mps: float = 1.0, speed_mps: float = 12.5,
                    warmup_s: float = 600.0, upstream_m: float = 1000.0, downstream_m: float = 500.0) -> SimConfig:
    """Add an incident and a Poisson stream of vehicles driving through ``segment``.

    Vehicles reach the segment at rate ``lambda_a`` per minute from
    ``t0 - warmup_s`` on (the warm-up traffic establishes the free-flow
    reference speed). While the incident is active, vehicles crawl at
    ``crawl_mps`` and leave at rate ``lambda_d`` per minute.
    """
    net = config.net
    if segment not in net.segments:
        raise ConfigError(f"unknown segment {segment}")
    inc = Incident(segment, t0, t1, lambda_d, crawl_mps)
    rng = np.random.default_rng([config.seed, int(segment), 99])
    a, b = net.segment(segment).endpoints
    new: list[VehicleSpec] = []
    next_id = max((v.id for v in config.vehicles), default=-1) + 1
    t = max(0.0, t0 - warmup_s)
    while lambda_a > 0:
        t += float(rng.exponential(60.0 / lambda_a))
        if t > config.horizon_s:
            break
        up = _walk(net, rng, a, segment, upstream_m)
        down = _walk(net, rng, b, segment, downstream_m)
        route = tuple(reversed(up)) + (segment,) + tuple(down)
        try:
            route_direction(net, route)
        except ValueError:
            route = (segment,) + tuple(down)
            up = []
        lead = sum(net.segment(s).length_m for s in up) / speed_mps
        depart = t - lead
        if depart < 0:
            continue
        new.append(VehicleSpec(next_id, route, (speed_mps,), depart))
        next_id += 1
    return replace(config, vehicles=tuple(config.vehicles) + tuple(new), incidents=tuple(config.incidents) + (inc,))
