"""Vehicle motion along routes: piecewise-constant speeds plus incident slowdowns."""

from __future__ import annotations

import bisect
import heapq
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .road_network import RoadNetwork, SegmentId, route_nodes


@dataclass(frozen=True)
class VehicleSpec:
    id: int
    route: tuple[SegmentId, ...]
    speeds: tuple[float, ...]
    depart_time: float = 0.0
    start_offset: float = 0.0
    noise_frac: float | None = None  # speed noise sd as a fraction of the mean; None uses the run default

    def __post_init__(self):
        if not self.route:
            raise ValueError(f"vehicle {self.id}: empty route")
        if len(self.speeds) not in (1, len(self.route)):
            raise ValueError(f"vehicle {self.id}: need one speed or one per route segment")
        if any(not v > 0 for v in self.speeds):
            raise ValueError(f"vehicle {self.id}: speeds must be positive")
        if self.noise_frac is not None and self.noise_frac < 0:
            raise ValueError(f"vehicle {self.id}: noise must be non-negative")

    def speed_on(self, k: int) -> float:
        return self.speeds[0] if len(self.speeds) == 1 else self.speeds[k]


@dataclass(frozen=True)
class Incident:
    segment: SegmentId
    t0: float
    t1: float = math.inf
    lambda_d: float = 0.0  # vehicles per minute released while blocked
    crawl_mps: float = 1.0


@dataclass
class Leg:
    segment: SegmentId
    forward: bool
    t_enter: float
    t_exit: float
    d_enter: float  # distance along the segment in travel direction at entry
    d_exit: float
    length: float
    crawl: float | None = None  # set on legs slowed by an incident

    @property
    def speed(self) -> float:
        dt = self.t_exit - self.t_enter
        if math.isinf(dt):
            return self.crawl or 0.0
        return (self.d_exit - self.d_enter) / dt if dt > 0 else 0.0


@dataclass
class Timeline:
    vehicle: int
    legs: list[Leg] = field(default_factory=list)

    @property
    def depart(self) -> float:
        return self.legs[0].t_enter

    @property
    def arrive(self) -> float:
        return self.legs[-1].t_exit

    @property
    def distance(self) -> float:
        return sum(leg.d_exit - leg.d_enter for leg in self.legs)

    def _leg_at(self, t: float) -> Leg:
        if t <= self.legs[0].t_enter:
            return self.legs[0]
        starts = [leg.t_enter for leg in self.legs]
        i = bisect.bisect_right(starts, t) - 1
        return self.legs[min(i, len(self.legs) - 1)]

    def position(self, t: float) -> tuple[SegmentId, float]:
        """Network position (segment, offset from its first node) at time ``t``, clamped to the trip."""
        leg = self._leg_at(t)
        if t >= leg.t_exit:
            along = leg.d_exit
        elif t <= leg.t_enter:
            along = leg.d_enter
        else:
            along = leg.d_enter + (t - leg.t_enter) * leg.speed
        along = min(max(along, 0.0), leg.length)
        return (leg.segment, along if leg.forward else leg.length - along)

    def distance_travelled(self, t: float) -> float:
        total = 0.0
        for leg in self.legs:
            if t >= leg.t_exit:
                total += leg.d_exit - leg.d_enter
            elif t > leg.t_enter:
                total += (t - leg.t_enter) * leg.speed
                break
            else:
                break
        return total


def route_direction(net: RoadNetwork, route: Sequence[SegmentId]) -> list[bool]:
    nodes = route_nodes(net, route)
    if nodes is None:
        raise ValueError(f"route {list(route)} is not connected")
    return [net.segment(s).endpoints[0] == nodes[k] for k, s in enumerate(route)]


def build_timelines(net: RoadNetwork, vehicles: Sequence[VehicleSpec], incidents: Sequence[Incident] = (),
                    seed: int = 0, noise_frac: float = 0.1, min_speed: float = 0.5) -> dict[int, Timeline]:
    """Traverse every route, processing segment entries in global time order.

    Global ordering makes incident queues first-in first-out across vehicles.
    Per-segment speed noise comes from a per-vehicle RNG stream so it does
    not depend on the order vehicles are processed in.
    """
    by_seg: dict[SegmentId, list[Incident]] = {}
    for inc in incidents:
        by_seg.setdefault(inc.segment, []).append(inc)
    last_exit: dict[SegmentId, float] = {}
    dirs = {v.id: route_direction(net, v.route) for v in vehicles}
    draws: dict[int, np.ndarray] = {}
    for v in vehicles:
        rng = np.random.default_rng([seed, v.id, 7])
        draws[v.id] = rng.standard_normal(len(v.route))
    spec = {v.id: v for v in vehicles}
    out = {v.id: Timeline(v.id) for v in vehicles}
    heap: list[tuple[float, int, int, float]] = []
    for v in vehicles:
        heapq.heappush(heap, (v.depart_time, v.id, 0, v.start_offset))
    while heap:
        t, vid, k, d0 = heapq.heappop(heap)
        v = spec[vid]
        sid = v.route[k]
        length = net.segment(sid).length_m
        d0 = min(max(d0, 0.0), length)
        base = v.speed_on(k)
        sd = noise_frac if v.noise_frac is None else v.noise_frac
        speed = max(min_speed, base * (1.0 + sd * float(draws[vid][k]))) if sd > 0 else base
        rem = length - d0
        t_exit = t + rem / speed
        crawl = None
        for inc in by_seg.get(sid, ()):
            if not inc.t0 <= t < inc.t1:
                continue
            crawl = inc.crawl_mps
            prev = last_exit.get(sid, -math.inf)
            if inc.lambda_d > 0:
                held = max(t + rem / inc.crawl_mps, prev + 60.0 / inc.lambda_d)
            else:
                held = math.inf
            # the queue dissolves once the incident clears
            held = min(held, inc.t1 + rem / speed)
            t_exit = max(t_exit, held, prev)
        if math.isfinite(t_exit):
            last_exit[sid] = max(last_exit.get(sid, -math.inf), t_exit)
        out[vid].legs.append(Leg(sid, dirs[vid][k], t, t_exit, d0, length, length, crawl))
        if k + 1 < len(v.route) and math.isfinite(t_exit):
            heapq.heappush(heap, (t_exit, vid, k + 1, 0.0))
    return out

