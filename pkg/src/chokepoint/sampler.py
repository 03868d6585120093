"""Client-side utility-aware GPS sampling.

The next sampling interval depends on the distance ``d`` to the nearest
active hotspot: peak rate (``s_min``) inside the congestion zone of radius
``d_in``, then ``s_min + (1 - d_in/d) * (s_max - s_min)`` outside it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .hotspot_engine import HotspotRecord
from .road_network import TIE_M, RoadNetwork, SegmentId, great_circle_m


class NoHotspot(LookupError):
    """No reachable active hotspot."""


@dataclass(frozen=True)
class SamplerParams:
    s_min: float = 1.0
    s_max: float = 120.0
    poll_interval: float = 60.0
    expedite_ttl: float = 300.0
    straight_line: bool = False

    def __post_init__(self):
        if not 0 < self.s_min <= self.s_max:
            raise ValueError(f"need 0 < s_min <= s_max, got {self.s_min}, {self.s_max}")


def next_interval(d: float, d_in: float, s_min: float, s_max: float) -> float:
    if d < 0 or d_in <= 0:
        raise ValueError("need d >= 0 and d_in > 0")
    if d <= d_in:
        return s_min
    y = s_min + (1.0 - d_in / d) * (s_max - s_min)
    return min(max(y, s_min), s_max)


def interval_beyond_zone(x: float, d_in: float, s_min: float, s_max: float) -> float:
    """Same law written in terms of the distance ``x = d - d_in`` already covered outside the zone."""
    return (s_max * x + d_in * s_min) / (d_in + x)


def distance_to_nearest_hotspot(pos: tuple[SegmentId, float], hotspots: Sequence[HotspotRecord],
                                net: RoadNetwork, straight_line: bool = False) -> tuple[float, HotspotRecord]:
    """Distance to the closer endpoint of the nearest hotspot segment.

    Unreachable hotspots are skipped; ties (within ``TIE_M``) go to the lower segment id.
    """
    if not hotspots:
        raise NoHotspot("empty hotspot list")
    best: tuple[float, SegmentId, HotspotRecord] | None = None
    node_d = None if straight_line else net.node_distances_from(pos)
    here = net.point_at(pos) if straight_line else None
    for rec in hotspots:
        seg = net.segment(rec.segment)
        if rec.segment == pos[0]:
            d = 0.0
        elif straight_line:
            d = min(great_circle_m(here, net.nodes[n]) for n in seg.endpoints)
        else:
            d = min(float(node_d[net._node_index[n]]) for n in seg.endpoints)
        if math.isinf(d):
            continue
        if best is None or d < best[0] - TIE_M or (d <= best[0] + TIE_M and rec.segment < best[1]):
            best = (d, rec.segment, rec)
    if best is None:
        raise NoHotspot("no reachable hotspot")
    return best[0], best[2]


@dataclass
class Expedite:
    segment: SegmentId
    issued_t: float


@dataclass
class SampleDecision:
    t: float
    interval: float
    distance: float | None
    in_zone: bool
    expedited: bool


@dataclass
class SamplerState:
    params: SamplerParams = field(default_factory=SamplerParams)
    hotspot_cache: list[HotspotRecord] = field(default_factory=list)
    fetched_at: float | None = None
    last_sample_time: float | None = None
    interval: float | None = None
    driving: bool = False
    expedites: dict[SegmentId, Expedite] = field(default_factory=dict)

    def refresh(self, now: float, hotspots: Sequence[HotspotRecord]) -> None:
        self.hotspot_cache = list(hotspots)
        self.fetched_at = now

    def cache_stale(self, now: float) -> bool:
        return self.fetched_at is None or now - self.fetched_at >= self.params.poll_interval

    def receive_expedite(self, segment: SegmentId, now: float) -> None:
        self.expedites[segment] = Expedite(segment, now)

    def clear_expedite(self, segment: SegmentId) -> None:
        self.expedites.pop(segment, None)

    def _live_expedites(self, now: float) -> list[Expedite]:
        ttl = self.params.expedite_ttl
        for seg in [s for s, e in self.expedites.items() if now - e.issued_t > ttl]:
            del self.expedites[seg]
        return [self.expedites[s] for s in sorted(self.expedites)]

    def expedite_applies(self, now: float, pos: tuple[SegmentId, float], net: RoadNetwork,
                         radius_m: float) -> bool:
        """True when a live expedite directive covers a segment within ``radius_m`` of ``pos``."""
        live = self._live_expedites(now)
        if not live:
            return False
        node_d = net.node_distances_from(pos)
        for e in live:
            if e.segment == pos[0]:
                return True
            seg = net.segment(e.segment)
            if min(float(node_d[net._node_index[n]]) for n in seg.endpoints) <= radius_m:
                return True
        return False

    def compute_interval(self, now: float, pos: tuple[SegmentId, float], net: RoadNetwork,
                         expedite_radius_m: float = 2000.0) -> SampleDecision:
        p = self.params
        try:
            d, rec = distance_to_nearest_hotspot(pos, self.hotspot_cache, net, p.straight_line)
            y = next_interval(d, rec.d_in, p.s_min, p.s_max)
            in_zone = d <= rec.d_in
        except NoHotspot:
            d, y, in_zone = None, p.s_max, False
        expedited = self.expedite_applies(now, pos, net, expedite_radius_m)
        if expedited:
            y = p.s_min
        return SampleDecision(now, y, d, in_zone, expedited)


@dataclass(frozen=True)
class Sleep:
    next_due: float | None


def tick(state: SamplerState, now: float, pos: tuple[SegmentId, float], net: RoadNetwork,
         fetch: Callable[[float], Sequence[HotspotRecord]] | None = None,
         expedite_radius_m: float = 2000.0) -> SampleDecision | Sleep:
    """One scheduler wake-up: sample now (and pick the next interval) or stay asleep."""
    if not state.driving:
        return Sleep(None)
    if fetch is not None and state.cache_stale(now):
        state.refresh(now, fetch(now))
    if state.expedite_applies(now, pos, net, expedite_radius_m) and state.interval is not None:
        state.interval = min(state.interval, state.params.s_min)
    if state.last_sample_time is None or now - state.last_sample_time >= state.interval - 1e-9:
        dec = state.compute_interval(now, pos, net, expedite_radius_m)
        state.last_sample_time = now
        state.interval = dec.interval
        return dec
    return Sleep(state.last_sample_time + state.interval)
