"""Synthetic road networks, trips and cab-style traces for tests and bundled fixtures."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .motion import VehicleSpec
from .road_network import GeoPoint, RoadNetwork, build_network, offset_point
from .traces import TraceRecord

CORRIDOR_ORIGIN = GeoPoint(12.9716, 77.5946)
GRID_ORIGIN = GeoPoint(37.7749, -122.4194)


def corridor_network(n_segments: int = 101, seg_m: float = 100.0, origin: GeoPoint = CORRIDOR_ORIGIN) -> RoadNetwork:
    """Straight north-running road; segment k joins node k to node k+1."""
    nodes = {k: offset_point(origin, k * seg_m, 0.0) for k in range(n_segments + 1)}
    return build_network(nodes, [(k, k, k + 1) for k in range(n_segments)])


def grid_network(rows: int, cols: int, spacing_m: float = 200.0, origin: GeoPoint = GRID_ORIGIN) -> RoadNetwork:
    """Manhattan grid with ``rows * (cols-1) + cols * (rows-1)`` segments.

    Horizontal segments come first (row-major), then vertical ones.
    """
    nodes = {r * cols + c: offset_point(origin, r * spacing_m, c * spacing_m) for r in range(rows) for c in range(cols)}
    edges = []
    sid = 0
    for r in range(rows):
        for c in range(cols - 1):
            edges.append((sid, r * cols + c, r * cols + c + 1))
            sid += 1
    for r in range(rows - 1):
        for c in range(cols):
            edges.append((sid, r * cols + c, (r + 1) * cols + c))
            sid += 1
    return build_network(nodes, edges)


# -- corridor trips --------------------------------------------------------


def paper_trip(d_in: float = 2000.0, d_out: float = 8000.0, v_in: float = 2.0, v_out: float = 12.5,
               seg_m: float = 100.0, vehicle_id: int = 0, depart: float = 0.0) -> tuple[RoadNetwork, VehicleSpec]:
    """Corridor whose segment 0 is the hotspot; the trip starts at its far end and drives away.

    The first ``d_in`` meters are driven at ``v_in``, the rest at ``v_out``.
    """
    n_in_seg = round(d_in / seg_m)
    n_out_seg = round(d_out / seg_m)
    net = corridor_network(1 + n_in_seg + n_out_seg, seg_m)
    route = tuple(range(1, 1 + n_in_seg + n_out_seg))
    speeds = tuple(v_in if k < n_in_seg else v_out for k in range(len(route)))
    return net, VehicleSpec(vehicle_id, route, speeds, depart)


def corridor_vehicles(net: RoadNetwork, zone_segments: int = 20, zone_speed: float = 2000.0 / 170.0,
                      cruise: float = 12.5) -> list[VehicleSpec]:
    """Bundled corridor traffic around a hotspot at segment 0.

    One vehicle drives outbound from the hotspot, one drives inbound toward
    it, and two make short trips on the far part of the corridor.
    """
    n = len(net)
    out_route = tuple(range(1, n))
    out_speeds = tuple(zone_speed if k < zone_segments else cruise for k in range(len(out_route)))
    in_route = tuple(reversed(out_route))
    in_speeds = tuple(reversed(out_speeds))
    far = n // 2
    return [
        VehicleSpec(0, out_route, out_speeds, 0.0),
        VehicleSpec(1, in_route, in_speeds, 60.0),
        VehicleSpec(2, tuple(range(far, n)), (cruise,), 120.0),
        VehicleSpec(3, tuple(reversed(range(far, n))), (cruise,), 300.0),
    ]


# -- cab-style traces --------------------------------------------------------


@dataclass(frozen=True)
class TraceFixture:
    net: RoadNetwork
    records: list[TraceRecord]
    hot_segments: frozenset[int]
    slow_segments: frozenset[int]


def _grid_walk(net: RoadNetwork, rng: np.random.Generator, start_node: int, steps: int) -> list[int]:
    route, node, prev = [], start_node, None
    for _ in range(steps):
        options = [s for s in net.adjacency[node] if s != prev]
        sid = options[int(rng.integers(len(options)))]
        a, b = net.segment(sid).endpoints
        node = b if node == a else a
        route.append(sid)
        prev = sid
    return route


def cab_traces(rows: int = 15, cols: int = 15, spacing_m: float = 200.0, n_vehicles: int = 200,
               start_s: float = 15 * 3600.0, hours: float = 4.0, cadence_s: float = 60.0,
               free_speed: float = 13.0, crawl_speed: float = 1.0, slow_speed: float = 3.0,
               congested_bins: tuple[int, ...] = (34, 35, 36), n_clusters: int = 6, n_slow: int = 6,
               gps_noise_m: float = 5.0, day0_unix: float = 1211846400.0, seed: int = 7) -> TraceFixture:
    """Cabs wandering a grid, reporting once per ``cadence_s``.

    Congestion clusters (chains of three segments) crawl during
    ``congested_bins`` and flow freely otherwise; a few slow roads crawl at
    ``slow_speed`` all day. Timestamps are unix seconds on ``day0_unix``
    (a UTC midnight) so time of day equals local time with no offset.
    """
    rng = np.random.default_rng(seed)
    net = grid_network(rows, cols, spacing_m)
    # congestion clusters: three collinear horizontal segments
    hot: set[int] = set()
    per_row = cols - 1
    rows_used = rng.choice(np.arange(1, rows - 1), size=n_clusters, replace=False)
    for r in rows_used:
        c0 = int(rng.integers(0, per_row - 3))
        hot.update(int(r) * per_row + c0 + j for j in range(3))
    vertical = [s for s in net.segments if s >= rows * per_row]
    slow = {int(s) for s in rng.choice(vertical, size=n_slow, replace=False)}

    def speed_for(sid: int, t: float) -> float:
        b = int((t % 86400) // 1800)
        if sid in slow:
            base = slow_speed
        elif sid in hot and b in congested_bins:
            base = crawl_speed
        else:
            base = free_speed
        return max(0.3, base * (1.0 + 0.15 * rng.standard_normal()))

    records: list[TraceRecord] = []
    end = start_s + hours * 3600.0
    node_ids = sorted(net.nodes)
    hot_nodes = sorted({n for s in hot for n in net.segment(s).endpoints})
    for v in range(n_vehicles):
        vid = f"cab{v:03d}"
        # a third of the fleet starts near a cluster so clusters see steady traffic
        node = hot_nodes[int(rng.integers(len(hot_nodes)))] if v % 3 == 0 else node_ids[int(rng.integers(len(node_ids)))]
        t = start_s + float(rng.uniform(0, cadence_s))
        route = _grid_walk(net, rng, node, 1)
        k, along, prev_node = 0, 0.0, node
        next_fix = t
        clock = t
        while next_fix < end:
            sid = route[k]
            seg = net.segment(sid)
            v_here = speed_for(sid, clock)
            remaining = seg.length_m - along
            t_leave = clock + remaining / v_here
            while next_fix <= t_leave and next_fix < end:
                pos_along = along + (next_fix - clock) * v_here
                a, b = seg.endpoints
                off = pos_along if prev_node == a else seg.length_m - pos_along
                p = seg.point_at(off)
                p = offset_point(p, float(rng.normal(0, gps_noise_m)), float(rng.normal(0, gps_noise_m)))
                records.append(TraceRecord(vid, p, day0_unix + next_fix, int(rng.integers(0, 2))))
                next_fix += cadence_s
            clock = t_leave
            along = 0.0
            a, b = seg.endpoints
            prev_node = b if prev_node == a else a
            # cabs near clusters tend to keep circling them
            nxt = [s for s in net.adjacency[prev_node] if s != sid]
            near = [s for s in nxt if s in hot]
            if near and rng.random() < 0.6:
                route.append(near[int(rng.integers(len(near)))])
            else:
                route.append(nxt[int(rng.integers(len(nxt)))])
            k += 1
    return TraceFixture(net, records, frozenset(hot), frozenset(slow))


def corridor_length_m(net: RoadNetwork) -> float:
    return math.fsum(net.segment(s).length_m for s in net.segments)
