"""Road network model: segments, point snapping and along-road distances.

Geometry is spherical (great circles on a sphere of radius ``EARTH_RADIUS_M``).
Points are handled internally as unit 3-vectors, which keeps cross-track and
along-track angles accurate down to sub-millimetre scale.
"""

from __future__ import annotations

import bisect
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6371008.8
DEFAULT_MAX_SNAP_M = 50.0
TYPICAL_LENGTH_RANGE_M = (10.0, 1000.0)
TIE_M = 1e-6  # snap distances closer than this count as equal

NodeId = int
SegmentId = int


class NetworkFormatError(ValueError):
    """Malformed network file or a network that breaks an invariant."""


class SnapRejected(ValueError):
    """The point is farther than the snapping tolerance from every road."""

    def __init__(self, deviation_m: float, max_snap_m: float):
        super().__init__(f"nearest road is {deviation_m:.2f} m away (max {max_snap_m:.2f} m)")
        self.deviation_m = deviation_m
        self.max_snap_m = max_snap_m


class Unreachable(ValueError):
    """No road path connects the two positions."""


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0) or math.isnan(self.lat):
            raise ValueError(f"latitude out of range: {self.lat}")
        if not (-180.0 <= self.lon <= 180.0) or math.isnan(self.lon):
            raise ValueError(f"longitude out of range: {self.lon}")


def to_vec(p: GeoPoint) -> np.ndarray:
    la, lo = math.radians(p.lat), math.radians(p.lon)
    c = math.cos(la)
    return np.array([c * math.cos(lo), c * math.sin(lo), math.sin(la)])


def from_vec(v: np.ndarray) -> GeoPoint:
    x, y, z = (float(c) for c in v)
    lat = math.degrees(math.atan2(z, math.hypot(x, y)))
    lon = math.degrees(math.atan2(y, x))
    return GeoPoint(max(-90.0, min(90.0, lat)), max(-180.0, min(180.0, lon)))


def _angle(u: np.ndarray, v: np.ndarray) -> float:
    # u x (v - u) keeps full precision when u and v are nearly parallel
    return math.atan2(float(np.linalg.norm(np.cross(u, v - u))), float(np.dot(u, v)))


def great_circle_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters."""
    return _angle(to_vec(a), to_vec(b)) * EARTH_RADIUS_M


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Classic haversine formula; kept as an independent check of ``great_circle_m``."""
    p1, p2 = math.radians(a.lat), math.radians(b.lat)
    dp, dl = p2 - p1, math.radians(b.lon - a.lon)
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def _slerp(a: np.ndarray, b: np.ndarray, frac: float) -> np.ndarray:
    theta = _angle(a, b)
    if theta < 1e-15:
        return a.copy()
    s = math.sin(theta)
    v = math.sin((1 - frac) * theta) / s * a + math.sin(frac * theta) / s * b
    return v / np.linalg.norm(v)


def offset_point(origin: GeoPoint, north_m: float, east_m: float) -> GeoPoint:
    """Point displaced from ``origin`` by small local north/east offsets (meters)."""
    dlat = math.degrees(north_m / EARTH_RADIUS_M)
    dlon = math.degrees(east_m / (EARTH_RADIUS_M * math.cos(math.radians(origin.lat))))
    return GeoPoint(origin.lat + dlat, origin.lon + dlon)


@dataclass(frozen=True)
class RoadSegment:
    id: SegmentId
    polyline: tuple[GeoPoint, ...]
    endpoints: tuple[NodeId, NodeId]
    leg_lengths: tuple[float, ...] = field(repr=False)
    cumulative: tuple[float, ...] = field(repr=False)

    @classmethod
    def build(cls, seg_id: SegmentId, polyline: Sequence[GeoPoint], node_a: NodeId, node_b: NodeId):
        if len(polyline) < 2:
            raise NetworkFormatError(f"segment {seg_id}: polyline needs at least 2 points")
        legs = tuple(great_circle_m(p, q) for p, q in zip(polyline[:-1], polyline[1:]))
        cum = [0.0]
        for leg in legs:
            cum.append(cum[-1] + leg)
        return cls(seg_id, tuple(polyline), (node_a, node_b), legs, tuple(cum))

    @property
    def length_m(self) -> float:
        return self.cumulative[-1]

    @property
    def midpoint(self) -> GeoPoint:
        return self.point_at(self.length_m / 2)

    def point_at(self, offset_m: float) -> GeoPoint:
        """Project a network position (offset along this segment) to a geographic point."""
        if not (-1e-9 <= offset_m <= self.length_m + 1e-9):
            raise ValueError(f"offset {offset_m} outside segment {self.id} [0, {self.length_m}]")
        offset_m = min(max(offset_m, 0.0), self.length_m)
        i = bisect.bisect_right(self.cumulative, offset_m) - 1
        i = min(max(i, 0), len(self.leg_lengths) - 1)
        leg = self.leg_lengths[i]
        frac = 0.0 if leg == 0 else (offset_m - self.cumulative[i]) / leg
        a, b = to_vec(self.polyline[i]), to_vec(self.polyline[i + 1])
        return from_vec(_slerp(a, b, min(max(frac, 0.0), 1.0)))


@dataclass(frozen=True)
class Snap:
    segment_id: SegmentId
    offset_m: float
    deviation_m: float

    @property
    def position(self) -> tuple[SegmentId, float]:
        return (self.segment_id, self.offset_m)


class RoadNetwork:
    """Immutable set of connected road segments.

    Shortest-path rows are computed lazily per source node and cached; the
    cache is the only mutable state and does not change any answer.
    """

    _CELL_DEG = 0.005

    def __init__(self, nodes: dict[NodeId, GeoPoint], segments: Iterable[RoadSegment]):
        self.nodes = dict(nodes)
        self.segments: dict[SegmentId, RoadSegment] = {}
        for seg in segments:
            if seg.id in self.segments:
                raise NetworkFormatError(f"duplicate segment id {seg.id}")
            self.segments[seg.id] = seg
        self._validate()
        adj: dict[NodeId, list[SegmentId]] = {n: [] for n in self.nodes}
        for sid in sorted(self.segments):
            a, b = self.segments[sid].endpoints
            adj[a].append(sid)
            if b != a:
                adj[b].append(sid)
        self.adjacency: dict[NodeId, tuple[SegmentId, ...]] = {n: tuple(v) for n, v in adj.items()}
        self._node_ids = sorted(self.nodes)
        self._node_index = {n: i for i, n in enumerate(self._node_ids)}
        self._build_graph()
        self._build_leg_index()
        self._rows: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _validate(self):
        lo, hi = TYPICAL_LENGTH_RANGE_M
        for sid, seg in self.segments.items():
            a, b = seg.endpoints
            for n in (a, b):
                if n not in self.nodes:
                    raise NetworkFormatError(f"segment {sid}: unknown node {n}")
            if seg.length_m <= 0:
                raise NetworkFormatError(f"segment {sid}: zero length")
            if great_circle_m(seg.polyline[0], self.nodes[a]) > 1.0 or great_circle_m(
                seg.polyline[-1], self.nodes[b]
            ) > 1.0:
                raise NetworkFormatError(f"segment {sid}: polyline does not start/end at its nodes")
            if not lo <= seg.length_m <= hi:
                warnings.warn(f"segment {sid} length {seg.length_m:.1f} m outside [{lo}, {hi}] m", stacklevel=3)

    def _build_graph(self):
        n = len(self._node_ids)
        best: dict[tuple[int, int], float] = {}
        self._edge_segment: dict[tuple[int, int], SegmentId] = {}
        for sid in sorted(self.segments):
            seg = self.segments[sid]
            i, j = (self._node_index[x] for x in seg.endpoints)
            if i == j:
                continue
            key = (min(i, j), max(i, j))
            if key not in best or seg.length_m < best[key]:
                best[key] = seg.length_m
                self._edge_segment[key] = sid
        rows, cols, w = [], [], []
        for (i, j), length in best.items():
            rows += [i, j]
            cols += [j, i]
            w += [length, length]
        self._graph = csr_matrix((w, (rows, cols)), shape=(n, n))

    def _build_leg_index(self):
        a_list, b_list, seg_list, start_list, len_list = [], [], [], [], []
        for sid in sorted(self.segments):
            seg = self.segments[sid]
            for k, leg in enumerate(seg.leg_lengths):
                if leg <= 0:
                    continue
                a_list.append(to_vec(seg.polyline[k]))
                b_list.append(to_vec(seg.polyline[k + 1]))
                seg_list.append(sid)
                start_list.append(seg.cumulative[k])
                len_list.append(leg)
        self._A = np.array(a_list)
        self._B = np.array(b_list)
        normal = np.cross(self._A, self._B - self._A)
        self._N = normal / np.linalg.norm(normal, axis=1)[:, None]
        self._leg_seg = np.array(seg_list, dtype=np.int64)
        self._leg_start = np.array(start_list)
        self._leg_len = np.array(len_list)
        self._leg_theta = self._leg_len / EARTH_RADIUS_M

        self._cells: dict[tuple[int, int], list[int]] = {}
        c = self._CELL_DEG
        for k, sid in enumerate(seg_list):
            seg = self.segments[sid]
            p, q = from_vec(self._A[k]), from_vec(self._B[k])
            lat0, lat1 = sorted((p.lat, q.lat))
            lon0, lon1 = sorted((p.lon, q.lon))
            for ci in range(math.floor(lat0 / c), math.floor(lat1 / c) + 1):
                for cj in range(math.floor(lon0 / c), math.floor(lon1 / c) + 1):
                    self._cells.setdefault((ci, cj), []).append(k)
        self._cells_np = {key: np.array(v, dtype=np.int64) for key, v in self._cells.items()}

    # -- queries ---------------------------------------------------------

    def __len__(self) -> int:
        return len(self.segments)

    def segment(self, sid: SegmentId) -> RoadSegment:
        return self.segments[sid]

    def point_at(self, position: tuple[SegmentId, float]) -> GeoPoint:
        sid, off = position
        return self.segments[sid].point_at(off)

    def neighbors(self, sid: SegmentId) -> set[SegmentId]:
        """Segments sharing an endpoint with ``sid`` (excluding itself)."""
        a, b = self.segments[sid].endpoints
        return (set(self.adjacency[a]) | set(self.adjacency[b])) - {sid}

    def _candidate_legs(self, p: GeoPoint, radius_m: float) -> np.ndarray:
        c = self._CELL_DEG
        margin_lat = math.degrees(radius_m / EARTH_RADIUS_M) + 1e-7
        coslat = max(math.cos(math.radians(p.lat)), 1e-6)
        margin_lon = margin_lat / coslat
        i0, i1 = math.floor((p.lat - margin_lat) / c), math.floor((p.lat + margin_lat) / c)
        j0, j1 = math.floor((p.lon - margin_lon) / c), math.floor((p.lon + margin_lon) / c)
        parts = [
            self._cells_np[(i, j)]
            for i in range(i0, i1 + 1)
            for j in range(j0, j1 + 1)
            if (i, j) in self._cells_np
        ]
        if not parts:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(parts))

    def _leg_distances(self, pv: np.ndarray, legs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        A, B, N = self._A[legs], self._B[legs], self._N[legs]
        s = np.clip(N @ pv, -1.0, 1.0)
        proj = pv[None, :] - s[:, None] * N
        norms = np.linalg.norm(proj, axis=1)
        proj = proj / np.where(norms > 0, norms, 1.0)[:, None]
        along = np.arctan2(np.einsum("ij,ij->i", np.cross(A, proj - A), N), np.einsum("ij,ij->i", A, proj))
        theta = self._leg_theta[legs]
        inside = (along >= 0) & (along <= theta)
        dev_in = np.abs(np.arcsin(s))
        d_a = np.arctan2(np.linalg.norm(np.cross(A, pv - A), axis=1), A @ pv)
        d_b = np.arctan2(np.linalg.norm(np.cross(B, pv - B), axis=1), B @ pv)
        dev = np.where(inside, dev_in, np.minimum(d_a, d_b)) * EARTH_RADIUS_M
        off_leg = np.where(inside, along, np.where(d_a <= d_b, 0.0, theta)) * EARTH_RADIUS_M
        off = np.minimum(self._leg_start[legs] + np.clip(off_leg, 0.0, None), self._leg_start[legs] + self._leg_len[legs])
        return dev, off

    def snap(self, point: GeoPoint, max_snap_m: float = DEFAULT_MAX_SNAP_M) -> Snap:
        """Nearest segment by perpendicular great-circle distance.

        Ties (within ``TIE_M``) go to the lowest segment id. Raises
        ``SnapRejected`` when the nearest road is beyond ``max_snap_m``.
        """
        if not self.segments:
            raise ValueError("empty network")
        pv = to_vec(point)
        legs = self._candidate_legs(point, max_snap_m)
        if legs.size:
            dev, off = self._leg_distances(pv, legs)
            ok = dev <= max_snap_m
            if ok.any():
                return self._pick(legs[ok], dev[ok], off[ok])
        legs = np.arange(len(self._leg_seg))
        dev, off = self._leg_distances(pv, legs)
        best = float(dev.min())
        if best <= max_snap_m:
            # cell index missed a leg (polar or antimeridian edge case)
            return self._pick(legs, dev, off)
        raise SnapRejected(best, max_snap_m)

    def _pick(self, legs, dev, off) -> Snap:
        dmin = dev.min()
        tied = dev <= dmin + TIE_M
        segs = self._leg_seg[legs][tied]
        sid = int(segs.min())
        pick = np.flatnonzero(tied)[segs == sid]
        k = pick[np.argmin(dev[tied][segs == sid])]
        seg = self.segments[sid]
        return Snap(sid, float(min(max(off[k], 0.0), seg.length_m)), float(dev[k]))

    # -- distances -------------------------------------------------------

    def _row(self, node: NodeId) -> tuple[np.ndarray, np.ndarray]:
        i = self._node_index[node]
        row = self._rows.get(i)
        if row is None:
            dist, pred = dijkstra(self._graph, directed=False, indices=i, return_predecessors=True)
            row = (dist, pred)
            self._rows[i] = row
        return row

    def node_distance(self, a: NodeId, b: NodeId) -> float:
        return float(self._row(a)[0][self._node_index[b]])

    def node_distances_from(self, position: tuple[SegmentId, float]) -> np.ndarray:
        """Shortest road distance from a position to every node (indexed like ``node_order``)."""
        sid, off = position
        seg = self.segments[sid]
        a, b = seg.endpoints
        da, _ = self._row(a)
        db, _ = self._row(b)
        return np.minimum(off + da, (seg.length_m - off) + db)

    @property
    def node_order(self) -> list[NodeId]:
        return self._node_ids

    def road_distance(self, a: tuple[SegmentId, float], b: tuple[SegmentId, float]) -> float:
        """Shortest along-road distance between two network positions (meters)."""
        (s1, o1), (s2, o2) = a, b
        seg2 = self.segments[s2]
        best = abs(o1 - o2) if s1 == s2 else math.inf
        to_nodes = self.node_distances_from(a)
        n_a, n_b = (self._node_index[x] for x in seg2.endpoints)
        best = min(best, float(to_nodes[n_a]) + o2, float(to_nodes[n_b]) + seg2.length_m - o2)
        if math.isinf(best):
            raise Unreachable(f"no road path from segment {s1} to segment {s2}")
        return best

    def shortest_route(self, start: NodeId, end: NodeId) -> list[SegmentId]:
        """Segment sequence of a shortest path between two nodes."""
        dist, pred = self._row(start)
        j = self._node_index[end]
        if math.isinf(dist[j]):
            raise Unreachable(f"node {end} unreachable from {start}")
        nodes = [j]
        while nodes[-1] != self._node_index[start]:
            nodes.append(int(pred[nodes[-1]]))
        nodes.reverse()
        return [self._edge_segment[(min(u, v), max(u, v))] for u, v in zip(nodes[:-1], nodes[1:])]


def route_is_connected(net: RoadNetwork, route: Sequence[SegmentId]) -> bool:
    """True when consecutive segments share an endpoint and can be traversed in order."""
    return route_nodes(net, route) is not None


def route_nodes(net: RoadNetwork, route: Sequence[SegmentId]) -> list[NodeId] | None:
    """Node sequence visited by a route, or None if the route is broken.

    A single-segment route is read in its stored direction.
    """
    if not route:
        return None
    if any(s not in net.segments for s in route):
        return None
    first = net.segments[route[0]].endpoints
    if len(route) == 1:
        return [first[0], first[1]]
    for start in (first[0], first[1]):
        nodes = [start]
        cur = start
        ok = True
        for sid in route:
            a, b = net.segments[sid].endpoints
            if cur == a:
                cur = b
            elif cur == b:
                cur = a
            else:
                ok = False
                break
            nodes.append(cur)
        if ok:
            return nodes
    return None


# -- file format ---------------------------------------------------------


def parse_network(lines: Iterable[str], source: str = "<network>") -> RoadNetwork:
    nodes: dict[NodeId, GeoPoint] = {}
    segs: list[RoadSegment] = []
    seen: set[SegmentId] = set()
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "N" and len(parts) == 4:
                nid = int(parts[1])
                if nid in nodes:
                    raise NetworkFormatError(f"duplicate node id {nid}")
                nodes[nid] = GeoPoint(float(parts[2]), float(parts[3]))
            elif parts[0] == "S" and len(parts) == 5:
                sid, na, nb = int(parts[1]), int(parts[2]), int(parts[3])
                if sid in seen:
                    raise NetworkFormatError(f"duplicate segment id {sid}")
                seen.add(sid)
                pts = []
                for pair in parts[4].split(";"):
                    lat, lon = pair.split(",")
                    pts.append(GeoPoint(float(lat), float(lon)))
                segs.append(RoadSegment.build(sid, pts, na, nb))
            else:
                raise NetworkFormatError(f"unrecognized record {parts[0]!r}")
        except (ValueError, IndexError) as exc:
            raise NetworkFormatError(f"{source}:{lineno}: {exc}") from exc
    return RoadNetwork(nodes, segs)


def load_network(path: str | Path) -> RoadNetwork:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        return parse_network(fh, source=str(path))


def format_network(net: RoadNetwork) -> str:
    out = ["# road network: N <node_id> <lat> <lon> / S <seg_id> <node_a> <node_b> <lat,lon;...>"]
    for nid in sorted(net.nodes):
        p = net.nodes[nid]
        out.append(f"N {nid} {p.lat!r} {p.lon!r}")
    for sid in sorted(net.segments):
        seg = net.segments[sid]
        poly = ";".join(f"{p.lat!r},{p.lon!r}" for p in seg.polyline)
        out.append(f"S {sid} {seg.endpoints[0]} {seg.endpoints[1]} {poly}")
    return "\n".join(out) + "\n"


def save_network(net: RoadNetwork, path: str | Path) -> None:
    Path(path).write_text(format_network(net), encoding="utf-8")


def build_network(nodes: dict[NodeId, GeoPoint], edges: Iterable[tuple[SegmentId, NodeId, NodeId]]) -> RoadNetwork:
    """Network of straight segments between the given nodes."""
    segs = [RoadSegment.build(sid, [nodes[a], nodes[b]], a, b) for sid, a, b in edges]
    return RoadNetwork(nodes, segs)
