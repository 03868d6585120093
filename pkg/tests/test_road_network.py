import math
import warnings

import pytest
from hypothesis import given, strategies as st

from chokepoint import synth
from chokepoint.road_network import (
    EARTH_RADIUS_M,
    GeoPoint,
    NetworkFormatError,
    RoadSegment,
    SnapRejected,
    Unreachable,
    build_network,
    format_network,
    great_circle_m,
    haversine_m,
    load_network,
    offset_point,
    parse_network,
    route_is_connected,
    save_network,
)

TWO_SEGMENTS = """\
# straight corridor
N 0 12.9716 77.5946
N 1 12.9725 77.5946
N 2 12.9734 77.5946
S 0 0 1 12.9716,77.5946;12.9725,77.5946
S 1 1 2 12.9725,77.5946;12.9734,77.5946
"""

lat = st.floats(-80, 80)
lon = st.floats(-179, 179)


def positions(net):
    sids = sorted(net.segments)
    return st.tuples(st.sampled_from(sids), st.floats(0.0, 1.0)).map(
        lambda p: (p[0], p[1] * net.segment(p[0]).length_m))


class TestGeometry:
    def test_geopoint_ranges(self):
        with pytest.raises(ValueError):
            GeoPoint(91.0, 0.0)
        with pytest.raises(ValueError):
            GeoPoint(0.0, -180.5)
        with pytest.raises(ValueError):
            GeoPoint(float("nan"), 0.0)

    def test_one_degree_of_latitude(self):
        d = great_circle_m(GeoPoint(0, 0), GeoPoint(1, 0))
        assert d == pytest.approx(math.pi / 180 * EARTH_RADIUS_M, rel=1e-12)

    @given(lat, lon, lat, lon)
    def test_vector_and_haversine_routes_agree(self, a1, o1, a2, o2):
        a, b = GeoPoint(a1, o1), GeoPoint(a2, o2)
        assert great_circle_m(a, b) == pytest.approx(haversine_m(a, b), rel=1e-9, abs=1e-6)

    @given(st.floats(-60, 60), st.floats(-500, 500), st.floats(-500, 500))
    def test_offset_point_distance(self, la, north, east):
        o = GeoPoint(la, 10.0)
        assert great_circle_m(o, offset_point(o, north, east)) == pytest.approx(math.hypot(north, east), rel=1e-4, abs=1e-6)


class TestLoad:
    def test_two_segment_corridor(self, tmp_path):
        p = tmp_path / "net.txt"
        p.write_text(TWO_SEGMENTS)
        net = load_network(p)
        assert len(net.segments) == 2
        assert len(net.nodes) == 3
        assert net.adjacency[1] == (0, 1)

    def test_duplicate_segment_names_the_id(self):
        text = TWO_SEGMENTS + "S 1 0 2 12.9716,77.5946;12.9734,77.5946\n"
        with pytest.raises(NetworkFormatError, match="duplicate segment id 1"):
            parse_network(text.splitlines())

    def test_parse_error_carries_line_number(self):
        text = TWO_SEGMENTS.replace("N 2 12.9734", "N 2 north")
        with pytest.raises(NetworkFormatError, match=r":4:"):
            parse_network(text.splitlines())

    def test_polyline_must_meet_its_nodes(self):
        text = TWO_SEGMENTS.replace("S 1 1 2 12.9725", "S 1 1 2 12.9800")
        with pytest.raises(NetworkFormatError, match="segment 1"):
            parse_network(text.splitlines())

    def test_unknown_node(self):
        text = TWO_SEGMENTS.replace("S 1 1 2", "S 1 1 9")
        with pytest.raises(NetworkFormatError, match="unknown node 9"):
            parse_network(text.splitlines())

    def test_zero_length_segment(self):
        text = "N 0 1.0 1.0\nN 1 1.0 1.0\nS 0 0 1 1.0,1.0;1.0,1.0\n"
        with pytest.raises(NetworkFormatError, match="zero length"):
            parse_network(text.splitlines())

    def test_short_segment_warns(self):
        o = GeoPoint(0.0, 0.0)
        with pytest.warns(UserWarning, match="outside"):
            build_network({0: o, 1: offset_point(o, 5.0, 0.0)}, [(0, 0, 1)])

    def test_synthetic_grid_of_3300_segments(self, tmp_path):
        net = synth.grid_network(21, 81)
        path = tmp_path / "grid.txt"
        save_network(net, path)
        assert len(load_network(path).segments) == 3300

    def test_format_round_trip(self, grid6):
        again = parse_network(format_network(grid6).splitlines())
        assert format_network(again) == format_network(grid6)

    def test_length_is_sum_of_legs(self):
        o = GeoPoint(37.0, -122.0)
        pts = [o, offset_point(o, 80, 0), offset_point(o, 80, 60), offset_point(o, 150, 60)]
        seg = RoadSegment.build(0, pts, 0, 1)
        legs = sum(great_circle_m(p, q) for p, q in zip(pts[:-1], pts[1:]))
        assert seg.length_m == pytest.approx(legs, rel=1e-6)
        assert seg.length_m == pytest.approx(80 + 60 + 70, abs=0.05)

    def test_adjacency_matches_endpoints(self, grid6):
        for nid, sids in grid6.adjacency.items():
            for sid in sids:
                assert nid in grid6.segment(sid).endpoints
        for sid, seg in grid6.segments.items():
            for nid in seg.endpoints:
                assert sid in grid6.adjacency[nid]


class TestSnap:
    def test_midpoint_snaps_onto_its_segment(self, corridor):
        seg = corridor.segment(42)
        s = corridor.snap(seg.midpoint)
        assert s.segment_id == 42
        assert s.offset_m == pytest.approx(seg.length_m / 2, abs=1e-6)
        assert s.deviation_m == pytest.approx(0.0, abs=1e-6)

    def test_shared_node_goes_to_lower_id(self, corridor):
        s = corridor.snap(corridor.nodes[5])
        assert s.segment_id == 4
        assert s.offset_m == pytest.approx(corridor.segment(4).length_m, abs=1e-6)

    @pytest.mark.parametrize("ids", [(5, 2), (2, 5)])
    def test_equidistant_branches_tie_to_lower_id(self, ids):
        o = GeoPoint(30.0, 40.0)
        nodes = {0: o, 1: offset_point(o, 100, 100), 2: offset_point(o, 100, -100)}
        net = build_network(nodes, [(ids[0], 0, 1), (ids[1], 0, 2)])
        s = net.snap(offset_point(o, 50, 0))
        assert s.segment_id == 2
        assert s.deviation_m == pytest.approx(50 / math.sqrt(2), rel=1e-3)

    def test_sixty_meters_off_is_rejected(self, corridor):
        p = offset_point(corridor.segment(10).midpoint, 0.0, 60.0)
        with pytest.raises(SnapRejected) as info:
            corridor.snap(p, max_snap_m=50.0)
        assert info.value.deviation_m == pytest.approx(60.0, abs=0.05)

    def test_perpendicular_deviation(self, corridor):
        s = corridor.snap(offset_point(corridor.segment(10).midpoint, 0.0, 30.0))
        assert s.segment_id == 10
        assert s.deviation_m == pytest.approx(30.0, abs=0.05)

    def test_beyond_the_end_measures_to_the_endpoint(self, corridor):
        end = corridor.nodes[len(corridor)]
        s = corridor.snap(offset_point(end, 30.0, 40.0), max_snap_m=100)
        assert s.segment_id == len(corridor) - 1
        assert s.deviation_m == pytest.approx(50.0, abs=0.05)

    @given(st.data())
    def test_snap_of_projection_is_identity(self, grid6, data):
        sid, off = data.draw(positions(grid6))
        length = grid6.segment(sid).length_m
        s = grid6.snap(grid6.point_at((sid, off)))
        assert s.deviation_m < 1e-6
        if 1.0 < off < length - 1.0:
            assert s.segment_id == sid
            assert s.offset_m == pytest.approx(off, abs=1e-6)


class TestRoadDistance:
    def test_identity(self, chain3):
        assert chain3.road_distance((1, 30.0), (1, 30.0)) == 0.0

    def test_same_segment(self, chain3):
        assert chain3.road_distance((1, 10.0), (1, 75.0)) == pytest.approx(65.0)

    def test_three_segment_chain(self, chain3):
        # 50 m to the end of segment 0, all of segment 1, 50 m into segment 2
        assert chain3.road_distance((0, 50.0), (2, 50.0)) == pytest.approx(200.0, abs=1e-6)

    def test_unreachable(self, two_islands):
        with pytest.raises(Unreachable):
            two_islands.road_distance((0, 10.0), (1, 10.0))

    def test_grid_detour(self, grid6):
        # opposite corners of a 200 m block: two sides
        a = (0, 0.0)  # node 0
        b = (1, 0.0)  # node 1
        assert grid6.road_distance(a, b) == pytest.approx(200.0, abs=1e-6)
        assert grid6.node_distance(0, 7) == pytest.approx(400.0, abs=0.01)

    @given(st.data())
    def test_symmetric(self, grid6, data):
        a, b = data.draw(positions(grid6)), data.draw(positions(grid6))
        assert grid6.road_distance(a, b) == pytest.approx(grid6.road_distance(b, a), abs=1e-6)

    @given(st.data())
    def test_triangle_inequality(self, grid6, data):
        a, b, c = (data.draw(positions(grid6)) for _ in range(3))
        rd = grid6.road_distance
        assert rd(a, c) <= rd(a, b) + rd(b, c) + 1e-6

    @given(st.data())
    def test_never_shorter_than_great_circle(self, grid6, data):
        a, b = data.draw(positions(grid6)), data.draw(positions(grid6))
        gc = great_circle_m(grid6.point_at(a), grid6.point_at(b))
        assert grid6.road_distance(a, b) >= gc - 1e-6

    def test_shortest_route_is_connected(self, grid6):
        route = grid6.shortest_route(0, 35)
        assert route_is_connected(grid6, route)
        total = sum(grid6.segment(s).length_m for s in route)
        assert total == pytest.approx(grid6.node_distance(0, 35))

    def test_disconnected_route(self, grid6):
        assert not route_is_connected(grid6, [0, 4])
        assert route_is_connected(grid6, [1, 0])


def test_no_warnings_for_typical_segments():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        synth.grid_network(4, 4, 200.0)
