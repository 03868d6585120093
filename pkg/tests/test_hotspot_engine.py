import io
import random
import statistics

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chokepoint import synth
from chokepoint.hotspot_engine import (
    BinStats,
    EngineConfig,
    HotspotEngine,
    Level,
    SpeedRejected,
    State,
    level_for,
    seed_hotspot,
    thresholds,
    time_bin,
    write_hotspots_csv,
)
from oracles import engine_replay, naive_replay, random_history

KMPH = 1 / 3.6
T8 = 8 * 3600.0
speeds = st.floats(0.0, 60.0, allow_nan=False)


def fill(eng, sid, t, values, spacing=1.0):
    for k, v in enumerate(values):
        eng.ingest(sid, v, t + k * spacing)
    eng.flush()


class TestTimeBins:
    @pytest.mark.parametrize("t,b", [(0, 0), (1799.9, 0), (1800, 1), (17 * 3600, 34), (86399, 47), (86400 + 60, 0)])
    def test_half_hour_bins(self, t, b):
        assert time_bin(t) == b


class TestWelford:
    @given(st.lists(speeds, min_size=1, max_size=200))
    def test_matches_full_recomputation(self, xs):
        b = BinStats()
        for x in xs:
            b.add(x)
        assert b.count == len(xs)
        assert b.mean == pytest.approx(statistics.fmean(xs), rel=1e-9, abs=1e-12)
        if len(xs) >= 2:
            assert b.variance == pytest.approx(statistics.variance(xs), rel=1e-9, abs=1e-9)
        else:
            assert b.variance is None

    @given(st.lists(speeds, max_size=50), st.lists(speeds, max_size=50))
    def test_merge_equals_concatenation(self, xs, ys):
        a, b, both = BinStats(), BinStats(), BinStats()
        for x in xs:
            a.add(x)
            both.add(x)
        for y in ys:
            b.add(y)
            both.add(y)
        m = a.merged(b)
        assert m.count == both.count
        assert m.mean == pytest.approx(both.mean, rel=1e-9, abs=1e-12)
        assert m.m2 == pytest.approx(both.m2, rel=1e-9, abs=1e-9)

    def test_normalized_deviation(self):
        b = BinStats()
        for x in (10.0, 10.0, 10.0):
            b.add(x)
        assert b.nd == 0.0


class TestIngest:
    def test_first_sample(self):
        eng = HotspotEngine()
        eng.ingest(1, 10.0, T8)
        st_ = eng.segments[1]
        b = st_.bins[time_bin(T8)]
        assert (b.count, b.mean, st_.v_max) == (1, 10.0, 10.0)

    def test_two_point_mean(self):
        eng = HotspotEngine()
        eng.ingest(1, 10.0, T8)
        eng.ingest(1, 20.0, T8 + 5)
        b = eng.segments[1].bins[time_bin(T8)]
        assert b.mean == 15.0
        assert eng.segments[1].v_max == 20.0

    def test_glitch_cap(self):
        eng = HotspotEngine()
        eng.ingest(1, 10.0, T8)
        before = eng.dumps()
        with pytest.raises(SpeedRejected):
            eng.ingest(1, 80.0, T8 + 1)
        assert eng.dumps() == before

    def test_negative_speed(self):
        with pytest.raises(ValueError):
            HotspotEngine().ingest(0, -1.0, T8)

    @given(st.lists(speeds, min_size=1, max_size=60))
    def test_v_max_never_decreases(self, xs):
        eng = HotspotEngine()
        last = 0.0
        for k, x in enumerate(xs):
            eng.ingest(0, x, T8 + k)
            assert eng.segments[0].v_max >= last
            last = eng.segments[0].v_max
        assert last == max(xs)


class TestClassify:
    def test_thresholds_are_eighths_quarters_and_three_eighths(self):
        th = thresholds(16.0)
        assert (th.t_hot, th.t_med, th.t_low) == (2.0, 4.0, 6.0)

    def test_slow_bin_is_high(self):
        # v_max 60 km/h gives t_hot 7.5 km/h
        assert level_for(6 * KMPH, 60 * KMPH) is Level.HIGH

    def test_fast_bin_is_none(self):
        # t_low is 22.5 km/h
        assert level_for(30 * KMPH, 60 * KMPH) is Level.NONE

    def test_boundaries_go_to_more_congested_class(self):
        th = thresholds(16.0)
        assert level_for(th.t_hot, 16.0) is Level.HIGH
        assert level_for(th.t_med, 16.0) is Level.MEDIUM
        assert level_for(th.t_low, 16.0) is Level.LOW
        assert level_for(th.t_low + 1e-9, 16.0) is Level.NONE

    def test_insufficient_data(self):
        eng = HotspotEngine()
        fill(eng, 0, T8 - 1800, [16.0])
        fill(eng, 0, T8, [1.0] * 4)
        assert eng.classify(0, time_bin(T8)) == (Level.NONE, True)
        fill(eng, 0, T8 + 10, [1.0])
        assert eng.classify(0, time_bin(T8)) == (Level.HIGH, False)

    @given(st.floats(0.5, 60), st.floats(0, 60), st.floats(0, 60))
    def test_monotone_in_mean(self, v_max, m1, m2):
        lo, hi = sorted((m1, m2))
        assert level_for(lo, v_max) >= level_for(hi, v_max)


class TestStateMachine:
    def test_three_slow_samples_raise_possible_with_expedite(self):
        eng = HotspotEngine()
        fill(eng, 0, T8 - 600, [16.0])
        eng.ingest(0, 1.0, T8)
        eng.ingest(0, 1.0, T8 + 40)
        assert eng.flush() == []
        eng.ingest(0, 1.0, T8 + 110)
        trs = eng.flush()
        assert [(tr.old, tr.new) for tr in trs] == [(State.UNCONGESTED, State.POSSIBLE)]
        assert trs[0].expedite

    def test_confirmation_after_thirty_slow_samples(self):
        eng = HotspotEngine()
        fill(eng, 0, T8 - 600, [16.0])
        fill(eng, 0, T8, [1.0] * 29, spacing=10)
        assert eng.segments[0].state is State.POSSIBLE
        fill(eng, 0, T8 + 290, [1.0])
        assert eng.segments[0].state is State.HOTSPOT
        assert eng.segments[0].level is Level.HIGH

    def test_possible_expires_without_samples(self):
        eng = HotspotEngine()
        fill(eng, 0, T8 - 900, [16.0])
        fill(eng, 0, T8, [1.0] * 3, spacing=10)
        assert eng.segments[0].state is State.POSSIBLE
        eng.flush(T8 + 20 + 599)
        assert eng.segments[0].state is State.POSSIBLE
        trs = eng.flush(T8 + 20 + 601)
        assert eng.segments[0].state is State.UNCONGESTED
        assert trs[0].new is State.UNCONGESTED

    def test_one_glitch_does_not_trigger(self):
        eng = HotspotEngine()
        fill(eng, 0, T8, [16.0, 15.0, 0.5, 14.0, 16.0])
        assert eng.segments[0].state is State.UNCONGESTED

    def test_recovery_needs_fresh_fast_samples(self):
        eng = HotspotEngine()
        seed_hotspot(eng, 0, T8 + 600)
        # the last seeded crawl sample already counts as fresh
        fill(eng, 0, T8 + 601, [15.0] * 28)
        assert eng.segments[0].state is State.HOTSPOT
        fill(eng, 0, T8 + 640, [15.0])
        assert eng.segments[0].state is State.UNCONGESTED

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(11)
        cfg = EngineConfig(min_samples=3, k_possible=2, window_samples=6, n_confirm=6)
        for _ in range(60):
            events = random_history(rng, int(rng.integers(20, 120)))
            got, trs = engine_replay(events, cfg)
            assert got == naive_replay(events, cfg)
            assert not any(tr.old is State.UNCONGESTED and tr.new is State.HOTSPOT for tr in trs)


class TestSlowRoads:
    def _segment(self, v_max, values):
        eng = HotspotEngine()
        fill(eng, 0, T8 - 1800, [v_max])
        fill(eng, 0, T8, values)
        return eng

    def test_speed_bump_road_is_not_a_hotspot(self):
        # v_max 12 km/h, mean 10 km/h, ND 0.1
        a = 0.1 * (5 / 6) ** 0.5  # alternating +-a has sample sd 0.1 over six values
        vals = [10 * KMPH * (1 + a * z) for z in (-1, 1, -1, 1, -1, 1)]
        eng = self._segment(12 * KMPH, vals)
        b = time_bin(T8)
        assert eng.segments[0].bins[b].nd == pytest.approx(0.1, rel=1e-9)
        assert not eng.separate_slow_roads(0, b)

    def test_slow_bin_below_half_of_v_max_is_genuine(self):
        vals = [6 * KMPH * (1 + 0.9 * z) for z in (-1.0, 1.0, -1.0, 1.0, -1.0, 1.0)]
        eng = self._segment(60 * KMPH, vals)
        b = time_bin(T8)
        assert eng.segments[0].bins[b].nd == pytest.approx(0.9 * (6 / 5) ** 0.5, rel=1e-6)
        assert eng.separate_slow_roads(0, b)

    def test_data_floor(self):
        eng = self._segment(60 * KMPH, [1.0] * 3)
        assert not eng.separate_slow_roads(0, time_bin(T8))


class TestActiveHotspots:
    @pytest.fixture
    def net(self):
        return synth.corridor_network(60, 100.0)

    def _history(self, eng, sid, means):
        for b, m in means.items():
            fill(eng, sid, b * 1800 + 60, [m] * 5)

    def test_empty(self, net):
        assert HotspotEngine(net).active_hotspots(T8) == []

    def test_correlated_neighbours_collapse_to_lower_id(self, net):
        eng = HotspotEngine(net)
        for sid in (7, 8):
            self._history(eng, sid, {10: 14.0, 11: 9.0, 12: 4.0})
            seed_hotspot(eng, sid, T8)
        assert eng.correlation(7, 8) == pytest.approx(1.0)
        assert [h.segment for h in eng.active_hotspots(T8)] == [7]

    def test_uncorrelated_neighbours_both_reported(self, net):
        eng = HotspotEngine(net)
        self._history(eng, 7, {10: 14.0, 11: 9.0, 12: 4.0})
        self._history(eng, 8, {10: 4.0, 11: 9.0, 12: 14.0})
        for sid in (7, 8):
            seed_hotspot(eng, sid, T8)
        assert [h.segment for h in eng.active_hotspots(T8)] == [7, 8]

    def test_far_apart_hotspots(self, net):
        eng = HotspotEngine(net)
        for sid in (40, 3):
            self._history(eng, sid, {10: 14.0, 11: 9.0, 12: 4.0})
            seed_hotspot(eng, sid, T8)
        hs = eng.active_hotspots(T8)
        assert [h.segment for h in hs] == [3, 40]
        assert all(h.d_in == 2000.0 and h.level is Level.HIGH for h in hs)
        assert hs[0].anchor == net.segment(3).midpoint

    def test_output_satisfies_hotspot_definition(self, net):
        eng = HotspotEngine(net)
        for sid in (2, 30, 31):
            seed_hotspot(eng, sid, T8)
        for h in eng.active_hotspots(T8):
            st_ = eng.segments[h.segment]
            assert st_.bins[h.bin].mean <= 0.25 / 2 * st_.v_max
            assert h.level is Level.HIGH

    def test_record_level_follows_the_published_bin(self, net):
        # confirmed at 08:00, then a later bin with moderate speeds moves the stored level
        eng = HotspotEngine(net)
        seed_hotspot(eng, 4, T8)
        fill(eng, 4, T8 + 3600, [4.0] * 5)
        assert eng.segments[4].level is not Level.HIGH
        (rec,) = eng.active_hotspots(T8 + 60)
        assert rec.bin == time_bin(T8) and rec.level is Level.HIGH

    def test_same_time_arrivals_commute(self, net):
        rng = random.Random(5)
        batches = []
        t = T8
        for _ in range(80):
            batches.append((t, [(rng.choice([4, 5, 6]), rng.choice([0.5, 1.0, 15.0, 16.0])) for _ in range(4)]))
            t += rng.choice([5.0, 10.0, 30.0])
        outcomes = set()
        for trial in range(6):
            eng = HotspotEngine(net, EngineConfig(n_confirm=8))
            for t, batch in batches:
                batch = batch[:]
                random.Random(trial).shuffle(batch)
                for sid, v in batch:
                    eng.ingest(sid, v, t)
                eng.flush(t)
            states = tuple((sid, s.state, s.level) for sid, s in sorted(eng.segments.items()))
            outcomes.add((states, tuple(eng.active_hotspots(t))))
        assert len(outcomes) == 1


class TestQuery:
    @pytest.fixture
    def net(self):
        return synth.corridor_network(3, 300.0)

    def test_crossing_time(self, net):
        eng = HotspotEngine(net)
        fill(eng, 1, T8, [2.0] * 5)
        q = eng.query(net.segment(1).midpoint, T8 + 10)
        assert q.segment == 1
        assert q.crossing_time_s == pytest.approx(150.0, rel=1e-9)

    def test_empty_bin(self, net):
        q = HotspotEngine(net).query(net.segment(1).midpoint, T8)
        assert q.insufficient and q.mean_speed is None and q.crossing_time_s is None

    def test_level_echoed(self, net):
        eng = HotspotEngine(net)
        seed_hotspot(eng, 1, T8)
        assert eng.query(net.segment(1).midpoint, T8 + 60).level is Level.HIGH

    def test_unsnappable(self, net):
        from chokepoint.road_network import offset_point
        assert HotspotEngine(net).query(offset_point(net.segment(1).midpoint, 0, 500), T8) is None

    def test_stationary_traffic_uses_floor_speed(self, net):
        eng = HotspotEngine(net)
        fill(eng, 1, T8, [0.0] * 5)
        assert eng.query(net.segment(1).midpoint, T8).crossing_time_s == pytest.approx(3000.0, rel=1e-9)


class TestCheckpoint:
    def test_round_trip_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(3)
        eng = HotspotEngine(config=EngineConfig(n_confirm=6), d_in_overrides={4: 1500.0})
        for k in range(300):
            eng.ingest(int(rng.integers(0, 5)), float(rng.uniform(0, 20)), T8 + 7 * k)
            eng.flush()
        path = tmp_path / "state.csv"
        eng.dump(path)
        again = HotspotEngine.load(path)
        assert again.dumps() == path.read_text()
        assert again.config == eng.config

    def test_rejects_foreign_file(self):
        with pytest.raises(ValueError, match="header"):
            HotspotEngine.loads("segment,bin\n")

    def test_hotspot_csv_columns(self):
        net = synth.corridor_network(5, 100.0)
        eng = HotspotEngine(net)
        seed_hotspot(eng, 2, T8)
        buf = io.StringIO()
        write_hotspots_csv(eng.active_hotspots(T8), buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "segment_id,level,bin,lat,lon,d_in_m"
        assert lines[1].startswith("2,high,16,")
