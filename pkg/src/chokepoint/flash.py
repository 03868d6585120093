"""Flash-congestion buildup and detection time.

Fluid model: after an incident at t = 0, vehicles pile up on the segment
at rate ``lambda_a - lambda_d`` and each reports once every ``s_current``
minutes, so the server has received ``(lambda_a - lambda_d) t^2 / (2 S)``
samples by time t. ``simulate_incident`` checks this against a seeded
Poisson arrival/departure run fed through the hotspot engine.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np

from .hotspot_engine import BIN_SECONDS, EngineConfig, HotspotEngine, State, thresholds


class AlertMode(str, Enum):
    REGULAR = "regular"
    EXPEDITED = "expedited"


@dataclass(frozen=True)
class IncidentParams:
    lambda_a: float
    lambda_d: float = 0.0
    s_current: float = 2.0
    n_required: int = 30

    def __post_init__(self):
        if not self.lambda_a >= self.lambda_d >= 0:
            raise ValueError("need lambda_a >= lambda_d >= 0")
        if not self.s_current > 0:
            raise ValueError("s_current must be positive")
        if self.n_required < 1:
            raise ValueError("n_required must be >= 1")

    @property
    def rate_diff(self) -> float:
        return self.lambda_a - self.lambda_d


def vehicles_at(t: float, p: IncidentParams) -> float:
    if t < 0:
        raise ValueError("t must be non-negative")
    return p.rate_diff * t


def samples_received(t: float, p: IncidentParams) -> float:
    if t < 0:
        raise ValueError("t must be non-negative")
    return p.rate_diff * t * t / (2.0 * p.s_current)


def detection_time(p: IncidentParams) -> float:
    """Minutes until ``n_required`` samples have reached the server."""
    if p.rate_diff <= 0:
        raise ValueError("no buildup when lambda_a == lambda_d; detection time is unbounded")
    return math.sqrt(2.0 * p.n_required * p.s_current / p.rate_diff)


class DetectionTimeout(RuntimeError):
    def __init__(self, horizon_min: float, partial_count: int):
        super().__init__(f"no detection within {horizon_min} min ({partial_count} samples received)")
        self.horizon_min = horizon_min
        self.partial_count = partial_count


@dataclass(frozen=True)
class IncidentRun:
    mode: AlertMode
    seed: int
    rate_diff: float
    detect_min: float | None
    first_report_min: float | None
    samples: int
    closed_form_min: float | None


# incident starts at a bin boundary so the confirming bin holds only incident samples
INCIDENT_T0_S = 16 * BIN_SECONDS
FREE_FLOW_MPS = 12.0
PEAK_INTERVAL_MIN = 1.0 / 60.0  # s_min = 1 s, in minutes


@dataclass
class _Realization:
    arrive: np.ndarray
    leave: np.ndarray
    phase: np.ndarray


def _realize(p: IncidentParams, horizon: float, rng: np.random.Generator) -> _Realization:
    arrivals = []
    t = 0.0
    if p.lambda_a > 0:
        while True:
            t += rng.exponential(1.0 / p.lambda_a)
            if t >= horizon:
                break
            arrivals.append(t)
    departures = []
    t = 0.0
    if p.lambda_d > 0:
        while True:
            t += rng.exponential(1.0 / p.lambda_d)
            if t >= horizon:
                break
            departures.append(t)
    arrive = np.array(arrivals)
    phase = rng.random(len(arrivals))
    leave = np.full(len(arrivals), np.inf)
    # FIFO service: a departure event releases the earliest vehicle still queued
    head = 0
    for d in departures:
        if head < len(arrivals) and arrive[head] <= d:
            leave[head] = d
            head += 1
    return _Realization(arrive, leave, phase)


def _schedule(real: _Realization, mode: AlertMode, s_max: float, s_min: float, horizon: float,
              cap: int) -> list[tuple[float, int]]:
    # every report is low and lands in one bin, so no vehicle sends more than ``cap`` before detection
    out = []
    n = len(real.arrive)
    regular = []
    for i in range(n):
        end = min(real.leave[i], horizon)
        k0 = real.arrive[i] + real.phase[i] * s_max
        regular.append(np.arange(k0, min(end, k0 + cap * s_max), s_max) if k0 < end else np.empty(0))
    if mode is AlertMode.REGULAR:
        for i, times in enumerate(regular):
            out.extend((float(t), i) for t in times)
        out.sort()
        return out
    firsts = [times[0] for times in regular if len(times)]
    if not firsts:
        return out
    t1 = min(firsts)
    for i, times in enumerate(regular):
        end = min(real.leave[i], horizon)
        before = times[times <= t1]
        out.extend((float(t), i) for t in before)
        if real.arrive[i] > t1:
            start = real.arrive[i] + real.phase[i] * s_min
        elif len(before):
            start = max(before[-1] + s_min, t1)
        else:
            start = max(t1, real.arrive[i] + real.phase[i] * s_min)
        if start < end:
            out.extend((float(t), i) for t in np.arange(start, min(end, start + cap * s_min), s_min))
    out.sort()
    return out


def simulate_incident(p: IncidentParams, mode: AlertMode | str = AlertMode.REGULAR, seed: int = 0,
                      s_min: float = PEAK_INTERVAL_MIN, horizon_min: float = BIN_SECONDS / 60.0,
                      engine_config: EngineConfig | None = None) -> IncidentRun:
    """Discrete-event incident run; returns minutes from incident start to hotspot confirmation.

    Arrivals and departures are Poisson with the given per-minute rates and
    shared between modes for a given seed. Every vehicle on the segment
    reports a low speed every ``p.s_current`` minutes (random phase). In
    expedited mode the first report puts the segment in POSSIBLE state and
    vehicles switch to ``s_min``. All times are in minutes.
    """
    mode = AlertMode(mode)
    rng = np.random.default_rng(seed)
    real = _realize(p, horizon_min, rng)
    speed_rng = np.random.default_rng([seed, 1])
    sched = _schedule(real, mode, p.s_current, s_min, horizon_min, p.n_required)

    cfg = engine_config or EngineConfig()
    cfg = EngineConfig(**{**cfg.__dict__, "n_confirm": p.n_required,
                          "k_possible": 1 if mode is AlertMode.EXPEDITED else cfg.k_possible})
    eng = HotspotEngine(config=cfg)
    seg = 0
    eng.ingest(seg, FREE_FLOW_MPS, INCIDENT_T0_S - 3600.0)
    eng.flush()
    t_hot = thresholds(FREE_FLOW_MPS, cfg).t_hot
    closed = detection_time(p) if p.rate_diff > 0 else None
    first = None
    for k, (t, _veh) in enumerate(sched):
        ts = INCIDENT_T0_S + t * 60.0
        eng.ingest(seg, float(speed_rng.uniform(0.0, t_hot)), ts)
        eng.flush(ts)
        if first is None:
            first = t
        if eng.segments[seg].state is State.HOTSPOT:
            return IncidentRun(mode, seed, p.rate_diff, t, first, k + 1, closed)
    raise DetectionTimeout(horizon_min, len(sched))


def batch_runs(p: IncidentParams, modes: Iterable[AlertMode | str], seeds: Iterable[int],
               s_min: float = PEAK_INTERVAL_MIN, horizon_min: float = BIN_SECONDS / 60.0) -> list[IncidentRun]:
    """Runs for every (mode, seed); a timeout becomes a run with ``detect_min = None``."""
    out: list[IncidentRun] = []
    closed = detection_time(p) if p.rate_diff > 0 else None
    seeds = list(seeds)
    for mode in modes:
        for seed in seeds:
            try:
                out.append(simulate_incident(p, mode, seed, s_min, horizon_min))
            except DetectionTimeout as exc:
                out.append(IncidentRun(AlertMode(mode), seed, p.rate_diff, None, None, exc.partial_count, closed))
    return out


@dataclass(frozen=True)
class BatchSummary:
    rate_diff: float
    closed_form_min: float | None
    mean_min: dict[AlertMode, float | None]
    timeouts: dict[AlertMode, int]
    speedup: float | None  # mean regular time over mean expedited time
    expedited_never_slower: bool | None  # over seeds run in both modes


def summarize(runs: list[IncidentRun]) -> BatchSummary:
    if not runs:
        raise ValueError("no runs to summarize")
    by_mode: dict[AlertMode, dict[int, IncidentRun]] = {}
    for r in runs:
        by_mode.setdefault(r.mode, {})[r.seed] = r
    means, timeouts = {}, {}
    for mode, rs in by_mode.items():
        done = [r.detect_min for r in rs.values() if r.detect_min is not None]
        means[mode] = sum(done) / len(done) if done else None
        timeouts[mode] = len(rs) - len(done)
    reg, exp = means.get(AlertMode.REGULAR), means.get(AlertMode.EXPEDITED)
    speedup = reg / exp if reg is not None and exp else None
    paired = None
    if AlertMode.REGULAR in by_mode and AlertMode.EXPEDITED in by_mode:
        common = sorted(set(by_mode[AlertMode.REGULAR]) & set(by_mode[AlertMode.EXPEDITED]))
        paired = all(_not_slower(by_mode[AlertMode.EXPEDITED][s], by_mode[AlertMode.REGULAR][s]) for s in common)
    return BatchSummary(runs[0].rate_diff, runs[0].closed_form_min, means, timeouts, speedup, paired)


def _not_slower(fast: IncidentRun, slow: IncidentRun) -> bool:
    if slow.detect_min is None:
        return True
    return fast.detect_min is not None and fast.detect_min <= slow.detect_min + 1e-12


def write_flash_csv(runs: Iterable[IncidentRun], path: str | Path) -> None:
    """``rate_diff,mode,seed,detect_min,closed_form_min``; an empty detect cell marks a timeout."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rate_diff", "mode", "seed", "detect_min", "closed_form_min"])
        for r in runs:
            w.writerow([f"{r.rate_diff:g}", r.mode.value, r.seed, "" if r.detect_min is None else f"{r.detect_min:.6f}",
                        "" if r.closed_form_min is None else f"{r.closed_form_min:.6f}"])
