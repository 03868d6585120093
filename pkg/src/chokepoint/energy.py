"""Closed-form energy budget of adaptive sampling over one trip.

A trip covers ``d_in`` meters inside the congestion zone at ``v_in`` and
then ``d_out`` meters outside at ``v_out``. Inside, samples are ``s_min``
apart; outside, the interval grows with distance from the zone.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from .sampler import interval_beyond_zone

BATTERY_J = 18000.0
BUDGET_FRACTION = 0.03
BUDGET_J = 560.0


@dataclass(frozen=True)
class TripParams:
    d_in: float = 2000.0
    d_out: float = 8000.0
    v_in: float = 2.0
    v_out: float = 12.5
    s_min: float = 1.0
    s_max: float = 120.0
    e_in: float = 0.4
    e_out: float = 7.0

    def __post_init__(self):
        for name in ("v_in", "v_out", "s_min", "s_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("d_in", "d_out", "e_in", "e_out"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.s_min > self.s_max:
            raise ValueError("s_min must not exceed s_max")


def n_in(p: TripParams) -> float:
    return p.d_in / (p.v_in * p.s_min)


def growth_ratio(p: TripParams) -> float:
    return (p.d_in + p.v_out * p.s_max) / (p.d_in + p.v_out * p.s_min)


def n_out(p: TripParams) -> int:
    """Samples outside the zone, including the one taken at the zone edge."""
    if p.s_max == p.s_min:
        # r -> 1 limit of the closed form: uniform sampling plus the edge sample
        return 1 + math.ceil(p.d_out / (p.v_out * p.s_min) - 1e-12)
    r = growth_ratio(p)
    arg = 1.0 + p.d_out * (r - 1.0) / (p.v_out * p.s_min)
    return 1 + math.ceil(math.log(arg) / math.log(r) - 1e-12)


def n_out_stepwise(p: TripParams, max_steps: int = 10_000_000) -> int:
    """Count samples by stepping the sampling law until the trip distance is covered.

    x_1 = 0, y_1 = s_min, x_{k+1} = x_k + v_out * y_k, stop at the first
    x_n >= d_out; returns n.
    """
    x, y, n = 0.0, p.s_min, 1
    while x < p.d_out:
        x += p.v_out * y
        n += 1
        y = interval_beyond_zone(x, p.d_in, p.s_min, p.s_max) if p.d_in > 0 else p.s_max
        if n > max_steps:
            raise RuntimeError("step limit exceeded")
    return n


def trip_energy(p: TripParams) -> float:
    return n_in(p) * p.e_in + n_out(p) * p.e_out


def energy_breakdown(p: TripParams) -> dict[str, float]:
    ni, no = n_in(p), n_out(p)
    return {
        "n_in": ni,
        "n_out": no,
        "r": growth_ratio(p) if p.s_max > p.s_min else 1.0,
        "energy_in_j": ni * p.e_in,
        "energy_out_j": no * p.e_out,
        "energy_j": ni * p.e_in + no * p.e_out,
    }


class NoFeasibleParams(LookupError):
    pass


def select_params(budget_j: float, fixed: TripParams, s_min_values: Iterable[float],
                  s_max_values: Iterable[float]) -> tuple[float, float]:
    """Smallest feasible ``s_max`` (then smallest ``s_min``) whose trip energy fits the budget."""
    grid = sorted((smax, smin) for smin, smax in itertools.product(s_min_values, s_max_values) if smin <= smax)
    if not grid:
        raise ValueError("empty candidate grid")
    for smax, smin in grid:
        if trip_energy(replace(fixed, s_min=smin, s_max=smax)) <= budget_j:
            return smin, smax
    raise NoFeasibleParams(f"no (s_min, s_max) pair fits {budget_j} J")


def energy_curve(p: TripParams, s_max_values: Sequence[float]) -> list[tuple[float, float]]:
    if list(s_max_values) != sorted(s_max_values):
        raise ValueError("s_max values must be sorted ascending")
    return [(s, trip_energy(replace(p, s_max=s))) for s in s_max_values]


def write_energy_curve(rows: Iterable[tuple[float, float]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s_max_s", "energy_j"])
        for s, e in rows:
            w.writerow([f"{s:g}", f"{e:.6f}"])
