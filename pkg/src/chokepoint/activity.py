"""Driving / not-driving decision tree over cheap phone sensors.

Checks run in energy order: known WiFi, then GSM cell-tower handoffs, then
the accelerometer. The accelerometer stage is pluggable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

GRAVITY = 9.80665

Vec3 = tuple[float, float, float]


class Reason(str, Enum):
    KNOWN_WIFI = "known_wifi"
    GSM_HANDOFF = "gsm_handoff"
    ACCEL_DRIVING = "accel_driving"
    ACCEL_IDLE = "accel_idle"
    NO_EVIDENCE = "no_evidence"


@dataclass(frozen=True)
class SensorSnapshot:
    known_wifi_visible: bool
    gsm_towers_in_window: int
    accel_samples: Sequence[Vec3] = field(default_factory=tuple)
    window_s: float = 30.0

    def __post_init__(self):
        if self.gsm_towers_in_window < 0:
            raise ValueError("tower count must be non-negative")


@dataclass(frozen=True)
class ActivityVerdict:
    driving: bool
    reason: Reason


@dataclass(frozen=True)
class AccelVarianceRule:
    """Driving when acceleration magnitude varies enough around gravity."""

    var_min: float = 0.5
    gravity_tol: float = 2.0

    def __call__(self, samples: Sequence[Vec3]) -> bool:
        mags = [math.sqrt(x * x + y * y + z * z) for x, y, z in samples]
        n = len(mags)
        mean = sum(mags) / n
        var = sum((m - mean) ** 2 for m in mags) / (n - 1) if n > 1 else 0.0
        return var >= self.var_min and abs(mean - GRAVITY) <= self.gravity_tol


AccelClassifier = Callable[[Sequence[Vec3]], bool]


def classify_activity(snap: SensorSnapshot, accel: AccelClassifier | None = None,
                      tower_min: int = 3) -> ActivityVerdict:
    if snap.known_wifi_visible:
        return ActivityVerdict(False, Reason.KNOWN_WIFI)
    if snap.gsm_towers_in_window > tower_min:
        return ActivityVerdict(True, Reason.GSM_HANDOFF)
    if not snap.accel_samples:
        return ActivityVerdict(False, Reason.NO_EVIDENCE)
    rule = accel or AccelVarianceRule()
    if rule(snap.accel_samples):
        return ActivityVerdict(True, Reason.ACCEL_DRIVING)
    return ActivityVerdict(False, Reason.ACCEL_IDLE)
