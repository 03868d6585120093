"""Flat ``key = value`` application config shared by every subcommand.

Precedence is command-line flag, then config file, then the defaults below.
Relative paths in a config file resolve against the file's directory.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .energy import TripParams
from .flash import AlertMode
from .hotspot_engine import EngineConfig
from .motion import VehicleSpec
from .sampler import SamplerParams

PATH_KEYS = ("network", "vehicles", "trace", "engine_state")


class ConfigError(ValueError):
    pass


@dataclass
class AppConfig:
    seed: int = 0
    out_dir: str = "out"
    # hotspot engine
    min_samples: int = 5
    k_possible: int = 3
    window_samples: int = 10
    window_s: float = 600.0
    n_confirm: int = 30
    nd_min: float = 0.5
    speed_cap_mps: float = 70.0
    corr_min: float = 0.9
    hot_frac: float = 0.25
    med_frac: float = 0.5
    low_frac: float = 0.75
    # sampling
    d_in_m: float = 2000.0
    s_min: float = 1.0
    s_max: float = 120.0
    poll_interval_s: float = 60.0
    expedite_ttl_s: float = 300.0
    straight_line: bool = False
    # energy
    e_in: float = 0.4
    e_out: float = 7.0
    bytes_per_sample: int = 20
    budget_j: float = 560.0
    d_out_m: float = 8000.0
    v_in_mps: float = 2.0
    v_out_mps: float = 12.5
    curve_s_max: str = "10:300:10"
    # flash congestion
    rate_in: float = 10.0
    rate_out: float = 0.0
    s_current_min: float = 2.0
    flash_horizon_min: float = 30.0
    seeds: int = 20
    flash_mode: str = "both"  # regular, expedited or both
    alert_mode: str = "regular"
    # simulation
    network: str = ""
    vehicles: str = ""
    start_s: float = 8 * 3600.0
    horizon_s: float = 3 * 3600.0
    speed_noise_frac: float = 0.1
    gps_noise_m: float = 5.0
    gps_noise_tau_s: float = 60.0
    max_snap_m: float = 50.0
    gap_max_s: float = 300.0
    preset_hotspots: str = ""
    incident_segment: int = -1
    incident_t0_s: float = 1800.0
    incident_t1_s: float = math.inf
    incident_crawl_mps: float = 1.0
    compare: bool = False
    # traces and reports
    trace: str = ""
    utc_offset_h: float = 0.0
    engine_state: str = ""
    at_s: float = 17.5 * 3600.0

    def validate(self) -> "AppConfig":
        try:
            self.engine_config()
            self.sampler_params()
            self.trip_params()
            AlertMode(self.alert_mode)
            self.curve_points()
            self.preset_list()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        if self.flash_mode not in ("regular", "expedited", "both"):
            raise ConfigError(f"flash_mode must be regular, expedited or both, got {self.flash_mode!r}")
        return self

    def engine_config(self) -> EngineConfig:
        cfg = EngineConfig(min_samples=self.min_samples, k_possible=self.k_possible,
                           window_samples=self.window_samples, window_s=self.window_s, n_confirm=self.n_confirm,
                           nd_min=self.nd_min, speed_cap_mps=self.speed_cap_mps, corr_min=self.corr_min,
                           d_in_m=self.d_in_m, hot_frac=self.hot_frac, med_frac=self.med_frac, low_frac=self.low_frac)
        if not 0 < cfg.hot_frac < cfg.med_frac < cfg.low_frac:
            raise ValueError("need 0 < hot_frac < med_frac < low_frac")
        if cfg.min_samples < 2 or cfg.n_confirm < 1 or cfg.k_possible < 1:
            raise ValueError("min_samples >= 2, n_confirm >= 1 and k_possible >= 1 required")
        if not cfg.d_in_m > 0:
            raise ValueError("d_in_m must be positive")
        return cfg

    def sampler_params(self) -> SamplerParams:
        return SamplerParams(self.s_min, self.s_max, self.poll_interval_s, self.expedite_ttl_s, self.straight_line)

    def trip_params(self) -> TripParams:
        return TripParams(self.d_in_m, self.d_out_m, self.v_in_mps, self.v_out_mps, self.s_min, self.s_max,
                          self.e_in, self.e_out)

    @property
    def s_min_minutes(self) -> float:
        return self.s_min / 60.0

    def curve_points(self) -> list[float]:
        lo, hi, step = (float(x) for x in self.curve_s_max.split(":"))
        if not (0 < lo <= hi and step > 0):
            raise ValueError("curve_s_max must be lo:hi:step with 0 < lo <= hi, step > 0")
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return [lo + k * step for k in range(n)]

    def preset_list(self) -> tuple[int, ...]:
        return tuple(int(x) for x in self.preset_hotspots.replace(";", " ").replace(",", " ").split())

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def coerce(name: str, raw: str):
    kinds = {f.name: f.type for f in fields(AppConfig)}
    if name not in kinds:
        raise ConfigError(f"unknown config key {name!r}")
    kind = kinds[name]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in _TRUE | _FALSE:
                raise ValueError(f"not a boolean: {raw!r}")
            return low in _TRUE
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    return raw


def parse_config_text(text: str, base_dir: Path | None = None, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        value = coerce(key, raw)
        if key in PATH_KEYS and value and base_dir is not None and not Path(value).is_absolute():
            value = str(base_dir / value)
        values[key] = value
    return values


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> AppConfig:
    cfg = AppConfig()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(p)
        cfg = replace(cfg, **parse_config_text(p.read_text(encoding="utf-8"), p.parent, str(p)))
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg.validate()


def defaults() -> dict:
    return asdict(AppConfig())


# -- vehicles CSV ---------------------------------------------------------------


def _floats(cell: str) -> tuple[float, ...]:
    return tuple(float(x) for x in cell.replace(";", " ").split())


def load_vehicles(path: str | Path) -> list[VehicleSpec]:
    """``id,depart_s,route_segs,speed_mps`` with optional ``start_offset_m`` and ``speed_sd_frac``.

    ``route_segs`` is a space- or semicolon-separated segment list;
    ``speed_mps`` holds one speed or one per route segment.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"id", "depart_s", "route_segs", "speed_mps"}
        if not need <= set(reader.fieldnames or ()):
            raise ConfigError(f"{path}: vehicles CSV needs columns {sorted(need)}")
        for row in reader:
            try:
                sd = row.get("speed_sd_frac")
                out.append(VehicleSpec(
                    int(row["id"]), tuple(int(float(x)) for x in _floats(row["route_segs"])),
                    _floats(row["speed_mps"]), float(row["depart_s"]),
                    float(row.get("start_offset_m") or 0.0), float(sd) if sd not in (None, "") else None))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}:{reader.line_num}: {exc}") from None
    return out


def write_vehicles(vehicles, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "depart_s", "route_segs", "speed_mps", "start_offset_m", "speed_sd_frac"])
        for v in vehicles:
            w.writerow([v.id, f"{v.depart_time:g}", " ".join(str(s) for s in v.route),
                        " ".join(f"{x:.6g}" for x in v.speeds), f"{v.start_offset:g}",
                        "" if v.noise_frac is None else f"{v.noise_frac:g}"])
