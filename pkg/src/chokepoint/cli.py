"""Command-line entry point: ``chokepoint <subcommand> [--key value ...]``.

Every config key is also a flag (``s_max`` becomes ``--s-max``) on every
subcommand. Exit codes: 0 success, 2 usage error, 3 missing file,
4 invalid configuration or argument, 5 malformed input data.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path
from typing import Sequence

from . import energy, flash, traces
from .config import AppConfig, ConfigError, coerce, load_config, load_vehicles
from .hotspot_engine import HotspotEngine, write_hotspots_csv
from .road_network import NetworkFormatError, load_network
from .simulator import SimConfig, compare_modes, inject_incident, run

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_INVALID = 4
EXIT_BAD_DATA = 5

ALIASES = {"n_confirm": ["--n-required"]}
FLASH_MODES = ("regular", "expedited", "both")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=argparse.SUPPRESS, help="flat key = value config file")
    p.add_argument("--print-config", action="store_true", default=argparse.SUPPRESS,
                   help="print the effective config and exit")
    for f in fields(AppConfig):
        if f.name == "flash_mode":
            continue
        flags = [f"--{f.name.replace('_', '-')}"] + ALIASES.get(f.name, [])
        p.add_argument(*flags, dest=f.name, default=argparse.SUPPRESS, metavar=f.name.upper(),
                       type=lambda raw, name=f.name: coerce(name, raw))
    p.add_argument("--flash-mode", "--mode", dest="flash_mode", default=argparse.SUPPRESS, choices=FLASH_MODES)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chokepoint", description="Congestion hotspot detection with adaptive GPS sampling.")
    _add_config_flags(parser)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    helps = {
        "simulate": "run the fleet simulator (add --compare true for continuous vs adaptive)",
        "ingest": "replay a GPS trace into the hotspot engine",
        "detect": "list active hotspots from an engine state or trace",
        "energy": "trip energy, its breakdown and the E(s_max) curve",
        "flash": "incident detection time: closed form and simulation",
        "report": "ND CDF, hotspots per bin and heat map from an engine state or trace",
    }
    for name, text in helps.items():
        _add_config_flags(sub.add_parser(name, help=text, description=text))
    return parser


def _fields_only(ns: argparse.Namespace) -> dict:
    names = {f.name for f in fields(AppConfig)}
    return {k: v for k, v in vars(ns).items() if k in names}


def _out(cfg: AppConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print_rows(rows) -> None:
    for k, v in rows:
        print(f"{k}: {v}")


def _need(value: str, key: str) -> str:
    if not value:
        raise ConfigError(f"{key} is not set (use --{key.replace('_', '-')} or the config file)")
    return value


def _engine_from_inputs(cfg: AppConfig) -> tuple[HotspotEngine, traces.IngestReport | None]:
    net = load_network(_need(cfg.network, "network"))
    if cfg.engine_state:
        return HotspotEngine.load(cfg.engine_state, net), None
    engine = HotspotEngine(net, cfg.engine_config())
    rep = traces.ingest_trace(_need(cfg.trace, "trace"), net, engine, cfg.gap_max_s, cfg.max_snap_m, cfg.utc_offset_h)
    return engine, rep


def sim_config(cfg: AppConfig) -> SimConfig:
    net = load_network(_need(cfg.network, "network"))
    vehicles = tuple(load_vehicles(cfg.vehicles)) if cfg.vehicles else ()
    sim = SimConfig(net, vehicles, cfg.sampler_params(), cfg.engine_config(), cfg.e_in, cfg.e_out,
                    cfg.bytes_per_sample, cfg.seed, cfg.start_s, cfg.horizon_s, cfg.speed_noise_frac,
                    gps_noise_m=cfg.gps_noise_m, gps_noise_tau_s=cfg.gps_noise_tau_s, gap_max_s=cfg.gap_max_s,
                    max_snap_m=cfg.max_snap_m, alert_mode=flash.AlertMode(cfg.alert_mode),
                    preset_hotspots=cfg.preset_list())
    if cfg.incident_segment >= 0:
        sim = inject_incident(sim, cfg.incident_segment, cfg.incident_t0_s, cfg.rate_in, cfg.rate_out,
                              cfg.incident_t1_s, cfg.incident_crawl_mps)
    return sim


def cmd_simulate(cfg: AppConfig) -> int:
    sim = sim_config(cfg)
    out = _out(cfg)
    if cfg.compare:
        comp = compare_modes(sim)
        comp.continuous.write(out / "continuous")
        comp.adaptive.write(out / "adaptive")
        rows = comp.rows()
        with open(out / "compare.csv", "w", encoding="utf-8") as fh:
            fh.write("key,value\n" + "".join(f"{k},{v}\n" for k, v in rows))
        _print_rows(rows)
        return EXIT_OK
    report = run(sim)
    report.write(out)
    _print_rows(report.summary_rows())
    return EXIT_OK


def cmd_ingest(cfg: AppConfig) -> int:
    net = load_network(_need(cfg.network, "network"))
    engine = HotspotEngine(net, cfg.engine_config())
    rep = traces.ingest_trace(_need(cfg.trace, "trace"), net, engine, cfg.gap_max_s, cfg.max_snap_m, cfg.utc_offset_h)
    out = _out(cfg)
    traces.write_ingest_report(rep, out / "ingest_report.csv")
    traces.write_heatmap(traces.heatmap_rows(engine), out / "heatmap.csv")
    engine.dump(out / "engine_state.csv")
    _print_rows(rep.rows())
    print(f"reconciled: {'yes' if rep.reconciles() else 'no'}")
    return EXIT_OK


def cmd_detect(cfg: AppConfig) -> int:
    engine, _ = _engine_from_inputs(cfg)
    hotspots = engine.active_hotspots(cfg.at_s)
    out = _out(cfg)
    write_hotspots_csv(hotspots, out / "hotspots.csv")
    print(f"active hotspots: {len(hotspots)}")
    for h in hotspots:
        print(f"  segment {h.segment} level {h.level.name.lower()} bin {h.bin}")
    return EXIT_OK


def cmd_energy(cfg: AppConfig) -> int:
    p = cfg.trip_params()
    _print_rows(energy.energy_breakdown(p).items())
    print(f"budget_j: {cfg.budget_j}")
    try:
        s_min, s_max = energy.select_params(cfg.budget_j, p, [p.s_min], cfg.curve_points())
        print(f"smallest s_max within budget: {s_max:g} (s_min {s_min:g})")
    except energy.NoFeasibleParams:
        print("smallest s_max within budget: none on the curve grid")
    energy.write_energy_curve(energy.energy_curve(p, cfg.curve_points()), _out(cfg) / "energy_curve.csv")
    return EXIT_OK


def cmd_flash(cfg: AppConfig) -> int:
    p = flash.IncidentParams(cfg.rate_in, cfg.rate_out, cfg.s_current_min, cfg.n_confirm)
    modes = list(flash.AlertMode) if cfg.flash_mode == "both" else [flash.AlertMode(cfg.flash_mode)]
    runs = flash.batch_runs(p, modes, range(cfg.seed, cfg.seed + cfg.seeds), cfg.s_min_minutes, cfg.flash_horizon_min)
    flash.write_flash_csv(runs, _out(cfg) / "flash.csv")
    s = flash.summarize(runs)
    print(f"rate_diff_per_min: {s.rate_diff:g}")
    print(f"closed_form_min: {'unbounded' if s.closed_form_min is None else f'{s.closed_form_min:.4f}'}")
    for mode in modes:
        mean = s.mean_min[mode]
        print(f"{mode.value}_mean_min: {'none detected' if mean is None else f'{mean:.4f}'} "
              f"(timeouts {s.timeouts[mode]} of {cfg.seeds})")
    if s.speedup is not None:
        print(f"speedup: {s.speedup:.2f}")
    if s.expedited_never_slower is not None:
        print(f"expedited_never_slower: {'yes' if s.expedited_never_slower else 'no'}")
    return EXIT_OK


def cmd_report(cfg: AppConfig) -> int:
    engine, _ = _engine_from_inputs(cfg)
    out = _out(cfg)
    nd = traces.nd_report(engine)
    traces.write_nd_cdf(nd, out / "nd_cdf.csv")
    per_bin = traces.hotspots_over_time(engine)
    traces.write_hotspots_per_bin(per_bin, out / "hotspots_per_bin.csv")
    traces.write_heatmap(traces.heatmap_rows(engine), out / "heatmap.csv")
    print(f"segments with ND: {len(nd.rows)} (hotspot {len(nd.values(True))}, other {len(nd.values(False))})")
    print(f"ND dominance KS: {nd.dominance_ks():.4f}")
    print("hotspots per bin: " + " ".join(f"{b}:{n}" for b, n in per_bin if n))
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "ingest": cmd_ingest, "detect": cmd_detect,
            "energy": cmd_energy, "flash": cmd_flash, "report": cmd_report}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        cfg = load_config(getattr(ns, "config", None), _fields_only(ns))
        if getattr(ns, "print_config", False):
            print(cfg.dumps(), end="")
            return EXIT_OK
        if ns.command is None:
            parser.print_usage(sys.stderr)
            print("chokepoint: error: a subcommand is required", file=sys.stderr)
            return EXIT_USAGE
        return COMMANDS[ns.command](cfg)
    except FileNotFoundError as exc:
        print(f"chokepoint: missing file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (NetworkFormatError, traces.TraceFormatError) as exc:
        print(f"chokepoint: malformed input: {exc}", file=sys.stderr)
        return EXIT_BAD_DATA
    except (ConfigError, ValueError) as exc:
        print(f"chokepoint: invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
