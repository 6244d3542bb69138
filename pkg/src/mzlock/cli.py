"""Command line interface.

Subcommands: ``run`` (stabilized time series), ``scan`` (PM voltage
fringe), ``inset`` (gate-delay sweep of the modulation pulse),
``validate`` (config check) and ``print-defaults``.

Exit codes: 0 success, 1 validation error, 2 runtime error (for example
lock lost during a scan), 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .analysis import summarize_timeseries
from .config import SimConfig, default_config, format_config, parse_config
from .errors import ConfigError, LockLostError, MzlockError
from .harness import (
    inset_sweep,
    run_scenario,
    scan_voltage,
    worker_count,
    write_events_csv,
    write_fringe_csv,
    write_gnuplot_script,
    write_inset_csv,
    write_records_csv,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_IO = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mzlock",
        description="Simulator of a phase-stabilized fiber Mach-Zehnder interferometer",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "simulate the stabilized counting time series"),
        ("scan", "scan the phase-modulator voltage and fit the fringe"),
        ("inset", "sweep the detection gate delay across the PM pulse"),
        ("validate", "parse and validate a configuration"),
        ("print-defaults", "print the default configuration"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH", help="configuration file")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", metavar="DIR", default=".", help="output directory")
        p.add_argument("--duration", type=float, metavar="S",
                       help="override scenario duration (run only)")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
        p.add_argument("--gnuplot", action="store_true",
                       help="also emit a gnuplot script next to the CSV")
    return parser


def _load_config(args) -> SimConfig:
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot read {args.config}: {exc}") from exc
        cfg = parse_config(text)
    else:
        cfg = default_config()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed).validate()
    if args.duration is not None:
        scenario = dataclasses.replace(cfg.scenario, duration_s=args.duration)
        cfg = dataclasses.replace(cfg, scenario=scenario).validate()
    return cfg


def _cmd_run(cfg: SimConfig, out: Path, quiet: bool, gnuplot: bool) -> int:
    result = run_scenario(cfg)
    write_records_csv(result.records, out / "timeseries.csv")
    write_events_csv(result.events, out / "events.csv")
    if gnuplot:
        write_gnuplot_script("timeseries.csv", out / "timeseries.gp", kind="run")
    if not quiet:
        t_off = cfg.scenario.control_off_at
        t_end = t_off if t_off is not None else cfg.scenario.duration_s
        try:
            s = summarize_timeseries(
                result.records, (10.0, t_end),
                dark_rate_d1=cfg.d1.rep_rate_hz * cfg.d1.dark_prob,
                dark_rate_d2=cfg.d2.rep_rate_hz * cfg.d2.dark_prob,
            )
            print(f"bins: {len(result.records)}  events: {len(result.events)}")
            print(f"locked window [10 s, {t_end:g} s): "
                  f"D1 {s.mean_d1:.1f}/s  D2 {s.mean_d2:.1f}/s  "
                  f"net visibility {s.net_vis_mean:.4f} +- {s.net_vis_sd:.4f}")
        except ValueError:
            print(f"bins: {len(result.records)}  events: {len(result.events)}")
        print(f"wrote {out / 'timeseries.csv'}")
    return EXIT_OK


def _cmd_scan(cfg: SimConfig, out: Path, quiet: bool, gnuplot: bool) -> int:
    try:
        result = scan_voltage(cfg, workers=worker_count())
    except LockLostError as exc:
        write_fringe_csv(getattr(exc, "partial_points", []), out / "fringe.csv")
        write_events_csv(getattr(exc, "events", []), out / "events.csv")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    write_fringe_csv(result.points, out / "fringe.csv")
    write_events_csv(result.events, out / "events.csv")
    if gnuplot:
        write_gnuplot_script("fringe.csv", out / "fringe.gp", kind="scan")
    if not quiet:
        fit = result.fit
        print(f"{len(result.points)} points; D2 fit: amplitude {fit.amplitude:.1f}/s, "
              f"v_pi {fit.v_pi_fit:.4f} V, visibility {fit.visibility:.4f}, "
              f"r^2 {fit.r_squared:.5f}")
        print(f"wrote {out / 'fringe.csv'}")
    return EXIT_OK


def _cmd_inset(cfg: SimConfig, out: Path, quiet: bool, gnuplot: bool) -> int:
    points = inset_sweep(cfg)
    write_inset_csv(points, out / "inset.csv")
    if gnuplot:
        write_gnuplot_script("inset.csv", out / "inset.gp", kind="inset")
    if not quiet:
        peak = max(p.rate_d1 for p in points)
        print(f"{len(points)} delays; D1 peak rate {peak:.1f}/s")
        print(f"wrote {out / 'inset.csv'}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO

    if args.command == "print-defaults":
        print(format_config(default_config()), end="")
        return EXIT_OK
    if args.command == "validate":
        if not args.quiet:
            print("configuration OK")
        return EXIT_OK

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "run":
            return _cmd_run(cfg, out, args.quiet, args.gnuplot)
        if args.command == "scan":
            return _cmd_scan(cfg, out, args.quiet, args.gnuplot)
        if args.command == "inset":
            return _cmd_inset(cfg, out, args.quiet, args.gnuplot)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except LockLostError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except MzlockError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    raise SystemExit(main())
