"""Command-line entry point: ``lpvmpc <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .analysis import analyze, lap_metrics, write_bundle, write_lap_metrics
from .config import ConfigError, load_scenario
from .sim import SimulationDiverged, read_telemetry, run_scenario
from .sysid import FitConfig, InsufficientExcitationError, identify, synthesize_steady_log, write_log, write_report
from .tires import FINAL_RUN_FRONT, FINAL_RUN_REAR, VehicleParams, load_params_file
from .track import RacelineError, make_circle, make_oval, make_straight, save_raceline

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

log = logging.getLogger("lpvmpc")


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; usage errors here are validation errors (1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lpvmpc", description="LPV-MPC lateral control: simulation, analysis and tire fitting.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="cmd", metavar="<subcommand>", parser_class=_Parser)

    s = sub.add_parser("sim", help="run closed-loop scenarios from TOML configs")
    s.add_argument("configs", nargs="+", type=Path, help="scenario TOML file(s)")
    s.add_argument("--jobs", type=int, default=1, help="scenarios run in parallel (default 1)")
    s.add_argument("--output-dir", type=Path, help="override the output directory of every scenario")
    s.add_argument("--dump-qp", type=Path, metavar="FILE",
                   help="write the first MPC subproblem as text matrices (single config only)")

    a = sub.add_parser("analyze", help="velocity-binned errors, g-g cloud and lap metrics from telemetry")
    a.add_argument("telemetry", type=Path)
    a.add_argument("--out", type=Path, help="output directory (default: next to telemetry)")
    a.add_argument("--skip", type=float, default=10.0, help="ignore ticks before this time [s]")
    a.add_argument("--bin-width", type=float, default=2.0, help="speed bin width [m/s]")

    f = sub.add_parser("fit", help="fit per-axle Pacejka curves to a driving log")
    f.add_argument("log", type=Path, help="CSV with t,v_x,v_y,psi_dot,delta,a_y_imu")
    f.add_argument("--init", type=Path, help="parameter TOML: vehicle geometry and initial tire guesses")
    f.add_argument("--out", type=Path, default=Path("fit_out"), help="report directory")
    f.add_argument("--k-mad", type=float, default=3.0, help="outlier threshold in robust sigmas")

    g = sub.add_parser("gen-track", help="write a synthetic raceline CSV")
    g.add_argument("kind", choices=("oval", "straight", "circle"))
    g.add_argument("--straight", type=float, default=300.0, help="straight length [m] (oval, straight)")
    g.add_argument("--radius", type=float, default=300.0, help="turn radius [m] (oval, circle)")
    g.add_argument("--bank-deg", type=float, default=20.0, help="banking in turns [deg]")
    g.add_argument("--vref", type=float, default=70.0, help="reference speed [m/s]")
    g.add_argument("--spacing", type=float, default=2.0, help="waypoint spacing [m]")
    g.add_argument("--transition", type=float, default=30.0, help="banking blend length on straights [m]")
    g.add_argument("-o", "--output", type=Path, default=Path("raceline.csv"))

    lg = sub.add_parser("gen-log", help="write a synthetic steady-cornering log for fitting")
    lg.add_argument("--params", type=Path, help="truth parameter TOML (default: final-run tires)")
    lg.add_argument("-n", type=int, default=3000, help="number of records")
    lg.add_argument("--noise", type=float, default=0.05, help="a_y noise as a fraction of peak a_y")
    lg.add_argument("--outliers", type=float, default=0.05, help="fraction of gross outliers")
    lg.add_argument("--seed", type=int, default=0)
    lg.add_argument("-o", "--output", type=Path, default=Path("log.csv"))
    return p


def _run_one(path: Path, output_dir: Path | None, dump_qp: Path | None):
    cfg = load_scenario(path)
    base = output_dir if output_dir is not None else cfg.output_dir
    cfg = replace(cfg, output_dir=base / cfg.name)
    res = run_scenario(cfg, dump_qp_path=dump_qp)
    return cfg.name, res.telemetry_path, res.summary, res.wall_time


def _cmd_sim(args) -> int:
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    if args.dump_qp and len(args.configs) > 1:
        raise ConfigError("--dump-qp takes a single config")
    for c in args.configs:
        load_scenario(c)  # validate everything before starting
    jobs = [(c, args.output_dir, args.dump_qp) for c in args.configs]
    if args.jobs == 1 or len(jobs) == 1:
        results = [_run_one(*j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, *zip(*jobs)))
    for name, path, summary, wall in results:
        print(f"{name}: {path}  wall {wall:.1f} s  max|e_y| {summary.max_abs_e_y:.3f} m  "
              f"max|e_psi| {math.degrees(summary.max_abs_e_psi):.2f} deg  "
              f"fallback ticks {summary.fallback_tick_count}  "
              f"mean solve {summary.mean_solve_time * 1e3:.2f} ms")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    if not args.telemetry.exists():
        raise ConfigError(f"telemetry file not found: {args.telemetry}")
    try:
        tel = read_telemetry(args.telemetry)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"cannot parse telemetry: {exc}") from None
    out = args.out or args.telemetry.parent
    bundle = analyze(tel, skip=0.0, width=args.bin_width)
    paths = write_bundle(out, bundle)
    if tel:
        write_lap_metrics(out / "laps_recomputed.csv", lap_metrics(tel, args.skip))
    for p in paths:
        print(p)
    return EXIT_OK


def _cmd_fit(args) -> int:
    if not args.log.exists():
        raise ConfigError(f"log file not found: {args.log}")
    if args.init is not None:
        if not args.init.exists():
            raise ConfigError(f"parameter file not found: {args.init}")
        vp, front, rear = load_params_file(args.init)
    else:
        vp, front, rear = VehicleParams(), None, None
    result, report = identify(args.log, vp, front, rear, FitConfig(k_mad=args.k_mad))
    write_report(args.out, report)
    print("axle,b_p,c_p,d_p,e_p,c_linear,inlier_fraction")
    for name, p, c in (("front", result.front, result.c_linear_front),
                       ("rear", result.rear, result.c_linear_rear)):
        frac = report["axles"][name]["inlier_fraction"]
        print(f"{name},{p.b_p:.6g},{p.c_p:.6g},{p.d_p:.6g},{p.e_p:.6g},{c:.6g},{frac:.4f}")
    return EXIT_OK


def _cmd_gen_track(args) -> int:
    if args.kind == "oval":
        rl = make_oval(args.straight, args.radius, args.bank_deg, args.vref, args.spacing, args.transition)
    elif args.kind == "straight":
        rl = make_straight(args.straight, args.spacing, args.vref, math.radians(args.bank_deg))
    else:
        rl = make_circle(args.radius, args.spacing, args.vref, args.bank_deg)
    save_raceline(args.output, rl)
    print(args.output)
    return EXIT_OK


def _cmd_gen_log(args) -> int:
    if args.params is not None:
        if not args.params.exists():
            raise ConfigError(f"parameter file not found: {args.params}")
        vp, front, rear = load_params_file(args.params)
    else:
        vp, front, rear = VehicleParams(), FINAL_RUN_FRONT, FINAL_RUN_REAR
    recs = synthesize_steady_log(front, rear, vp, n=args.n, noise=args.noise,
                                 outlier_fraction=args.outliers, seed=args.seed)
    write_log(args.output, recs)
    print(args.output)
    return EXIT_OK


COMMANDS = {
    "sim": _cmd_sim,
    "analyze": _cmd_analyze,
    "fit": _cmd_fit,
    "gen-track": _cmd_gen_track,
    "gen-log": _cmd_gen_log,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.cmd is None:
        parser.print_usage(sys.stderr)
        return EXIT_VALIDATION
    try:
        return COMMANDS[args.cmd](args)
    except (ConfigError, RacelineError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SimulationDiverged, InsufficientExcitationError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
