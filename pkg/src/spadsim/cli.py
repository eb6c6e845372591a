"""Command-line front end.

    spadsim simulate      --config run.cfg --out stamps.txt
    spadsim characterize  stamps.txt --dark dark.txt --out report.csv
    spadsim sweep         --config sweep.cfg --out fig5.csv --jobs 4
    spadsim working-point --config run.cfg
    spadsim waveform      --config run.cfg --scenario gate-cycle --out anode.txt
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor

from . import calibrate, characterize as ch
from .circuit import NoBracket, anode_waveform, scripted_log, solve_working_point, write_waveform
from .config import SweepSpec, load_config, load_sweep, read_timestamps, write_timestamps
from .engine import ConfigError, RunResult, SimConfig, run

log = logging.getLogger("spadsim")


def _config(args) -> SimConfig:
    cfg = load_config(args.config) if args.config else SimConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def _write_rows(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in columns])


def cmd_simulate(args) -> int:
    cfg = _config(args)
    result = run(cfg)
    write_timestamps(args.out, result)
    log.info("wrote %d records to %s", result.times_ps.size, args.out)
    return 0


def cmd_characterize(args) -> int:
    cfg, times, kinds = read_timestamps(args.input)
    if args.dark:
        dark_cfg, dt, dk = read_timestamps(args.dark)
        dcr = ch.estimate_dcr(dt, dk, dark_cfg.duration_s)
    elif args.dcr is not None:
        dcr = ch.Measurement(args.dcr, math.nan)
    else:
        raise ConfigError("--dark", "a dark-run timestamp file or --dcr value is required")
    result = RunResult(cfg, times, kinds, None, None)
    rep = ch.report(result, dcr, window_ps=args.window_ps)
    _write_rows(args.out, [ch.report_row(rep, cfg)], ch.REPORT_COLUMNS)
    if args.histogram:
        cls = ch.classify_events(times, kinds, cfg.source.rep_rate, args.window_ps)
        ch.write_histogram(args.histogram, cls.histogram, cls.peak_ps - 5000, cls.peak_ps + 5000)
    print(f"pde={rep.pde:.4f}±{rep.pde_err:.4f} dcr={rep.dcr:.1f}±{rep.dcr_err:.1f} cps "
          f"p_ap={rep.p_ap:.4f}±{rep.p_ap_err:.4f} fwhm={rep.fwhm:.1f} ps")
    return 0


def _sweep_point(args):
    cfg, dark_duration = args
    try:
        rep = calibrate.characterize_point(cfg, dark_duration)
        return {**ch.report_row(rep, cfg), "error": ""}
    except Exception as exc:  # recorded per point, the sweep carries on
        return {"temperature_K": cfg.operating.temperature, "v_ex_V": cfg.operating.v_ex,
                "seed": cfg.seed, "error": f"{type(exc).__name__}: {exc}"}


def run_sweep(spec: SweepSpec, jobs: int = 1) -> list[dict]:
    tasks = [(cfg, spec.dark_duration_s) for cfg in spec.points()]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_point, tasks))
    return [_sweep_point(t) for t in tasks]


def cmd_sweep(args) -> int:
    spec = load_sweep(args.config)
    if args.seed is not None:
        spec = dataclasses.replace(spec, base=dataclasses.replace(spec.base, seed=args.seed))
    rows = run_sweep(spec, args.jobs)
    _write_rows(args.out, rows, ch.REPORT_COLUMNS + ("error",))
    return 0


def cmd_working_point(args) -> int:
    cfg = _config(args)
    wp = solve_working_point(cfg.circuit, tol=args.tol)
    print(f"v_gs = {wp.v_gs:.6f} V")
    print(f"v_s = {wp.v_s:.6f} V")
    print(f"i1 = {wp.i1:.6e} A")
    print(f"residual = {wp.residual:.3e} V")
    return 0


def cmd_waveform(args) -> int:
    cfg = _config(args)
    events, start, end = scripted_log(args.scenario, cfg.timing)
    trace = anode_waveform(events, cfg.timing, cfg.circuit, start, end)
    write_waveform(args.out, trace)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spadsim", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one simulation, write a timestamp file")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("characterize", help="timestamp file to calibration report CSV")
    s.add_argument("input")
    s.add_argument("--dark", help="timestamp file of a dark run")
    s.add_argument("--dcr", type=float, help="dark count rate in cps, instead of --dark")
    s.add_argument("--window-ps", type=float, default=ch.PHOTON_WINDOW_PS)
    s.add_argument("--histogram", help="also write the timing histogram around the peak")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_characterize)

    s = sub.add_parser("sweep", help="characterize a (v_ex, T) grid, one CSV row per point")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("working-point", help="solve the idle-state quench working point")
    s.add_argument("--config")
    s.add_argument("--tol", type=float, default=1e-6)
    s.set_defaults(func=cmd_working_point)

    s = sub.add_parser("waveform", help="export the anode voltage of a scripted scenario")
    s.add_argument("--config")
    s.add_argument("--scenario", default="free-running-pulse",
                   choices=("free-running-pulse", "gate-cycle", "no-event"))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_waveform)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"spadsim: configuration error: {exc}", file=sys.stderr)
        return 2
    except NoBracket as exc:
        print(f"spadsim: NoBracket: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"spadsim: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
