"""Command-line interface: ``nfmimo {bench,db,estimate,scenario} ...``.

Exit codes: 0 on success, 2 on usage or configuration errors, 1 on runtime
errors.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .bench import (
    ConfigError,
    ScenarioConfig,
    emit_csv,
    emit_plot,
    format_trials_csv,
    load_config,
    run_scenario,
    save_config,
    scenario_array,
)
from .channel_db import DatabaseFormatError, build_db_from_environment, load_db, save_db
from .estimation import estimate_multisink, estimate_multisource, evm_db, SearchParams, SearchRegion
from .geometry import rectangular_room

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="nfmimo", description="Near-field MIMO channel estimation toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    bench = sub.add_parser("bench", help="Monte Carlo EVM benchmark")
    bsub = bench.add_subparsers(dest="action", required=True, parser_class=_Parser)
    run = bsub.add_parser("run", help="run every scenario of a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default="results", help="output directory (default: results)")
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--workers", type=int)
    run.add_argument("--no-plot", action="store_true", help="skip the SVG charts")
    run.add_argument("--trial-records", action="store_true",
                     help="also write per-trial records to trials.csv")

    db = sub.add_parser("db", help="channel databases")
    dsub = db.add_subparsers(dest="action", required=True, parser_class=_Parser)
    build = dsub.add_parser("build", help="build a database for the config's room")
    build.add_argument("--config", required=True)
    build.add_argument("--out", required=True)
    build.add_argument("--spacing-lambda", type=float,
                       help="antenna spacing (default: first entry of the config)")
    inspect = dsub.add_parser("inspect", help="summarize a database file")
    inspect.add_argument("db")

    est = sub.add_parser("estimate", help="estimate one snapshot")
    est.add_argument("--db", required=True)
    est.add_argument("--snapshot", required=True)
    est.add_argument("--method", choices=("multisource", "multisink"), required=True)
    est.add_argument("--sources", type=int, default=5, help="multisource peak count")
    est.add_argument("--steering-mode", default="squared")
    est.add_argument("--amplitude-mode", default="ls")

    scen = sub.add_parser("scenario", help="scenario config files")
    ssub = scen.add_subparsers(dest="action", required=True, parser_class=_Parser)
    init = ssub.add_parser("init", help="write the default config")
    init.add_argument("--out", required=True)
    return p


def _bench_run(args):
    cfg = load_config(args.config)
    doc = cfg.to_dict()
    for flag, key in (("trials", "trials"), ("seed", "master_seed"), ("workers", "workers")):
        value = getattr(args, flag)
        if value is not None:
            doc[key] = value
    cfg = ScenarioConfig.from_dict(doc)
    os.makedirs(args.out, exist_ok=True)

    def progress(sid, m):
        print(f"{sid}: M={m} done", file=sys.stderr)

    rows, records = run_scenario(cfg, progress=progress)
    csv_path = emit_csv(rows, os.path.join(args.out, "results.csv"))
    print(csv_path)
    if args.trial_records:
        path = os.path.join(args.out, "trials.csv")
        with open(path, "w", newline="") as f:
            f.write(format_trials_csv(records))
        print(path)
    if not args.no_plot:
        for path in emit_plot(rows, args.out):
            print(path)
    return EXIT_OK


def _db_build(args):
    cfg = load_config(args.config)
    spacing = args.spacing_lambda or cfg.antenna_spacings_lambda[0]
    if spacing <= 0:
        raise ConfigError("--spacing-lambda: must be positive")
    env = rectangular_room(cfg.room_width_m, cfg.room_depth_m, cfg.wall_reflection_coefficient)
    db = build_db_from_environment(scenario_array(cfg, spacing), env, cfg.max_order,
                                   cfg.wavelength_m)
    save_db(db, args.out)
    print(f"wrote {args.out}: M={db.n_antennas}, {sum(db.sink_counts())} sinks")
    return EXIT_OK


def _db_inspect(args):
    db = load_db(args.db)
    counts = db.sink_counts()
    print(f"format version: {db.format_version}")
    print(f"wavelength_m: {db.wavelength:g}")
    print(f"M: {db.n_antennas}")
    if len(set(counts)) == 1:
        print(f"sinks per antenna: {counts[0]}")
    else:
        print(f"sinks per antenna: min {min(counts)}, max {max(counts)}")
    print(f"total sinks: {sum(counts)}")
    print(f"walls: {len(db.walls)}")
    for i, w in enumerate(db.walls):
        print(f"  {i}: ({w.a[0]:g}, {w.a[1]:g}) -> ({w.b[0]:g}, {w.b[1]:g}), "
              f"r={w.reflection_coefficient:g}")
    return EXIT_OK


def _load_snapshot(path):
    """Read ``{wavelength, arrayLocations, coefficients[, truth]}`` JSON."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"snapshot: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError("snapshot: expected a JSON object")
    for key in ("wavelength", "arrayLocations", "coefficients"):
        if key not in doc:
            raise ConfigError(f"snapshot.{key}: missing")

    def pairs(key):
        try:
            arr = np.asarray(doc[key], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"snapshot.{key}: expected [re, im] pairs") from exc
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ConfigError(f"snapshot.{key}: expected [re, im] pairs")
        return arr[:, 0] + 1j * arr[:, 1]

    h = pairs("coefficients")
    truth = pairs("truth") if "truth" in doc else None
    return float(doc["wavelength"]), np.asarray(doc["arrayLocations"], dtype=float), h, truth


def _estimate(args):
    db = load_db(args.db)
    wavelength, locations, h, truth = _load_snapshot(args.snapshot)
    if locations.shape != db.array_locations.shape or not np.allclose(
        locations, db.array_locations
    ):
        raise ConfigError("snapshot.arrayLocations: does not match the database array")
    if wavelength != db.wavelength:
        raise ConfigError("snapshot.wavelength: does not match the database")
    params = SearchParams.for_wavelength(wavelength)
    lo = db.array_locations[:, :2].min(axis=0)
    hi = db.array_locations[:, :2].max(axis=0)
    if args.method == "multisink":
        region = SearchRegion(lo[0], hi[0], lo[1], hi[1])
        res = estimate_multisink(h, db, region, params, amplitude_mode=args.amplitude_mode,
                                 steering_mode=args.steering_mode)
        found = [(res.location, res.amplitude)]
        recon = res.reconstruction
    else:
        ext = hi - lo
        region = SearchRegion(lo[0] - ext[0], hi[0] + ext[0], lo[1] - ext[1], hi[1] + ext[1])
        res = estimate_multisource(h, db.array_locations, args.sources, region, params,
                                   wavelength, amplitude_mode=args.amplitude_mode,
                                   steering_mode=args.steering_mode)
        found = [(s.location, s.amplitude) for s in res.sources]
        recon = res.reconstruction
    for i, (loc, amp) in enumerate(found):
        print(f"source {i}: location=({loc[0]:.6f}, {loc[1]:.6f}) m, "
              f"amplitude={amp.real:.6g}{amp.imag:+.6g}j")
    if truth is not None:
        if len(truth) != len(recon):
            raise ConfigError("snapshot.truth: length does not match coefficients")
        print(f"output EVM: {evm_db(recon, truth):.3f} dB")
    return EXIT_OK


def _scenario_init(args):
    save_config(ScenarioConfig(), args.out)
    print(args.out)
    return EXIT_OK


_HANDLERS = {
    ("bench", "run"): _bench_run,
    ("db", "build"): _db_build,
    ("db", "inspect"): _db_inspect,
    ("estimate", None): _estimate,
    ("scenario", "init"): _scenario_init,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    handler = _HANDLERS[(args.command, getattr(args, "action", None))]
    try:
        return handler(args)
    except (ConfigError, DatabaseFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
