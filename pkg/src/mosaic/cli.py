"""Command line front end: ``mosaic run | sweep | validate``.

Exit status: 0 ok, 2 configuration error, 3 numeric failure during a run.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .config import (
    ConfigError,
    build_config,
    config_hash,
    default_scenario_path,
    load_raw,
    parse_overrides,
    parse_value,
)
from .metrics import aggregate
from .scenario import ExperimentError, run_experiment

log = logging.getLogger("mosaic")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
OUT_ENV = "MOSAIC_OUT_DIR"


def _fmt(x: float) -> str:
    return format(float(x), ".6f")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _load(args, extra=()):
    raw = load_raw(args.config) if args.config else load_raw(default_scenario_path())
    overrides = parse_overrides(args.override) + list(extra)
    if args.seed is not None:
        overrides.append(("run.seed", args.seed))
    return build_config(raw, overrides)


def _experiment(cfg, threads):
    res = run_experiment(cfg, threads=threads)
    summaries = {m: aggregate(res.ospa(m), res.cardinality(m), m) for m in res.methods}
    return res, summaries


def _manifest(path: Path, cfg, chash: str, outputs, started: float, command: str, extra=None) -> None:
    doc = {
        "tool": "mosaic",
        "version": __version__,
        "command": command,
        "config_hash": chash,
        "seed": cfg.run.seed,
        "methods": cfg.run.method_list(),
        "outputs": {k: str(v) for k, v in outputs.items()},
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    started = time.time()
    cfg = _load(args)
    chash = config_hash(cfg)  # recorded before any simulation
    log.info("config %s, %d runs, methods %s", chash[:12], cfg.run.mc_runs, ",".join(cfg.run.method_list()))
    res, summaries = _experiment(cfg, args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "ospa_per_scan": out / "ospa_per_scan.csv",
        "cardinality_per_scan": out / "cardinality_per_scan.csv",
        "summary": out / "summary.csv",
    }
    true_card = res.truth.cardinality
    scans = range(res.truth.scans)
    _write_csv(
        files["ospa_per_scan"],
        ["scan", "method", "mean_ospa"],
        [[k, m, _fmt(summaries[m].mean_ospa[k])] for k in scans for m in res.methods],
    )
    _write_csv(
        files["cardinality_per_scan"],
        ["scan", "method", "mean_est_card", "true_card"],
        [[k, m, _fmt(summaries[m].mean_card[k]), int(true_card[k])] for k in scans for m in res.methods],
    )
    _write_csv(
        files["summary"],
        ["method", "pd0", "time_avg_ospa"],
        [[m, _fmt(res.pd0), _fmt(summaries[m].time_avg_ospa)] for m in res.methods],
    )
    _manifest(out / "manifest.json", cfg, chash, files, started, "run")
    for m in res.methods:
        print(f"{m}: time-averaged OSPA {summaries[m].time_avg_ospa:.2f}")
    return EXIT_OK


def _sweep_values(text: str) -> list:
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise ConfigError("sweep needs at least one value")
    return [parse_value(s) for s in items]


def cmd_sweep(args) -> int:
    started = time.time()
    values = _sweep_values(args.values)
    cfgs = [_load(args, [(args.param, v)]) for v in values]  # validate all before running
    chash = config_hash(cfgs[0])
    rows = []
    for v, cfg in zip(values, cfgs):
        log.info("sweep %s=%s", args.param, v)
        res, summaries = _experiment(cfg, args.threads)
        rows += [[v, m, _fmt(summaries[m].time_avg_ospa)] for m in res.methods]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {"sweep": out / "sweep.csv"}
    _write_csv(files["sweep"], ["value", "method", "time_avg_ospa"], rows)
    _manifest(
        out / "manifest.json", cfgs[0], chash, files, started, "sweep", {"parameter": args.param, "values": values}
    )
    for r in rows:
        print(f"{args.param}={r[0]} {r[1]}: time-averaged OSPA {r[2]}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load(args)
    n_nodes = len(cfg.network.nodes)
    print(
        f"ok: {n_nodes} nodes, {len(cfg.network.arcs)} arcs, {len(cfg.targets)} targets, "
        f"{cfg.run.scans} scans, methods {','.join(cfg.run.method_list())}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario JSON (default: the packaged scenario)")
    common.add_argument(
        "--override", action="append", default=[], metavar="KEY=VALUE", help="dotted config override (repeatable)"
    )
    common.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    common.add_argument("-v", "--verbose", action="store_true")

    running = argparse.ArgumentParser(add_help=False)
    running.add_argument("--out", default=os.environ.get(OUT_ENV, "mosaic_out"), help=f"output directory (env {OUT_ENV})")
    running.add_argument("--threads", type=int, default=1, help="worker processes for Monte Carlo runs")

    p = argparse.ArgumentParser(prog="mosaic", description="Distributed multi-sensor CPHD/PHD tracking experiments")
    p.add_argument("--version", action="version", version=f"mosaic {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common, running], help="run a Monte Carlo campaign").set_defaults(func=cmd_run)
    sw = sub.add_parser("sweep", parents=[common, running], help="repeat a campaign over parameter values")
    sw.add_argument("--param", required=True, help="dotted config key, or pd0 / rho")
    sw.add_argument("--values", required=True, help="comma separated values")
    sw.set_defaults(func=cmd_sweep)
    sub.add_parser("validate", parents=[common], help="check a scenario file without running").set_defaults(
        func=cmd_validate
    )
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must fit in an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExperimentError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
