"""Command line entry point.

Subcommands:

  generate   write a deterministic synthetic dataset plus ground truth
  ingest     run an incremental load (optionally looping with --watch)
  serve      start the HTTP API
  kpi        compute a KPI series and print it
  forecast   project a monthly KPI series forward

Exit codes: 0 success, 1 runtime failure (bad data, missing repo, engine
error), 2 usage error (argparse handles that itself).

With --json the output is byte-identical to the corresponding HTTP body.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from datetime import datetime

from . import builder, datagen, extractor, filterlang, kpi
from .config import ConfigError, PlatformConfig, load_config
from .model import ValidationError, canonical_json, parse_instant
from .repository import QueryError, Repository, RepositoryError


class CliError(RuntimeError):
    pass


def _config(args) -> PlatformConfig:
    path = args.config or os.environ.get("EOC_CONFIG")
    if not path:
        raise CliError("no config file given (use --config or set EOC_CONFIG)")
    return load_config(path)


def _cmd_generate(args) -> int:
    spec = datagen.GenSpec(seed=args.seed, n_patients=args.patients,
                           days=args.days)
    manifest = datagen.generate(spec, args.out)
    print(f"wrote {args.out}: {manifest['files']}")
    return 0


def _run_ingest(config: PlatformConfig, repo: Repository, full: bool) -> extractor.IngestReport:
    report = extractor.load_increment(list(config.sources), repo,
                                      config.linkage, full=full)
    return report


def _print_report(report: extractor.IngestReport) -> None:
    for sid in sorted(report.sources):
        c = report.sources[sid]
        wm = report.watermarks.get(sid)
        print(f"{sid}: read={c.read} normalized={c.normalized} "
              f"rejected={c.rejected} upserted={c.upserted} watermark={wm}")
    for sid, msg in sorted(report.errors.items()):
        print(f"{sid}: ERROR {msg}", file=sys.stderr)


def _cmd_ingest(args) -> int:
    config = _config(args)
    with Repository.open(config.repository_root, "rw") as repo:
        if args.rebuild:
            rep = builder.rebuild_all(repo, config.linkage)
            print(f"rebuilt: {rep.episodes_written} episodes written, "
                  f"{rep.episodes_tombstoned} removed")
        while True:
            report = _run_ingest(config, repo, full=False)
            _print_report(report)
            if report.errors:
                return 1
            if not args.watch:
                return 0
            time.sleep(args.watch)


def _cmd_serve(args) -> int:
    import uvicorn

    from .api import create_app

    config = _config(args)
    app = create_app(config)
    port = args.port or config.server_port
    uvicorn.run(app, host=config.server_bind, port=port, log_level="warning")
    return 0


def _kpi_query(args) -> kpi.KpiQuery:
    if args.kpi not in kpi.KPI_TYPES:
        raise CliError(f"unknown KPI type {args.kpi!r}")
    try:
        t0 = parse_instant(args.time_from)
        t1 = parse_instant(args.time_to)
    except ValidationError as ex:
        raise CliError(str(ex))
    group_by = tuple(g for g in (args.group_by or "").split(",") if g)
    if args.filter:
        try:
            filterlang.parse(args.filter)
        except filterlang.FilterError as ex:
            raise CliError(str(ex))
    return kpi.KpiQuery(kpi=args.kpi, time_from=t0, time_to=t1,
                        bucket=args.bucket.upper(), group_by=group_by,
                        filter_text=args.filter or None,
                        cohort_id=args.cohort or None)


def _print_series(result: dict) -> None:
    strata = sorted({s for b in result["buckets"] for s in b["strata"]})
    width = max([len("bucket")] + [len(b["bucket_start"]) for b in result["buckets"]])
    swidth = {s: max(len(s), 12) for s in strata}
    header = "bucket".ljust(width) + "".join(
        "  " + s.rjust(swidth[s]) for s in strata)
    print(header)
    for b in result["buckets"]:
        row = b["bucket_start"].ljust(width)
        for s in strata:
            cell = b["strata"].get(s)
            if cell is None or cell["value"] is None:
                text = "-"
            else:
                text = f"{cell['value']:.4f}"
            row += "  " + text.rjust(swidth[s])
        print(row)


def _cmd_kpi(args) -> int:
    config = _config(args)
    q = _kpi_query(args)
    with Repository.open(config.repository_root, "ro") as repo:
        result = kpi.compute_kpi(repo, q, config.kpi_settings)
    if args.json:
        sys.stdout.buffer.write(canonical_json(result).encode("utf-8") + b"\n")
    else:
        _print_series(result)
    return 0


def _cmd_forecast(args) -> int:
    config = _config(args)
    q = _kpi_query(args)
    with Repository.open(config.repository_root, "ro") as repo:
        result = kpi.forecast(repo, q, args.horizon, args.scenario,
                              config.kpi_settings)
    if args.json:
        sys.stdout.buffer.write(canonical_json(result).encode("utf-8") + b"\n")
    else:
        for h in result["history"]:
            v = "-" if h["value"] is None else f"{h['value']:.4f}"
            print(f"{h['bucket_start']}  {v}")
        for p in result["projections"]:
            print(f"{p['bucket_start']}  {p['value']:.4f}  (projected)")
    return 0


def _add_window_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("kpi", metavar="TYPE")
    p.add_argument("--from", dest="time_from", required=True)
    p.add_argument("--to", dest="time_to", required=True)
    p.add_argument("--bucket", default="MONTH",
                   choices=["DAY", "WEEK", "MONTH", "day", "week", "month"])
    p.add_argument("--group-by", dest="group_by", default="")
    p.add_argument("--filter", default="")
    p.add_argument("--cohort", default="")
    p.add_argument("--json", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eoc",
                                     description="episode-of-care analytics")
    parser.add_argument("--config", default=None,
                        help="platform config file (or set EOC_CONFIG)")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--patients", type=int, default=200)
    g.add_argument("--days", type=int, default=90)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_cmd_generate)

    i = sub.add_parser("ingest", help="run an incremental load")
    i.add_argument("--watch", type=float, default=0,
                   help="poll interval in seconds; 0 runs once")
    i.add_argument("--rebuild", action="store_true",
                   help="relink every patient before loading")
    i.set_defaults(fn=_cmd_ingest)

    s = sub.add_parser("serve", help="start the HTTP API")
    s.add_argument("--port", type=int, default=0)
    s.set_defaults(fn=_cmd_serve)

    k = sub.add_parser("kpi", help="compute a KPI series")
    _add_window_args(k)
    k.set_defaults(fn=_cmd_kpi)

    f = sub.add_parser("forecast", help="project a monthly KPI series")
    _add_window_args(f)
    f.add_argument("--horizon", type=int, required=True)
    f.add_argument("--scenario", type=float, default=1.0)
    f.set_defaults(fn=_cmd_forecast)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, ConfigError, RepositoryError, QueryError, ValidationError,
            extractor.SourceError, kpi.KpiError, kpi.ForecastError,
            filterlang.FilterError, OSError) as ex:
        print(f"error: {ex}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
