"""Command-line entry point: ``distb run|sweep|inspect|export-chain|validate``.

Exit codes: 0 ok, 2 configuration error, 3 runtime failure, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import report
from .ledger import export_chain
from .scenario import SCHEMA_DOC, ScenarioError, dump_scenario, load_scenario, validate, with_param
from .sim import World, run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4
SCENARIO_DIR = Path(__file__).parent / "scenarios"


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def resolve_cfg(name: str) -> Path:
    """A path, or the bare name of a shipped scenario (``fig7`` or ``fig7.cfg``)."""
    p = Path(name)
    if p.exists():
        return p
    for cand in (SCENARIO_DIR / name, SCENARIO_DIR / f"{name}.cfg"):
        if cand.exists():
            return cand
    raise CliError(f"scenario file not found: {name}", EXIT_CONFIG)


def _load(args):
    path = resolve_cfg(args.cfg)
    try:
        scn = load_scenario(path, allow_nonpaper=args.allow_nonpaper)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc
    if args.seed is not None:
        scn.run.seed = args.seed
        validate(scn)
    if getattr(args, "variant", None):
        scn.run.variant = args.variant
    if getattr(args, "trace", False):
        scn.outputs.trace = True
    return scn


def _out_dir(args) -> Path:
    return Path(args.out_dir or os.environ.get("DISTB_OUT_DIR") or "out")


def _write_lines(path: Path, lines) -> None:
    try:
        with open(path, "w") as fh:
            for line in lines:
                fh.write(line + "\n")
    except OSError as exc:
        raise report.ReportError(f"cannot write {path}: {exc}") from exc


def emit_run(scn, results, out: Path, prefix="") -> list:
    """Merged CSV/SVG report plus whatever optional logs the scenario asks for."""
    formats = [f for f in ("csv", "svg") if getattr(scn.outputs, f)]
    written = report.emit(results, out, formats, prefix)
    for v, r in results.items():
        if scn.outputs.trace:
            path = out / f"{prefix}trace_{v}.tsv"
            try:
                with open(path, "w") as fh:
                    r.world.kernel.dump_trace(fh)
            except OSError as exc:
                raise report.ReportError(f"cannot write {path}: {exc}") from exc
            written.append(path)
        if scn.outputs.attack_log:
            path = out / f"{prefix}attacks_{v}.tsv"
            _write_lines(path, r.attack_log)
            written.append(path)
        if scn.outputs.rounds_log and v == "distb":
            path = out / f"{prefix}rounds.tsv"
            _write_lines(path, r.rounds_log)
            written.append(path)
    return written


def cmd_run(args) -> int:
    scn = _load(args)
    out = _out_dir(args)
    report._ensure_dir(out)
    results = run_scenario(scn, trace=scn.outputs.trace)
    for path in emit_run(scn, results, out):
        print(path)
    for v, r in results.items():
        last = r.samples[-1] if r.samples else None
        if last is not None:
            print(f"{v}: sent={last.counters.sent} delivered={last.counters.delivered} "
                  f"security={last.security_rate_pct:.2f}% failure={last.node_failure_pct:.2f}% "
                  f"wall={r.wall_time_s:.2f}s", file=sys.stderr)
    return EXIT_OK


def _sweep_one(job):
    scn, param, value, out = job
    results = run_scenario(scn)
    emit_run(scn, results, out)
    return report.summary_row(param, value, results)


def cmd_sweep(args) -> int:
    base = _load(args)
    values = [v.strip() for v in (args.values or "").split(",") if v.strip()]
    if not values:
        raise CliError("sweep needs at least one value (--values a,b,c)", EXIT_CONFIG)
    out = _out_dir(args)
    report._ensure_dir(out)
    jobs = []
    for v in values:
        scn = with_param(base, args.param, v)
        jobs.append((scn, args.param, v, out / f"{args.param.replace('.', '_')}={v}"))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    print(report.write_summary(rows, out / "summary.csv", base.variants()))
    if base.outputs.svg:
        print(report.plot_sweep(rows, args.param, out))
    return EXIT_OK


def cmd_inspect(args) -> int:
    scn = _load(args)
    variant = args.variant or ("distb" if scn.run.variant == "both" else scn.run.variant)
    world = World(scn, variant)
    at = world.end_ms if args.at is None else int(round(args.at * 1000))
    world.kernel.run_until(min(at, world.end_ms))
    snap = world.fabric.northbound()
    if world.consensus is not None:
        snap["ledger"] = {
            "height": world.consensus.longest().height,
            "stats": dict(world.consensus.stats),
        }
    json.dump(snap, sys.stdout, indent=2, sort_keys=True, default=str)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_export_chain(args) -> int:
    scn = _load(args)
    world = World(scn, "distb")
    world.run()
    chain = world.consensus.longest()
    if args.out == "-":
        export_chain(chain, sys.stdout)
        return EXIT_OK
    path = Path(args.out) if args.out else _out_dir(args) / "chain.ndjson"
    report._ensure_dir(path.parent)
    try:
        with open(path, "w") as fh:
            n = export_chain(chain, fh)
    except OSError as exc:
        raise report.ReportError(f"cannot write {path}: {exc}") from exc
    print(f"{path}\t{n} blocks")
    return EXIT_OK


def cmd_validate(args) -> int:
    if args.schema:
        sys.stdout.write(SCHEMA_DOC)
        return EXIT_OK
    if not args.cfg:
        raise CliError("validate needs a scenario file (or --schema)", EXIT_CONFIG)
    sys.stdout.write(dump_scenario(_load(args)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override scenario.seed")
    common.add_argument("--out-dir", help="output directory (default $DISTB_OUT_DIR or ./out)")
    common.add_argument("--trace", action="store_true", help="write per-event trace files")
    common.add_argument("--allow-nonpaper", action="store_true",
                        help="accept packet sizes outside 256/800/1024")

    p = argparse.ArgumentParser(prog="distb", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="run one scenario")
    r.add_argument("cfg")
    r.add_argument("--variant", choices=("core", "distb", "both"))
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", parents=[common], help="one run per parameter value")
    s.add_argument("cfg")
    s.add_argument("--param", required=True)
    s.add_argument("--values", required=True, help="comma-separated list")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--variant", choices=("core", "distb", "both"))
    s.set_defaults(func=cmd_sweep)

    i = sub.add_parser("inspect", parents=[common], help="dump flow tables and counters")
    i.add_argument("cfg")
    i.add_argument("--at", type=float, help="simulated second to stop at (default: end)")
    i.add_argument("--variant", choices=("core", "distb"))
    i.set_defaults(func=cmd_inspect)

    e = sub.add_parser("export-chain", parents=[common], help="write the ledger as NDJSON")
    e.add_argument("cfg")
    e.add_argument("--out", help="file path, or - for stdout")
    e.set_defaults(func=cmd_export_chain)

    v = sub.add_parser("validate", parents=[common], help="check a scenario and print it")
    v.add_argument("cfg", nargs="?")
    v.add_argument("--schema", action="store_true", help="print every key with its default")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"distb: {exc}", file=sys.stderr)
        return exc.code
    except ScenarioError as exc:
        print(f"distb: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except report.ReportError as exc:
        print(f"distb: io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"distb: io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001
        print(f"distb: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
