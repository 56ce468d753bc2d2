"""Command-line entry point.

Every command exits 0 on success. Failures print one line to stderr and exit
1: ``reedsbench: error: COMMAND: MESSAGE``, or with ``--json`` a JSON object
``{"command": ..., "error": ...}``. Usage errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .framebus import BusError
from .leaderboard import Leaderboard, LeaderboardError, make_server
from .logstore import (Codec, LogError, StreamKind, StreamSpec, SyntheticConfig,
                       validate_log, write_log)
from .planner import (GB, Packing, PlannerError, SavingsModel, SensorRate, camera_rate,
                      decode_savings, dump_time, format_tb, logging_budget, parse_duration,
                      parse_size)
from .presets import PresetError, parse_presets, presets_csv
from .protocol import ProtocolError
from .scheduler import PluginSpec, RunConfig, RunError, compare_modes, run
from .schemas import SchemaError

EXPECTED = (LogError, BusError, PlannerError, PresetError, ProtocolError, RunError,
            LeaderboardError, SchemaError, OSError)

_KINDS = {"mono": StreamKind.CAMERA_MONO, "rgb": StreamKind.CAMERA_RGB, "lidar": StreamKind.LIDAR}


class CliError(Exception):
    pass


def _emit(args, doc: dict, text: str) -> None:
    if args.json:
        print(json.dumps(doc, sort_keys=True))
    else:
        print(text)


def parse_stream(text: str, codec: Codec) -> StreamSpec:
    """``KIND[:WxH][@RATE]``, e.g. ``mono``, ``rgb:1920x1080@40``, ``mono:640x480``."""
    head, _, rate = text.partition("@")
    kind, _, size = head.partition(":")
    if kind not in _KINDS:
        raise CliError(f"unknown stream kind {kind!r}")
    spec = StreamSpec(_KINDS[kind], codec=codec)
    if size:
        try:
            w, h = (int(v) for v in size.lower().split("x"))
        except ValueError:
            raise CliError(f"bad stream size {size!r}") from None
        spec = StreamSpec(spec.kind, w, h, spec.bit_depth, None, codec)
    if rate:
        try:
            spec = StreamSpec(spec.kind, spec.width, spec.height, spec.bit_depth, float(rate), codec)
        except ValueError:
            raise CliError(f"bad stream rate {rate!r}") from None
    return spec


def parse_plugins(values: list[str]) -> list[PluginSpec]:
    specs = []
    for value in values:
        parts = [value] if value.startswith("cmd:") else value.split(",")
        specs.extend(PluginSpec.parse(p) for p in parts if p.strip())
    return specs


# --------------------------------------------------------------------------
# commands


def cmd_gen_log(args) -> int:
    codec = Codec.RAW if args.codec == "raw16" else Codec.SCENE
    streams = [parse_stream(s, codec) for s in (args.stream or ["mono"])]
    cfg = SyntheticConfig(seed=args.seed, duration_s=parse_duration(args.duration),
                          streams=streams, object_count=args.objects)
    summary = write_log(cfg, args.out)
    records = sum(summary.record_counts.values())
    _emit(args, summary.to_dict(),
          f"{summary.path}: {records} records, {summary.size_bytes} bytes, sha256 {summary.sha256}")
    return 0


def cmd_validate_log(args) -> int:
    report = validate_log(args.log)
    lines = [f"{args.log}: {'ok' if report.ok else 'INVALID'} "
             f"({report.records} records, {report.index_entries} index entries)"]
    lines += [f"  {v}" for v in report.violations]
    _emit(args, report.to_dict(), "\n".join(lines))
    return 0 if report.ok else 1


def _run_config(args) -> RunConfig:
    return RunConfig(
        log=args.log,
        plugins=parse_plugins(args.plugins),
        presets=parse_presets(args.presets),
        mode=getattr(args, "mode", "parallel"),
        slice_length_ns=int(parse_duration(args.slice) * 1e9),
        slot_count=args.slots,
        seed=args.seed,
        stream_id=args.stream,
        max_frames=args.max_frames,
        decode_cost_s=parse_duration(args.decode_cost),
        result_timeout_s=parse_duration(args.result_timeout),
    )


def cmd_run(args) -> int:
    report = run(_run_config(args))
    path = report.write(args.out)
    doc = dict(report.to_dict(), report_path=str(path))
    failed = [e for e in report.entries if e["status"] != "ok"]
    text = str(path)
    if failed:
        text += f"\n{len(failed)} of {len(report.entries)} entries failed"
    _emit(args, doc, text)
    return 0


def cmd_compare(args) -> int:
    cmp = compare_modes(_run_config(args))
    out = Path(args.out)
    paths = {mode: str(r.write(out)) for mode, r in cmp.pop("reports").items()}
    cmp["report_paths"] = paths
    path = out / f"{cmp['parallel']['run_id']}.comparison.json"
    path.write_text(json.dumps(cmp, indent=2, sort_keys=True) + "\n")
    doc = dict(cmp, comparison_path=str(path))
    wall = cmp["wall_clock_ratio"]
    text = "\n".join([
        str(path),
        f"decode_count parallel={cmp['parallel']['counters']['decode_count']} "
        f"naive={cmp['naive']['counters']['decode_count']}",
        f"decode ratio {cmp['decode_ratio']:g} (parallel fraction {cmp['parallel_decode_fraction']})",
        f"wall-clock ratio {wall:.2f}" if wall is not None else "wall-clock ratio n/a",
        "PARTIAL: one mode reported failures" if cmp["partial"] else "",
    ]).rstrip()
    _emit(args, doc, text)
    return 0


def cmd_serve(args) -> int:
    server = make_server(Leaderboard(args.store), args.host, args.port)
    host, port = server.server_address[:2]
    _emit(args, {"url": f"http://{host}:{port}"}, f"listening on http://{host}:{port}")
    sys.stdout.flush()
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_ingest(args) -> int:
    board = Leaderboard(args.store)
    total = 0
    for p in args.reports:
        try:
            report = json.loads(Path(p).read_text())
        except ValueError as exc:
            raise CliError(f"{p}: not JSON: {exc}") from None
        total += board.ingest(report)
    _emit(args, {"ingested": total, "reports": len(args.reports)},
          f"ingested {total} entries from {len(args.reports)} report(s)")
    return 0


def cmd_leaderboard(args) -> int:
    board = Leaderboard(args.store)
    doc = board.query_doc(args.task, args.preset, args.limit)
    lines = [f"{'#':>3}  {'algorithm':<24} {'f1':>6} {'mean ms':>9} {'std ms':>8}  feasible  run"]
    for i, e in enumerate(doc["entries"], 1):
        lines.append(f"{i:>3}  {e['algorithm']:<24} {e['accuracy']:>6.3f} "
                     f"{e['mean_ns'] / 1e6:>9.3f} {e['std_ns'] / 1e6:>8.3f}  "
                     f"{'yes' if e['feasible'] else 'no':<8}  {e['run_id']}")
    _emit(args, doc, "\n".join(lines))
    return 0


def cmd_presets(args) -> int:
    if args.json:
        from .presets import PRESETS

        print(json.dumps({"presets": [{"preset_id": p.preset_id, "width": p.width,
                                       "height": p.height, "rate": p.rate} for p in PRESETS]},
                         sort_keys=True))
    else:
        sys.stdout.write(presets_csv())
    return 0


def cmd_plan(args) -> int:
    kind = args.plan
    if kind == "savings":
        rep = decode_savings(SavingsModel(args.n, args.m, args.p, parse_size(args.volume)))
        doc = dict(rep.to_dict(), plan="savings",
                   saved_headline=format_tb(rep.saved_volume_headline),
                   saved_strict=format_tb(rep.saved_volume_strict))
        text = "\n".join([
            f"naive decode volume       {format_tb(rep.naive_volume)}",
            f"saved (headline, m*p)     {doc['saved_headline']}",
            f"saved (strict, m*p-1)     {doc['saved_strict']}",
            f"decode ratio              {rep.decode_ratio}",
        ])
    elif kind == "camera":
        sensor = SensorRate(args.width, args.height, args.bits, args.rate, args.channels,
                            Packing(args.packing))
        rate = camera_rate(sensor)
        doc = {"plan": "camera", "bytes_per_s": rate, "gb_per_s": rate / GB}
        text = f"{rate / GB:.4f} GB/s ({rate:,.0f} B/s)"
    elif kind == "budget":
        rates = [parse_size(r) for r in args.rate]
        secs = logging_budget(rates, parse_size(args.capacity), args.compression)
        doc = {"plan": "budget", "seconds": secs, "minutes": secs / 60,
               "aggregate_bytes_per_s": sum(rates)}
        text = f"{secs:,.0f} s ({secs / 60:,.1f} min) at {sum(rates) / GB:.4f} GB/s"
    else:
        secs = dump_time(parse_size(args.volume), parse_size(args.throughput))
        doc = {"plan": "dump", "seconds": secs, "hours": secs / 3600}
        text = f"{secs:,.0f} s ({secs / 3600:,.2f} h)"
    _emit(args, doc, text)
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS,
                        help="machine-readable JSON output")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="reedsbench", parents=[common],
                                description="Decode-once evaluation harness for perception algorithms.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    g = sub.add_parser("gen-log", parents=[common], help="write a synthetic log")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--duration", default="10s")
    g.add_argument("--out", required=True)
    g.add_argument("--stream", action="append", help="KIND[:WxH][@RATE]; repeatable (default mono)")
    g.add_argument("--objects", type=int, default=3)
    g.add_argument("--codec", choices=["scene", "raw16"], default="scene")
    g.set_defaults(func=cmd_gen_log)

    v = sub.add_parser("validate-log", parents=[common], help="check a log container")
    v.add_argument("log")
    v.set_defaults(func=cmd_validate_log)

    def run_args(sp, with_mode: bool):
        sp.add_argument("--log", required=True)
        sp.add_argument("--plugins", action="append", required=True,
                        help="KIND[:COUNT] [ARGS]; comma separated or repeated")
        sp.add_argument("--presets", default="all", help="'all', '0,4,8' or '0-3'")
        if with_mode:
            sp.add_argument("--mode", choices=["parallel", "naive"], default="parallel")
        sp.add_argument("--slice", default="1s")
        sp.add_argument("--slots", type=int, default=8)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--stream", type=int, default=None, help="camera stream id")
        sp.add_argument("--max-frames", type=int, default=None)
        sp.add_argument("--decode-cost", default="0s", help="injected per-frame decode cost")
        sp.add_argument("--result-timeout", default="30s")
        sp.add_argument("--out", default="reports")

    r = sub.add_parser("run", parents=[common], help="evaluate plugins on a log")
    run_args(r, True)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", parents=[common], help="run parallel and naive modes and compare")
    run_args(c, False)
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("serve", parents=[common], help="serve the leaderboard over HTTP")
    s.add_argument("--store", default="leaderboard.jsonl")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8080)
    s.set_defaults(func=cmd_serve)

    i = sub.add_parser("ingest", parents=[common], help="add run reports to the leaderboard")
    i.add_argument("reports", nargs="+")
    i.add_argument("--store", default="leaderboard.jsonl")
    i.set_defaults(func=cmd_ingest)

    lb = sub.add_parser("leaderboard", parents=[common], help="print a ranked leaderboard")
    lb.add_argument("--store", default="leaderboard.jsonl")
    lb.add_argument("--task", default="detection")
    lb.add_argument("--preset", type=int, required=True)
    lb.add_argument("--limit", type=int, default=None)
    lb.set_defaults(func=cmd_leaderboard)

    pr = sub.add_parser("presets", parents=[common], help="print the preset table as CSV")
    pr.set_defaults(func=cmd_presets)

    pl = sub.add_parser("plan", parents=[common], help="data-logistics calculators")
    plan = pl.add_subparsers(dest="plan", metavar="PLAN", required=True)
    sv = plan.add_parser("savings", parents=[common], help="decode volume saved by fan-out")
    sv.add_argument("--volume", required=True, help="dataset size, e.g. 30TB")
    sv.add_argument("--m", type=int, required=True, help="algorithms")
    sv.add_argument("--p", type=int, required=True, help="presets")
    sv.add_argument("--n", type=int, default=1, help="frames (for operation counts)")
    cam = plan.add_parser("camera", parents=[common], help="camera data rate")
    cam.add_argument("--width", type=int, default=3208)
    cam.add_argument("--height", type=int, default=2200)
    cam.add_argument("--bits", type=int, default=10)
    cam.add_argument("--rate", type=float, default=91.0)
    cam.add_argument("--channels", type=int, default=1)
    cam.add_argument("--packing", choices=[x.value for x in Packing], default="packed")
    bud = plan.add_parser("budget", parents=[common], help="logging time until storage is full")
    bud.add_argument("--capacity", required=True, help="e.g. 30TB")
    bud.add_argument("--rate", action="append", required=True, help="sensor rate, e.g. 802.8MB/s")
    bud.add_argument("--compression", type=float, default=1.0, help="stored/raw size ratio")
    dmp = plan.add_parser("dump", parents=[common], help="time to offload logged data")
    dmp.add_argument("--volume", required=True)
    dmp.add_argument("--throughput", required=True, help="e.g. 2GB/s")
    pl.set_defaults(func=cmd_plan)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.json = getattr(args, "json", False)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, *EXPECTED) as exc:
        message = str(exc).replace("\n", " ") or type(exc).__name__
        if args.json:
            print(json.dumps({"command": args.command, "error": message}), file=sys.stderr)
        else:
            print(f"reedsbench: error: {args.command}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
