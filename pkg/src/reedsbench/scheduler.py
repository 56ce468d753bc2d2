"""Evaluation runs: decode each frame once, fan every preset variant out to all plugins.

Parallel mode, per time slice of the log:

1. read the slice's camera records and decode each exactly once;
2. for each preset in table order, resample the selected frames and publish
   them on the shared frame bus;
3. one service thread per plugin forwards every frame descriptor, collects
   RESULT/RELEASE and releases the slot;

Scoring happens after the run on the collected results. Naive mode repeats the
fetch/decode/resample chain independently for every (plugin, preset) pair,
which is the n x m x p baseline.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import shlex
import shutil
import socket
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Callable

from .framebus import BusConfig, BusError, FrameBus, FrameMeta, scratch_dir
from .logstore import (CLASS_NAMES, FrameDecoder, LogError, LogReader, file_sha256,
                       stream_dict, validate_log)
from .planner import SavingsModel, decode_savings
from .presets import PRESETS, Preset, crop_geometry, decimate
from .protocol import (ConnectionClosed, Connection, ErrorCode, FrameDescriptor, PluginRegistry,
                       PluginSession, ProtocolError, Welcome, handshake)
from .scoring import Box, score_detections, timing_stats

log = logging.getLogger(__name__)

REPORT_SCHEMA = "reedsbench.run_report/1"
COMPARISON_SCHEMA = "reedsbench.comparison/1"
TIMING_KEYS = frozenset({"timing", "wall_clock_s", "wall_clock_ratio", "created_at"})


class RunError(Exception):
    pass


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class PluginSpec:
    """How to launch one kind of plugin, ``count`` times.

    Text form: ``KIND[:COUNT] [ARGS...]`` for bundled plugins, e.g.
    ``echo:4`` or ``jitter --mean 20ms --std 5ms``; ``cmd:PROGRAM [ARGS...]``
    runs an external executable speaking the plugin protocol.
    """

    kind: str
    args: tuple[str, ...] = ()
    count: int = 1

    @classmethod
    def parse(cls, text: str) -> "PluginSpec":
        parts = shlex.split(text)
        if not parts:
            raise RunError("empty plugin spec")
        head, args = parts[0], tuple(parts[1:])
        if head.startswith("cmd:"):
            return cls("cmd", (head[4:],) + args, 1)
        kind, _, count = head.partition(":")
        try:
            n = int(count) if count else 1
        except ValueError:
            raise RunError(f"bad plugin count in {text!r}") from None
        if n < 0:
            raise RunError(f"bad plugin count in {text!r}")
        from .plugins import KINDS

        if kind not in KINDS:
            raise RunError(f"unknown plugin kind {kind!r}")
        return cls(kind, args, n)

    def __str__(self) -> str:
        head = f"{self.kind}:{self.count}" if self.count != 1 else self.kind
        return " ".join([head, *self.args]) if self.kind != "cmd" else "cmd:" + " ".join(self.args)

    def instances(self) -> list[tuple[str, list[str]]]:
        """(name, argv prefix) per instance."""
        if self.kind == "cmd":
            name = Path(self.args[0]).stem
            return [(name, list(self.args))]
        base = [sys.executable, "-m", "reedsbench.plugins", self.kind, *self.args]
        label = " ".join([self.kind, *self.args])
        if self.count == 1:
            return [(label, base)]
        return [(f"{label}#{i}", base) for i in range(self.count)]


@dataclass
class RunConfig:
    log: str
    plugins: list[PluginSpec]
    presets: list[Preset] = field(default_factory=lambda: list(PRESETS))
    mode: str = "parallel"
    slice_length_ns: int = 1_000_000_000
    slot_count: int = 8
    seed: int = 0
    stream_id: int | None = None
    max_frames: int | None = None
    decode_cost_s: float = 0.0
    result_timeout_s: float = 30.0
    handshake_timeout_s: float = 60.0
    run_id: str | None = None

    def validate(self) -> None:
        if not self.plugins or sum(p.count for p in self.plugins) == 0:
            raise RunError("no plugins")
        if not self.presets:
            raise RunError("no presets")
        if self.mode not in ("parallel", "naive"):
            raise RunError(f"unknown mode {self.mode!r}")
        if self.slice_length_ns <= 0:
            raise RunError("slice_length must be positive")
        if self.slot_count < 1:
            raise RunError("slot_count must be >= 1")
        ids = [p.preset_id for p in self.presets]
        if len(set(ids)) != len(ids):
            raise RunError("duplicate presets")
        self.presets = sorted(self.presets, key=lambda p: p.preset_id)

    def echo(self) -> dict:
        return {
            "log": str(self.log),
            "plugins": [str(p) for p in self.plugins],
            "presets": [p.preset_id for p in self.presets],
            "mode": self.mode,
            "slice_length_ns": self.slice_length_ns,
            "slot_count": self.slot_count,
            "seed": self.seed,
            "stream_id": self.stream_id,
            "max_frames": self.max_frames,
            "decode_cost_s": self.decode_cost_s,
        }


@dataclass
class RunCounters:
    frames_read: int = 0
    decode_count: int = 0
    bytes_decoded: int = 0
    publishes: int = 0
    results: int = 0
    records_fetched: int = 0
    failures: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        row = self.to_dict()
        row["failures"] = "; ".join(self.failures)
        w.writerow(list(row))
        w.writerow(list(row.values()))
        return buf.getvalue()


@dataclass
class RunReport:
    run_id: str
    config: dict
    stream: dict
    presets: list[dict]
    entries: list[dict]
    counters: RunCounters
    complete: bool
    wall_clock_s: float
    created_at: str

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "run_id": self.run_id,
            "created_at": self.created_at,
            "complete": self.complete,
            "config": self.config,
            "stream": self.stream,
            "presets": self.presets,
            "entries": self.entries,
            "counters": self.counters.to_dict(),
            "wall_clock_s": self.wall_clock_s,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def entry(self, algorithm: str, preset_id: int) -> dict:
        for e in self.entries:
            if e["algorithm"] == algorithm and e["preset_id"] == preset_id:
                return e
        raise KeyError((algorithm, preset_id))

    def write(self, out_dir: str | os.PathLike) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{self.run_id}.{self.config['mode']}.json"
        path.write_text(self.to_json())
        path.with_suffix(".counters.csv").write_text(self.counters.to_csv())
        return path


def strip_timing(obj):
    """Copy of a report/comparison with every timing-dependent field removed."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


# --------------------------------------------------------------------------
# plugin processes


@dataclass
class PluginProcess:
    name: str
    argv: list[str]
    proc: subprocess.Popen | None = None
    session: PluginSession | None = None
    failure: str | None = None
    stderr_path: Path | None = None

    @property
    def ok(self) -> bool:
        return self.failure is None

    def kill(self) -> None:
        if self.proc is not None and self.proc.poll() is None:
            self.proc.kill()


class PluginPool:
    """Launches plugin processes, runs the handshake, and tears everything down."""

    def __init__(self, specs: list[PluginSpec], log_path: str, seed: int,
                 handshake_timeout_s: float = 60.0):
        self.tmp = Path(tempfile.mkdtemp(prefix="rb-", dir=scratch_dir()))
        self.socket_path = str(self.tmp / "ctl.sock")
        self.handshake_timeout_s = handshake_timeout_s
        self.plugins: list[PluginProcess] = []
        k = 0
        for spec in specs:
            for name, argv in spec.instances():
                argv = argv + ["--socket", self.socket_path, "--name", name,
                               "--log", str(log_path), "--seed", str(seed + k)]
                self.plugins.append(PluginProcess(name, argv))
                k += 1
        self.registry = PluginRegistry(len(self.plugins))
        self._listener = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        self._listener.bind(self.socket_path)
        self._listener.listen(len(self.plugins) + 4)

    def start(self, welcome_for: Callable[[int], Welcome]) -> None:
        """Spawn every plugin and complete the handshakes.

        ``welcome_for(index)`` gives the bus summary for the plugin at that
        position. Plugins that fail to connect or are rejected are marked failed.
        """
        env = dict(os.environ)
        src = str(Path(__file__).resolve().parents[1])
        env["PYTHONPATH"] = src + os.pathsep + env.get("PYTHONPATH", "")
        for i, p in enumerate(self.plugins):
            p.stderr_path = self.tmp / f"plugin-{i}.err"
            with open(p.stderr_path, "wb") as err:
                p.proc = subprocess.Popen(p.argv, stdin=subprocess.DEVNULL,
                                          stdout=subprocess.DEVNULL, stderr=err, env=env)
        lookup = _Lookup(self.plugins, welcome_for)
        pending = len(self.plugins)
        deadline = time.monotonic() + self.handshake_timeout_s
        while pending:
            remaining = deadline - time.monotonic()
            if remaining <= 0 or all(p.proc.poll() is not None for p in self.plugins
                                     if p.session is None and p.failure is None):
                break
            self._listener.settimeout(min(remaining, 0.5))
            try:
                sock, _ = self._listener.accept()
            except socket.timeout:
                continue
            sock.settimeout(None)
            conn = Connection(sock)
            try:
                session = handshake(conn, self.registry, lookup, timeout=max(remaining, 1.0))
            except ProtocolError as exc:
                log.warning("handshake rejected: %s", exc)
                conn.close()
                pending -= 1
                continue
            self.plugins[lookup.last].session = session
            pending -= 1
        for p in self.plugins:
            if p.session is None and p.failure is None:
                if p.proc is not None:
                    try:
                        p.proc.wait(timeout=2.0)
                    except subprocess.TimeoutExpired:
                        p.kill()
                        p.proc.wait()
                p.failure = "handshake failed" + _stderr_tail(p.stderr_path)

    def close(self) -> None:
        for p in self.plugins:
            if p.session is not None:
                p.session.bye()
        deadline = time.monotonic() + 5.0
        for p in self.plugins:
            if p.proc is None:
                continue
            try:
                p.proc.wait(timeout=max(deadline - time.monotonic(), 0.1))
            except subprocess.TimeoutExpired:
                p.kill()
                p.proc.wait()
            if p.session is not None:
                p.session.conn.close()
        self._listener.close()
        shutil.rmtree(self.tmp, ignore_errors=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _stderr_tail(path: Path | None) -> str:
    try:
        lines = path.read_text(errors="replace").strip().splitlines()
    except (OSError, AttributeError):
        return ""
    return f": {lines[-1]}" if lines else ""


class _Lookup:
    """Welcome factory keyed by algorithm name.

    Each name claims the first unclaimed plugin launched under it, so the
    consumer id always equals the plugin's launch position.
    """

    def __init__(self, plugins: list[PluginProcess], welcome_for: Callable[[int], Welcome]):
        self.plugins = plugins
        self.welcome_for = welcome_for
        self.claimed: set[int] = set()
        self.last = -1

    def __call__(self, name: str) -> Welcome:
        for i, p in enumerate(self.plugins):
            if p.name == name and i not in self.claimed:
                self.claimed.add(i)
                self.last = i
                return self.welcome_for(i)
        raise ProtocolError(ErrorCode.SEQUENCE, f"unexpected algorithm {name!r}")


# --------------------------------------------------------------------------
# result collection


class Collector:
    def __init__(self):
        self._lock = threading.Lock()
        # (plugin, preset_id) -> list of (frame_id, detections, harness_ns, plugin_ns)
        self.results: dict[tuple[str, int], list] = {}
        self.order_violations: list[str] = []
        self.count = 0

    def record(self, plugin: str, desc: FrameDescriptor, result, harness_ns: int) -> None:
        with self._lock:
            rows = self.results.setdefault((plugin, desc.preset_id), [])
            if rows and rows[-1][0] >= desc.frame_id:
                self.order_violations.append(
                    f"{plugin}: preset {desc.preset_id} frame {desc.frame_id} after {rows[-1][0]}")
            rows.append((desc.frame_id, result.detections, harness_ns, result.exec_time_ns))
            self.count += 1


def _service(plugin: PluginProcess, bus: FrameBus, consumer_id: int, collector: Collector,
             timeout_s: float) -> None:
    session = plugin.session
    try:
        while True:
            view = bus.consume_next(consumer_id)
            if view is None:
                return
            desc = FrameDescriptor(view.meta.frame_id, view.meta.preset_id, bus.name,
                                   view.handle.slot_index, view.handle.generation, view.meta)
            try:
                result, harness_ns = session.exchange(desc, timeout_s)
            except ProtocolError as exc:
                if exc.code == ErrorCode.TIMEOUT:
                    raise ProtocolError(exc.code, f"straggler: no result within {timeout_s:g} s") from None
                raise
            # the slot must not have been recycled while this plugin held it
            view.check()
            bus.release(consumer_id, view.handle)
            collector.record(plugin.name, desc, result, harness_ns)
    except (ProtocolError, BusError) as exc:
        reason = exc.reason if isinstance(exc, ProtocolError) else str(exc)
        if isinstance(exc, ConnectionClosed) and plugin.proc is not None:
            # the socket closes before the exit status is reaped
            try:
                reason = f"plugin exited with code {plugin.proc.wait(timeout=2.0)}"
            except subprocess.TimeoutExpired:
                pass
        plugin.failure = reason
        if not isinstance(exc, ConnectionClosed):
            session.fail(exc if isinstance(exc, ProtocolError) else ProtocolError(ErrorCode.CLOSED, reason))
        plugin.kill()
        try:
            bus.deregister(consumer_id)
        except BusError:
            pass


# --------------------------------------------------------------------------
# the run


@dataclass
class _Plan:
    reader: LogReader
    stream: object
    timestamps: list[int]
    selections: dict[int, set[int]]
    geometries: dict[int, object]
    slot_capacity: int


def _plan(config: RunConfig, reader: LogReader) -> _Plan:
    cams = reader.camera_streams()
    if config.stream_id is None:
        if not cams:
            raise RunError("log has no camera stream")
        stream = min(cams, key=lambda s: s.stream_id)
    else:
        stream = reader.streams.get(config.stream_id)
        if stream is None or not stream.kind.is_camera:
            raise RunError(f"stream {config.stream_id} is not a camera stream")
    timestamps = reader.timestamps(stream.stream_id)
    if config.max_frames is not None:
        timestamps = timestamps[:config.max_frames]
    if not timestamps:
        raise RunError("no frames to evaluate")
    geometries, selections = {}, {}
    capacity = 0
    for p in config.presets:
        g = crop_geometry(stream.native_width, stream.native_height, p)
        if g.upscales:
            raise RunError(f"upscale refused: preset {p.preset_id} ({p.label}) exceeds "
                           f"{stream.native_width}x{stream.native_height}")
        geometries[p.preset_id] = g
        if p.native_rate:
            selections[p.preset_id] = set(range(len(timestamps)))
        else:
            rate = min(float(p.rate), stream.native_rate)
            selections[p.preset_id] = set(decimate(timestamps, rate))
        capacity = max(capacity, p.width * p.height * stream.channels * 2)
    return _Plan(reader, stream, timestamps, selections, geometries, capacity)


def _slices(plan: _Plan, slice_ns: int):
    t_first, t_last = plan.timestamps[0], plan.timestamps[-1]
    t = t_first
    while t <= t_last:
        yield t, min(t + slice_ns, t_last + 1)
        t += slice_ns


def _publish(bus: FrameBus, frame, seq: int, preset: Preset, plan: _Plan, counters: RunCounters):
    from .presets import resample

    out = resample(frame, plan.geometries[preset.preset_id])
    meta = FrameMeta.for_array(out, frame_id=seq + 1, source_stream=plan.stream.stream_id,
                               preset_id=preset.preset_id, bit_depth=plan.stream.bit_depth,
                               timestamp_ns=plan.timestamps[seq])
    handle = bus.acquire_slot()
    bus.write_frame(handle, out)
    bus.publish(handle, meta)
    counters.publishes += 1


def _bus_name(run_id: str, suffix: str) -> str:
    return f"rb-{run_id[-12:]}-{os.getpid()}-{suffix}"


def _run_parallel(config, plan, pool, counters, collector, decoder, run_id):
    m = len(pool.plugins)
    bus_cfg = BusConfig(config.slot_count, plan.slot_capacity, m,
                        publish_timeout_ms=int((2 * config.result_timeout_s + 10) * 1000),
                        release_timeout_ms=int((config.result_timeout_s + 5) * 1000))
    bus = FrameBus.create(_bus_name(run_id, "p"), bus_cfg)
    threads = []
    try:
        welcome = Welcome(0, bus.name, bus.slot_count, bus.slot_capacity, m)
        pool.start(lambda i: replace(welcome, consumer_id=i))
        for i, p in enumerate(pool.plugins):
            if not p.ok:
                bus.deregister(i)
                continue
            t = threading.Thread(target=_service, name=f"svc-{p.name}",
                                 args=(p, bus, i, collector, config.result_timeout_s), daemon=True)
            t.start()
            threads.append(t)
        for t0, t1 in _slices(plan, config.slice_length_ns):
            records = plan.reader.read_slice(t0, t1, plan.stream.stream_id)
            counters.records_fetched += len(records)
            counters.frames_read += len(records)
            frames = []
            for rec in records:
                frames.append(decoder.decode(rec))
                counters.decode_count += 1
                counters.bytes_decoded += frames[-1].nbytes
            for preset in config.presets:
                chosen = plan.selections[preset.preset_id]
                for rec, frame in zip(records, frames):
                    if rec.seq in chosen:
                        _publish(bus, frame, rec.seq, preset, plan, counters)
            del frames
        bus.shutdown()
        for t in threads:
            t.join()
    finally:
        bus.shutdown()
        for t in threads:
            t.join(timeout=config.result_timeout_s + 5)
        bus.close()


def _run_naive(config, plan, pool, counters, collector, decoder, run_id):
    m = len(pool.plugins)
    buses = []
    try:
        for i in range(m):
            cfg = BusConfig(config.slot_count, plan.slot_capacity, 1,
                            publish_timeout_ms=int((2 * config.result_timeout_s + 10) * 1000),
                            release_timeout_ms=int((config.result_timeout_s + 5) * 1000))
            buses.append(FrameBus.create(_bus_name(run_id, f"n{i}"), cfg))
        pool.start(lambda i: Welcome(0, buses[i].name, buses[i].slot_count,
                                     buses[i].slot_capacity, 1))
        counters.frames_read = len(plan.timestamps)
        for i, p in enumerate(pool.plugins):
            bus = buses[i]
            if not p.ok:
                bus.deregister(0)
                counters.failures.append(f"{p.name}: {p.failure}")
                continue
            t = threading.Thread(target=_service, name=f"svc-{p.name}",
                                 args=(p, bus, 0, collector, config.result_timeout_s), daemon=True)
            t.start()
            for preset in config.presets:
                if not p.ok:
                    break
                chosen = plan.selections[preset.preset_id]
                for t0, t1 in _slices(plan, config.slice_length_ns):
                    for rec in plan.reader.read_slice(t0, t1, plan.stream.stream_id):
                        counters.records_fetched += 1
                        frame = decoder.decode(rec)
                        counters.decode_count += 1
                        counters.bytes_decoded += frame.nbytes
                        if rec.seq in chosen:
                            _publish(bus, frame, rec.seq, preset, plan, counters)
                bus.wait_idle()
            bus.shutdown()
            t.join()
            if not p.ok:
                counters.failures.append(f"{p.name}: {p.failure}")
            bus.close()
    finally:
        for bus in buses:
            bus.shutdown()
            bus.close()


def _run_id(config: RunConfig, log_sha: str) -> str:
    if config.run_id:
        return config.run_id
    echo = dict(config.echo(), mode=None, log_sha256=log_sha)
    digest = hashlib.sha256(json.dumps(echo, sort_keys=True).encode()).hexdigest()
    return f"run-{digest[:16]}"


def _score(config, plan, pool, collector) -> list[dict]:
    truth_by_ts = plan.reader.ground_truth(plan.stream.stream_id)
    truth = {}
    for seq, ts in enumerate(plan.timestamps):
        truth[seq + 1] = [Box(o.class_id, o.x, o.y, o.w, o.h) for o in truth_by_ts.get(ts, ())]
    entries = []
    for p in pool.plugins:
        task = p.session.task if p.session else "detection"
        for preset in config.presets:
            rows = collector.results.get((p.name, preset.preset_id), [])
            entry = {
                "algorithm": p.name,
                "task": task,
                "preset_id": preset.preset_id,
                "status": "ok" if p.ok else "failed",
                "failure": p.failure,
                "frames_expected": len(plan.selections[preset.preset_id]),
                "frames_delivered": len(rows),
                "duplicate_deliveries": len(rows) - len({r[0] for r in rows}),
                "accuracy": None,
                "timing": None,
            }
            if p.ok and len(rows) != entry["frames_expected"]:
                entry["status"] = "failed"
                entry["failure"] = "incomplete delivery"
            if rows:
                results = {fid: [Box(d.cls, d.x, d.y, d.w, d.h, d.score) for d in dets]
                           for fid, dets, _, _ in rows}
                gt = {fid: truth.get(fid, []) for fid, *_ in rows}
                acc = score_detections(results, gt, plan.geometries[preset.preset_id],
                                       CLASS_NAMES, task)
                rate = preset.effective_rate(plan.stream.native_rate)
                entry["accuracy"] = acc.to_dict()
                entry["timing"] = {
                    "harness": timing_stats([r[2] for r in rows], rate).to_dict(),
                    "plugin": timing_stats([r[3] for r in rows], rate).to_dict(),
                    "source": "harness",
                }
            entries.append(entry)
    return entries


def run(config: RunConfig) -> RunReport:
    """Execute one evaluation run and return its report."""
    config.validate()
    started = time.perf_counter()
    validation = validate_log(config.log)
    if not validation.ok:
        raise RunError(f"log failed validation: {validation.violations[0]}")
    reader = LogReader(config.log)
    try:
        plan = _plan(config, reader)
        run_id = _run_id(config, file_sha256(config.log))
        counters = RunCounters()
        collector = Collector()
        decoder = FrameDecoder(plan.stream, config.decode_cost_s)
        complete = True
        with PluginPool(config.plugins, config.log, config.seed,
                        config.handshake_timeout_s) as pool:
            runner = _run_parallel if config.mode == "parallel" else _run_naive
            try:
                runner(config, plan, pool, counters, collector, decoder, run_id)
            except (LogError, OSError) as exc:
                complete = False
                counters.failures.append(f"aborted: {exc}")
            if config.mode == "parallel":
                counters.failures.extend(f"{p.name}: {p.failure}" for p in pool.plugins if not p.ok)
            counters.results = collector.count
            counters.failures.extend(collector.order_violations)
            entries = _score(config, plan, pool, collector)
    finally:
        reader.close()
    return RunReport(
        run_id=run_id,
        config=config.echo(),
        stream=stream_dict(plan.stream),
        presets=[{"preset_id": p.preset_id, "width": p.width, "height": p.height,
                  "rate": p.rate} for p in config.presets],
        entries=entries,
        counters=counters,
        complete=complete,
        wall_clock_s=time.perf_counter() - started,
        created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )


# --------------------------------------------------------------------------
# mode comparison


def compare_modes(config: RunConfig) -> dict:
    """Run the same config in parallel and naive mode and compare their cost."""
    reports = {}
    partial = False
    for mode in ("parallel", "naive"):
        reports[mode] = run(replace(config, mode=mode))
        partial |= not reports[mode].complete or bool(reports[mode].counters.failures)
    par, nai = reports["parallel"], reports["naive"]
    m = sum(len(s.instances()) for s in config.plugins)
    p = len(config.presets)
    n = par.counters.frames_read
    model = decode_savings(SavingsModel(n, m, p, par.counters.bytes_decoded))
    frac = Fraction(par.counters.decode_count, nai.counters.decode_count) \
        if nai.counters.decode_count else None
    return {
        "schema": COMPARISON_SCHEMA,
        "n": n,
        "m": m,
        "p": p,
        "partial": partial,
        "parallel": _mode_summary(par),
        "naive": _mode_summary(nai),
        "decode_ratio": (nai.counters.decode_count / par.counters.decode_count
                         if par.counters.decode_count else None),
        "parallel_decode_fraction": str(frac) if frac is not None else None,
        "bytes_ratio": (nai.counters.bytes_decoded / par.counters.bytes_decoded
                        if par.counters.bytes_decoded else None),
        "wall_clock_ratio": nai.wall_clock_s / par.wall_clock_s if par.wall_clock_s else None,
        "model": model.to_dict(),
        "model_agrees": (model.naive_ops == nai.counters.decode_count
                         and model.parallel_ops == par.counters.decode_count),
        "reports": {"parallel": par, "naive": nai},
    }


def _mode_summary(report: RunReport) -> dict:
    return {
        "run_id": report.run_id,
        "complete": report.complete,
        "counters": report.counters.to_dict(),
        "wall_clock_s": report.wall_clock_s,
    }
