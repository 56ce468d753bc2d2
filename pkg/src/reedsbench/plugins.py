"""Reference algorithm plugins, each run as a separate process.

    python -m reedsbench.plugins KIND --socket PATH --name NAME [options]

Kinds:
  echo      returns zero detections
  oracle    returns the ground-truth boxes of the frame, read from the log
  sleeper   fixed latency (--ms)
  jitter    normally distributed latency (--mean, --std)
  crash     exits abruptly after --after frames
  rogue     sends RELEASE before RESULT (protocol violation)
"""

from __future__ import annotations

import argparse
import os
import socket
import sys
import time

import numpy as np

from .framebus import BusError, FrameBus
from .planner import parse_duration
from .protocol import (Bye, Connection, Detection, ErrorMsg, FrameDescriptor, Hello,
                       ProtocolError, Release, ResultPayload, Welcome)

KINDS = ("echo", "oracle", "sleeper", "jitter", "crash", "rogue")


class Algorithm:
    def __init__(self, args, bus: FrameBus):
        self.args = args
        self.bus = bus

    def process(self, desc: FrameDescriptor) -> list[Detection]:
        return []


class Echo(Algorithm):
    def process(self, desc):
        # touch the handle only: a stale descriptor must still be detected
        if self.bus.generation(desc.slot_index) != desc.generation:
            raise BusError("slot recycled")
        return []


class Oracle(Algorithm):
    def __init__(self, args, bus):
        super().__init__(args, bus)
        from .logstore import LogReader

        if not args.log:
            raise SystemExit("oracle needs --log")
        self.reader = LogReader(args.log)
        self._truth: dict[int, dict] = {}
        self._geoms: dict[tuple, object] = {}

    def process(self, desc):
        from .presets import Preset, crop_geometry

        m = desc.meta
        truth = self._truth.get(m.source_stream)
        if truth is None:
            truth = self._truth[m.source_stream] = self.reader.ground_truth(m.source_stream)
        stream = self.reader.streams[m.source_stream]
        key = (m.source_stream, m.width, m.height)
        geom = self._geoms.get(key)
        if geom is None:
            geom = self._geoms[key] = crop_geometry(
                stream.native_width, stream.native_height, Preset(m.preset_id, m.width, m.height, 0))
        out = []
        for obj in truth.get(m.timestamp_ns, ()):
            box = geom.map_box(obj.x, obj.y, obj.w, obj.h)
            if box is not None:
                out.append(Detection(obj.class_id, *box, 65535))
        return out


class Sleeper(Algorithm):
    def process(self, desc):
        time.sleep(self.args.ms / 1000)
        return []


class Jitter(Algorithm):
    def __init__(self, args, bus):
        super().__init__(args, bus)
        self.rng = np.random.default_rng(args.seed)
        self.mean = parse_duration(args.mean)
        self.std = parse_duration(args.std)

    def process(self, desc):
        time.sleep(max(0.0, self.rng.normal(self.mean, self.std)))
        return []


class Crash(Algorithm):
    seen = 0

    def process(self, desc):
        self.seen += 1
        if self.seen > self.args.after:
            os._exit(17)
        return []


ALGORITHMS = {"echo": Echo, "oracle": Oracle, "sleeper": Sleeper, "jitter": Jitter,
              "crash": Crash, "rogue": Echo}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reedsbench.plugins")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--socket", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--task", default="detection")
    p.add_argument("--protocol-version", type=int, default=1)
    p.add_argument("--log")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ms", type=float, default=10.0)
    p.add_argument("--mean", default="20ms")
    p.add_argument("--std", default="5ms")
    p.add_argument("--after", type=int, default=3)
    return p


def serve(args) -> int:
    sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
    sock.connect(args.socket)
    conn = Connection(sock)
    conn.send(Hello(args.name, args.task, args.protocol_version))
    welcome = conn.recv(timeout=60)
    if isinstance(welcome, ErrorMsg):
        print(f"rejected: {welcome.reason}", file=sys.stderr)
        return 3
    if not isinstance(welcome, Welcome):
        return 4
    bus = FrameBus.attach(welcome.region, writable=False)
    algo = ALGORITHMS[args.kind](args, bus)
    try:
        while True:
            msg = conn.recv()
            if isinstance(msg, Bye):
                return 0
            if isinstance(msg, ErrorMsg):
                print(f"harness error: {msg.reason}", file=sys.stderr)
                return 5
            if not isinstance(msg, FrameDescriptor):
                continue
            release = Release(msg.frame_id, msg.slot_index, msg.generation)
            if args.kind == "rogue":
                conn.send(release)
            t0 = time.perf_counter_ns()
            detections = algo.process(msg)
            elapsed = max(time.perf_counter_ns() - t0, 1)
            conn.send(ResultPayload(msg.frame_id, elapsed, tuple(detections)))
            conn.send(release)
    except ProtocolError as exc:
        print(f"protocol: {exc}", file=sys.stderr)
        return 6
    finally:
        conn.close()
        bus.close()


def main(argv=None) -> int:
    return serve(build_parser().parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
