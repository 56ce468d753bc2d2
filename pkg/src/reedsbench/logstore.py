"""Chunked sensor-log container ("RLOG") and a synthetic scene generator.

File layout, little-endian throughout::

    header   "RLOG" | version u16 | stream_count u16 | meta_len u32 | meta (JSON)
    streams  stream_count x StreamInfo (24 bytes each)
    body     chunks: stream_id u16 | timestamp_ns u64 | payload_len u32 | payload
    index    "RIDX" | entry_count u64 | entries (stream_id u16, timestamp_ns u64, offset u64)
    trailer  index_offset u64

Camera payloads come in two codecs. ``raw16`` stores pixels unpacked in
16-bit words. ``scene`` stores the compact scene state of one synthetic frame
(noise seed, frame seed, object boxes and intensities); decoding renders the
full-resolution image from it, so fetching is cheap and decoding is the
expensive step, as with a real video codec.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import math
import os
import struct
import threading
import time
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"RLOG"
INDEX_MAGIC = b"RIDX"
VERSION = 1
NO_STREAM = 0xFFFF

_HEADER = struct.Struct("<4sHHI")
_STREAM = struct.Struct("<HBBIIBxHd")
_CHUNK = struct.Struct("<HQI")
_INDEX_HEAD = struct.Struct("<4sQ")
_INDEX_ENTRY = struct.Struct("<HQQ")
_TRAILER = struct.Struct("<Q")

_SCENE_HEAD = struct.Struct("<QQH")
_SCENE_OBJ = struct.Struct("<IHIIIIH")
_GT_HEAD = struct.Struct("<H")
_GT_OBJ = struct.Struct("<IHIIII")
LIDAR_POINT = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                        ("intensity", "<u2"), ("pad", "<u2")])

NOISE_ROWS = 256  # extra rows of the cached noise plane; frames roll through it

CLASS_NAMES = {0: "sailboat", 1: "motorboat", 2: "ferry", 3: "cargo_ship",
               4: "buoy", 5: "person", 6: "bird", 7: "bridge"}


class LogError(Exception):
    pass


class StreamKind(IntEnum):
    CAMERA_MONO = 0
    CAMERA_RGB = 1
    LIDAR = 2
    GROUND_TRUTH = 3

    @property
    def is_camera(self) -> bool:
        return self in (StreamKind.CAMERA_MONO, StreamKind.CAMERA_RGB)


class Codec(IntEnum):
    RAW = 0
    SCENE = 1


@dataclass(frozen=True)
class StreamInfo:
    stream_id: int
    kind: StreamKind
    native_width: int = 3208
    native_height: int = 2200
    bit_depth: int = 10
    native_rate: float = 91.0
    codec: Codec = Codec.SCENE
    ref_stream: int = NO_STREAM  # camera a ground-truth stream annotates

    @property
    def channels(self) -> int:
        return 3 if self.kind == StreamKind.CAMERA_RGB else 1

    @property
    def frame_bytes(self) -> int:
        return self.native_width * self.native_height * self.channels * 2

    def pack(self) -> bytes:
        return _STREAM.pack(self.stream_id, int(self.kind), int(self.codec),
                            self.native_width, self.native_height, self.bit_depth,
                            self.ref_stream, float(self.native_rate))

    @classmethod
    def unpack(cls, raw: bytes) -> "StreamInfo":
        sid, kind, codec, w, h, depth, ref, rate = _STREAM.unpack(raw)
        try:
            return cls(sid, StreamKind(kind), w, h, depth, rate, Codec(codec), ref)
        except ValueError as exc:
            raise LogError(f"bad stream descriptor: {exc}") from None


@dataclass(frozen=True)
class GroundTruthObject:
    object_id: int
    class_id: int
    x: int
    y: int
    w: int
    h: int

    @property
    def class_label(self) -> str:
        return CLASS_NAMES.get(self.class_id, str(self.class_id))


@dataclass(frozen=True)
class GroundTruthRecord:
    timestamp_ns: int
    objects: tuple[GroundTruthObject, ...]


@dataclass(frozen=True)
class Record:
    stream_id: int
    timestamp_ns: int
    payload: bytes
    seq: int = -1  # ordinal within its stream


@dataclass(frozen=True)
class IndexEntry:
    stream_id: int
    timestamp_ns: int
    offset: int


# --------------------------------------------------------------------------
# synthetic scenes


@dataclass(frozen=True)
class StreamSpec:
    kind: StreamKind = StreamKind.CAMERA_MONO
    width: int = 3208
    height: int = 2200
    bit_depth: int = 10
    rate: float | None = None
    codec: Codec = Codec.SCENE

    def resolved_rate(self) -> float:
        if self.rate is not None:
            return float(self.rate)
        return {StreamKind.CAMERA_MONO: 91.0, StreamKind.CAMERA_RGB: 40.0,
                StreamKind.LIDAR: 10.0}[self.kind]


@dataclass
class SyntheticConfig:
    seed: int = 0
    duration_s: float = 10.0
    streams: list[StreamSpec] = field(default_factory=lambda: [StreamSpec()])
    object_count: int = 3
    lidar_points: int = 1024
    # vertical band objects stay inside, as fractions of frame height;
    # [0.3, 0.7] is visible after every built-in preset's crop
    band: tuple[float, float] = (0.3, 0.7)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["streams"] = [
            {"kind": s.kind.name.lower(), "width": s.width, "height": s.height,
             "bit_depth": s.bit_depth, "rate": s.resolved_rate(), "codec": s.codec.name.lower()}
            for s in self.streams
        ]
        d["band"] = list(self.band)
        return d


def _triangle(phase: float) -> float:
    phase %= 2.0
    return phase if phase <= 1.0 else 2.0 - phase


def object_boxes(seed: int, object_count: int, t_ns: int, width: int, height: int,
                 band: tuple[float, float] = (0.3, 0.7)) -> list[GroundTruthObject]:
    """Positions of every synthetic object at time ``t_ns``.

    A pure function of (seed, object_id, t): each object bounces along a
    triangle wave inside the band with per-object size, speed and phase.
    """
    lo_y, hi_y = int(band[0] * height), int(band[1] * height)
    lo_x, hi_x = int(0.02 * width), int(0.98 * width)
    t = t_ns / 1e9
    out = []
    for oid in range(object_count):
        rng = np.random.default_rng([seed, oid])
        bw = max(2, int(rng.uniform(0.04, 0.12) * width))
        bh = max(2, min(int(rng.uniform(0.05, 0.15) * height), hi_y - lo_y))
        vx, vy = rng.uniform(0.05, 0.4, size=2)
        px, py = rng.uniform(0.0, 2.0, size=2)
        cls = int(rng.integers(0, len(CLASS_NAMES)))
        x = lo_x + math.floor(_triangle(px + vx * t) * (hi_x - lo_x - bw))
        y = lo_y + math.floor(_triangle(py + vy * t) * (hi_y - lo_y - bh))
        out.append(GroundTruthObject(oid, cls, x, y, bw, bh))
    return out


def object_intensity(object_id: int, bit_depth: int) -> int:
    top = (1 << bit_depth) - 1
    # distinct for the first 700 ids, well above the noise floor
    return int(top * (300 + (object_id * 37) % 700) / 1000)


class _NoiseCache:
    def __init__(self):
        self._lock = threading.Lock()
        self._planes: dict[tuple, np.ndarray] = {}

    def get(self, seed: int, width: int, height: int, channels: int, bit_depth: int) -> np.ndarray:
        key = (seed, width, height, channels, bit_depth)
        with self._lock:
            plane = self._planes.get(key)
            if plane is None:
                if len(self._planes) >= 4:
                    self._planes.clear()
                rng = np.random.default_rng(seed)
                shape = (height + NOISE_ROWS, width) + ((channels,) if channels > 1 else ())
                plane = rng.integers(0, (1 << bit_depth) // 5, size=shape, dtype=np.uint16)
                self._planes[key] = plane
            return plane


_noise = _NoiseCache()


def render_frame(stream: StreamInfo, noise_seed: int, frame_seed: int,
                 objects: Iterable[tuple[GroundTruthObject, int]]) -> np.ndarray:
    plane = _noise.get(noise_seed, stream.native_width, stream.native_height,
                       stream.channels, stream.bit_depth)
    off = frame_seed % NOISE_ROWS
    frame = plane[off:off + stream.native_height].copy()
    for obj, intensity in objects:
        frame[obj.y:obj.y + obj.h, obj.x:obj.x + obj.w] = intensity
    return frame


def encode_scene(noise_seed: int, frame_seed: int,
                 objects: Sequence[tuple[GroundTruthObject, int]]) -> bytes:
    parts = [_SCENE_HEAD.pack(noise_seed, frame_seed, len(objects))]
    for o, intensity in objects:
        parts.append(_SCENE_OBJ.pack(o.object_id, o.class_id, o.x, o.y, o.w, o.h, intensity))
    return b"".join(parts)


def decode_scene(payload: bytes) -> tuple[int, int, list[tuple[GroundTruthObject, int]]]:
    try:
        noise_seed, frame_seed, n = _SCENE_HEAD.unpack_from(payload)
        if len(payload) != _SCENE_HEAD.size + n * _SCENE_OBJ.size:
            raise LogError("scene payload length mismatch")
        objects = []
        for i in range(n):
            oid, cls, x, y, w, h, inten = _SCENE_OBJ.unpack_from(
                payload, _SCENE_HEAD.size + i * _SCENE_OBJ.size)
            objects.append((GroundTruthObject(oid, cls, x, y, w, h), inten))
    except struct.error as exc:
        raise LogError(f"bad scene payload: {exc}") from None
    return noise_seed, frame_seed, objects


def encode_ground_truth(objects: Sequence[GroundTruthObject]) -> bytes:
    return _GT_HEAD.pack(len(objects)) + b"".join(
        _GT_OBJ.pack(o.object_id, o.class_id, o.x, o.y, o.w, o.h) for o in objects)


def decode_ground_truth(payload: bytes) -> tuple[GroundTruthObject, ...]:
    try:
        (n,) = _GT_HEAD.unpack_from(payload)
        if len(payload) != _GT_HEAD.size + n * _GT_OBJ.size:
            raise LogError("ground truth payload length mismatch")
        return tuple(GroundTruthObject(*_GT_OBJ.unpack_from(payload, _GT_HEAD.size + i * _GT_OBJ.size))
                     for i in range(n))
    except struct.error as exc:
        raise LogError(f"bad ground truth payload: {exc}") from None


def frame_timestamps(rate: float, duration_ns: int) -> list[int]:
    period = Fraction(10**9) / Fraction(rate)
    n = math.ceil(Fraction(duration_ns) / period)
    return [math.floor(k * period) for k in range(n)]


def _lidar_sweep(seed: int, k: int, points: int) -> bytes:
    rng = np.random.default_rng([seed, 0x11DA, k])
    arr = np.zeros(points, dtype=LIDAR_POINT)
    az = rng.uniform(0, 2 * np.pi, points)
    rad = rng.uniform(2.0, 200.0, points)
    arr["x"] = rad * np.cos(az)
    arr["y"] = rad * np.sin(az)
    arr["z"] = rng.normal(0.0, 1.5, points)
    arr["intensity"] = rng.integers(0, 256, points)
    return arr.tobytes()


def _synthesize(config: SyntheticConfig):
    """Yield (StreamInfo list, sorted (timestamp, stream_id, payload) records)."""
    duration_ns = int(round(config.duration_s * 1e9))
    infos: list[StreamInfo] = []
    sid = 0
    for spec in config.streams:
        infos.append(StreamInfo(sid, spec.kind, spec.width, spec.height, spec.bit_depth,
                                spec.resolved_rate(), spec.codec))
        sid += 1
    gts = []
    for cam in [s for s in infos if s.kind.is_camera]:
        gts.append(StreamInfo(sid, StreamKind.GROUND_TRUTH, cam.native_width, cam.native_height,
                              cam.bit_depth, cam.native_rate, Codec.RAW, cam.stream_id))
        sid += 1
    infos.extend(gts)

    def records():
        for info in infos:
            if info.kind == StreamKind.GROUND_TRUTH:
                continue
            for k, ts in enumerate(frame_timestamps(info.native_rate, duration_ns)):
                if info.kind == StreamKind.LIDAR:
                    yield ts, info.stream_id, lambda k=k: _lidar_sweep(config.seed, k, config.lidar_points)
                    continue
                yield ts, info.stream_id, lambda info=info, k=k, ts=ts: _camera_payload(config, info, k, ts)
        for gt in gts:
            cam = infos[gt.ref_stream]
            for ts in frame_timestamps(cam.native_rate, duration_ns):
                yield ts, gt.stream_id, lambda cam=cam, ts=ts: encode_ground_truth(object_boxes(
                    config.seed, config.object_count, ts, cam.native_width, cam.native_height,
                    config.band))

    ordered = sorted(records(), key=lambda r: (r[0], r[1]))
    return infos, ordered


def _camera_payload(config: SyntheticConfig, info: StreamInfo, k: int, ts: int) -> bytes:
    noise_seed = (config.seed * 1_000_003 + info.stream_id) & 0xFFFFFFFFFFFFFFFF
    frame_seed = int(np.random.default_rng([config.seed, info.stream_id, k]).integers(0, 2**63))
    boxes = object_boxes(config.seed, config.object_count, ts, info.native_width,
                         info.native_height, config.band)
    objects = [(o, object_intensity(o.object_id, info.bit_depth)) for o in boxes]
    if info.codec == Codec.SCENE:
        return encode_scene(noise_seed, frame_seed, objects)
    return render_frame(info, noise_seed, frame_seed, objects).astype("<u2").tobytes()


# --------------------------------------------------------------------------
# writer


@dataclass(frozen=True)
class LogSummary:
    path: str
    streams: tuple[StreamInfo, ...]
    record_counts: dict[int, int]
    size_bytes: int
    sha256: str

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "streams": [stream_dict(s) for s in self.streams],
            "record_counts": {str(k): v for k, v in self.record_counts.items()},
            "size_bytes": self.size_bytes,
            "sha256": self.sha256,
        }


def stream_dict(s: StreamInfo) -> dict:
    return {"stream_id": s.stream_id, "kind": s.kind.name.lower(), "codec": s.codec.name.lower(),
            "native_width": s.native_width, "native_height": s.native_height,
            "bit_depth": s.bit_depth, "native_rate": s.native_rate,
            "ref_stream": None if s.ref_stream == NO_STREAM else s.ref_stream}


class LogWriter:
    """Sequential container writer. Records must arrive in per-stream time order."""

    def __init__(self, path: str | os.PathLike, streams: Sequence[StreamInfo], meta: dict | None = None):
        ids = [s.stream_id for s in streams]
        if len(set(ids)) != len(ids):
            raise LogError("duplicate stream_id")
        self.path = Path(path)
        self.streams = tuple(streams)
        self._known = set(ids)
        self._last: dict[int, int] = {}
        self._index: list[IndexEntry] = []
        try:
            self._fh = open(self.path, "wb")
        except OSError as exc:
            raise LogError(f"cannot write {self.path}: {exc.strerror}") from None
        meta_raw = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode()
        self._fh.write(_HEADER.pack(MAGIC, VERSION, len(streams), len(meta_raw)))
        self._fh.write(meta_raw)
        for s in streams:
            self._fh.write(s.pack())
        self._offset = self._fh.tell()

    def append(self, stream_id: int, timestamp_ns: int, payload: bytes) -> None:
        if stream_id not in self._known:
            raise LogError(f"unknown stream {stream_id}")
        last = self._last.get(stream_id)
        if last is not None and timestamp_ns <= last:
            raise LogError(f"non-monotone timestamp on stream {stream_id}")
        self._last[stream_id] = timestamp_ns
        self._index.append(IndexEntry(stream_id, timestamp_ns, self._offset))
        self._fh.write(_CHUNK.pack(stream_id, timestamp_ns, len(payload)))
        self._fh.write(payload)
        self._offset += _CHUNK.size + len(payload)

    def close(self) -> None:
        if self._fh.closed:
            return
        index_offset = self._offset
        self._fh.write(_INDEX_HEAD.pack(INDEX_MAGIC, len(self._index)))
        for e in self._index:
            self._fh.write(_INDEX_ENTRY.pack(e.stream_id, e.timestamp_ns, e.offset))
        self._fh.write(_TRAILER.pack(index_offset))
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_log(config: SyntheticConfig, path: str | os.PathLike) -> LogSummary:
    """Generate a synthetic log. Same config and seed give byte-identical files."""
    if config.duration_s <= 0 or not config.streams:
        raise LogError("empty log")
    infos, records = _synthesize(config)
    if not records:
        raise LogError("empty log")
    counts: dict[int, int] = {}
    with LogWriter(path, infos, {"generator": "synthetic", "config": config.to_dict()}) as w:
        for ts, sid, make in records:
            w.append(sid, ts, make())
            counts[sid] = counts.get(sid, 0) + 1
    path = Path(path)
    return LogSummary(str(path), tuple(infos), counts, path.stat().st_size, file_sha256(path))


def file_sha256(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# --------------------------------------------------------------------------
# reader


class LogReader:
    """Random-access reader. Safe to share between threads (positional reads)."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        try:
            self._fd = os.open(self.path, os.O_RDONLY)
        except OSError as exc:
            raise LogError(f"cannot read {self.path}: {exc.strerror}") from None
        try:
            self._load()
        except Exception:
            os.close(self._fd)
            raise

    def _pread(self, size: int, offset: int) -> bytes:
        data = os.pread(self._fd, size, offset)
        if len(data) != size:
            raise LogError("unexpected end of container")
        return data

    def _load(self) -> None:
        self.size = os.fstat(self._fd).st_size
        magic, version, nstreams, meta_len = _HEADER.unpack(self._pread(_HEADER.size, 0))
        if magic != MAGIC:
            raise LogError("bad magic")
        if version != VERSION:
            raise LogError(f"unsupported version {version}")
        pos = _HEADER.size
        try:
            self.meta = json.loads(self._pread(meta_len, pos)) if meta_len else {}
        except ValueError:
            raise LogError("bad header metadata") from None
        pos += meta_len
        self.streams = {}
        for _ in range(nstreams):
            info = StreamInfo.unpack(self._pread(_STREAM.size, pos))
            self.streams[info.stream_id] = info
            pos += _STREAM.size
        self.body_offset = pos
        if self.size < pos + _INDEX_HEAD.size + _TRAILER.size:
            raise LogError("unexpected end of container")
        (index_offset,) = _TRAILER.unpack(self._pread(_TRAILER.size, self.size - _TRAILER.size))
        if not pos <= index_offset <= self.size - _TRAILER.size - _INDEX_HEAD.size:
            raise LogError("unexpected end of container")
        magic, count = _INDEX_HEAD.unpack(self._pread(_INDEX_HEAD.size, index_offset))
        if magic != INDEX_MAGIC or index_offset + _INDEX_HEAD.size + count * _INDEX_ENTRY.size \
                + _TRAILER.size != self.size:
            raise LogError("unexpected end of container")
        self.index_offset = index_offset
        raw = self._pread(count * _INDEX_ENTRY.size, index_offset + _INDEX_HEAD.size)
        self.index = [IndexEntry(*e) for e in _INDEX_ENTRY.iter_unpack(raw)]
        self._by_stream: dict[int, list[IndexEntry]] = {sid: [] for sid in self.streams}
        for e in self.index:
            if e.stream_id not in self._by_stream:
                raise LogError("index mismatch: unknown stream in index")
            self._by_stream[e.stream_id].append(e)
        self._ts: dict[int, list[int]] = {}
        for sid, entries in self._by_stream.items():
            entries.sort(key=lambda e: e.timestamp_ns)
            self._ts[sid] = [e.timestamp_ns for e in entries]

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def timestamps(self, stream_id: int) -> list[int]:
        return list(self._ts[stream_id])

    def camera_streams(self) -> list[StreamInfo]:
        return [s for s in self.streams.values() if s.kind.is_camera]

    def ground_truth_stream(self, camera_id: int) -> StreamInfo | None:
        for s in self.streams.values():
            if s.kind == StreamKind.GROUND_TRUTH and s.ref_stream == camera_id:
                return s
        return None

    def read_entry(self, entry: IndexEntry, seq: int = -1) -> Record:
        if not self.body_offset <= entry.offset <= self.index_offset - _CHUNK.size:
            raise LogError("index mismatch")
        sid, ts, length = _CHUNK.unpack(self._pread(_CHUNK.size, entry.offset))
        if (sid, ts) != (entry.stream_id, entry.timestamp_ns) or \
                entry.offset + _CHUNK.size + length > self.index_offset:
            raise LogError("index mismatch")
        return Record(sid, ts, self._pread(length, entry.offset + _CHUNK.size), seq)

    def read_slice(self, t0: int, t1: int, stream_id: int | None = None) -> list[Record]:
        """Records with ``t0 <= timestamp < t1`` in timestamp order, located via the index."""
        if t0 >= t1:
            raise LogError("empty slice")
        sids = [stream_id] if stream_id is not None else sorted(self._by_stream)
        out = []
        for sid in sids:
            ts = self._ts[sid]
            lo, hi = bisect.bisect_left(ts, t0), bisect.bisect_left(ts, t1)
            entries = self._by_stream[sid]
            out.extend(self.read_entry(entries[k], k) for k in range(lo, hi))
        out.sort(key=lambda r: (r.timestamp_ns, r.stream_id))
        return out

    def ground_truth(self, camera_id: int) -> dict[int, tuple[GroundTruthObject, ...]]:
        """timestamp_ns -> objects for the ground-truth stream of a camera."""
        gt = self.ground_truth_stream(camera_id)
        if gt is None:
            return {}
        return {e.timestamp_ns: decode_ground_truth(self.read_entry(e).payload)
                for e in self._by_stream[gt.stream_id]}


# --------------------------------------------------------------------------
# decode


class FrameDecoder:
    """Turns camera records into (H, W[, C]) uint16 arrays.

    ``cost_s`` adds an artificial per-frame delay to model expensive decoding.
    """

    def __init__(self, stream: StreamInfo, cost_s: float = 0.0):
        if not stream.kind.is_camera:
            raise LogError(f"stream {stream.stream_id} is not a camera")
        self.stream = stream
        self.cost_s = cost_s
        self.decoded = 0

    def decode(self, record: Record) -> np.ndarray:
        s = self.stream
        if self.cost_s > 0:
            time.sleep(self.cost_s)
        if s.codec == Codec.SCENE:
            noise_seed, frame_seed, objects = decode_scene(record.payload)
            frame = render_frame(s, noise_seed, frame_seed, objects)
        else:
            if len(record.payload) != s.frame_bytes:
                raise LogError("raw frame size mismatch")
            shape = (s.native_height, s.native_width) + ((3,) if s.channels == 3 else ())
            frame = np.frombuffer(record.payload, dtype="<u2").reshape(shape)
        self.decoded += 1
        return frame


# --------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    path: str
    violations: list[str] = field(default_factory=list)
    records: int = 0
    index_entries: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"path": self.path, "ok": self.ok, "records": self.records,
                "index_entries": self.index_entries, "violations": list(self.violations)}


def validate_log(path: str | os.PathLike) -> ValidationReport:
    """Check magic, version, timestamp monotonicity and index consistency."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise LogError(f"cannot read {path}: {exc.strerror}") from None
    report = ValidationReport(str(path))
    v = report.violations
    if len(data) < _HEADER.size:
        v.append("unexpected end of container")
        return report
    magic, version, nstreams, meta_len = _HEADER.unpack_from(data)
    if magic != MAGIC:
        v.append("bad magic")
        return report
    if version != VERSION:
        v.append(f"unsupported version {version}")
        return report
    pos = _HEADER.size + meta_len
    if pos + nstreams * _STREAM.size > len(data):
        v.append("unexpected end of container")
        return report
    streams = {}
    for i in range(nstreams):
        try:
            info = StreamInfo.unpack(data[pos:pos + _STREAM.size])
        except LogError as exc:
            v.append(str(exc))
            return report
        if info.stream_id in streams:
            v.append(f"duplicate stream_id {info.stream_id}")
        streams[info.stream_id] = info
        pos += _STREAM.size
    body = pos

    footer_ok = False
    end = len(data)
    if len(data) >= body + _INDEX_HEAD.size + _TRAILER.size:
        (index_offset,) = _TRAILER.unpack_from(data, len(data) - _TRAILER.size)
        if body <= index_offset <= len(data) - _TRAILER.size - _INDEX_HEAD.size:
            magic, count = _INDEX_HEAD.unpack_from(data, index_offset)
            if magic == INDEX_MAGIC and index_offset + _INDEX_HEAD.size + \
                    count * _INDEX_ENTRY.size + _TRAILER.size == len(data):
                footer_ok = True
                end = index_offset

    # body scan
    last: dict[int, int] = {}
    counts: dict[int, int] = {}
    pos = body
    while pos < end:
        if pos + _CHUNK.size > end:
            v.append("unexpected end of container")
            break
        sid, ts, length = _CHUNK.unpack_from(data, pos)
        if pos + _CHUNK.size + length > end:
            v.append("unexpected end of container")
            break
        if sid not in streams:
            v.append(f"unknown stream {sid} at offset {pos}")
        elif sid in last and ts <= last[sid]:
            v.append(f"non-monotone timestamp on stream {sid} at offset {pos}")
        last[sid] = ts
        counts[sid] = counts.get(sid, 0) + 1
        report.records += 1
        pos += _CHUNK.size + length

    if not footer_ok:
        if "unexpected end of container" not in v:
            v.append("unexpected end of container")
        return report

    index_counts: dict[int, int] = {}
    for i, (sid, ts, off) in enumerate(_INDEX_ENTRY.iter_unpack(
            data[end + _INDEX_HEAD.size:len(data) - _TRAILER.size])):
        report.index_entries += 1
        index_counts[sid] = index_counts.get(sid, 0) + 1
        if not body <= off <= end - _CHUNK.size:
            v.append(f"index mismatch at entry {i}")
            continue
        rsid, rts, length = _CHUNK.unpack_from(data, off)
        if (rsid, rts) != (sid, ts) or off + _CHUNK.size + length > end:
            v.append(f"index mismatch at entry {i}")
    for sid in sorted(set(counts) | set(index_counts)):
        if counts.get(sid, 0) != index_counts.get(sid, 0):
            v.append(f"index incomplete for stream {sid}: {index_counts.get(sid, 0)} entries, "
                     f"{counts.get(sid, 0)} records")
    return report
