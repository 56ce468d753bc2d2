"""Length-prefixed wire protocol between the harness and algorithm plugins.

Every message is ``length u32 | type u8 | payload`` (little-endian, ``length``
counts payload bytes only). Payload layouts are fixed per type:

=========  =====================================================================
HELLO      protocol_version u16 | name 64s | task 16s
WELCOME    consumer_id u32 | region 64s | slot_count u32 | slot_capacity u64
           | consumer_count u32
FRAME      frame_id u64 | preset_id u16 | region 64s | slot_index u32
           | generation u64 | meta 64s (bus frame meta record)
RESULT     frame_id u64 | exec_time_ns u64 | count u16
           | count x (class u16, x u32, y u32, w u32, h u32, score u16)
RELEASE    frame_id u64 | slot_index u32 | generation u64
BYE        (empty)
ERROR      code u16 | reason (UTF-8, rest of payload)
=========  =====================================================================

Strings are UTF-8, zero-padded, and may not contain NUL.
"""

from __future__ import annotations

import select
import socket
import struct
import time
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Union

from .framebus import FrameMeta, META_BYTES

PROTOCOL_VERSION = 1
MAX_PAYLOAD = 1 << 21
SUPPORTED_TASKS = ("detection",)

_HEAD = struct.Struct("<IB")
_HELLO = struct.Struct("<H64s16s")
_WELCOME = struct.Struct("<I64sIQI")
_FRAME = struct.Struct(f"<QH64sIQ{META_BYTES}s")
_RESULT_HEAD = struct.Struct("<QQH")
_DETECTION = struct.Struct("<HIIIIH")
_RELEASE = struct.Struct("<QIQ")
_ERROR_HEAD = struct.Struct("<H")


class MsgType(IntEnum):
    HELLO = 1
    WELCOME = 2
    FRAME = 3
    RESULT = 4
    RELEASE = 5
    BYE = 6
    ERROR = 7


class ErrorCode(IntEnum):
    UNKNOWN_TYPE = 1
    BAD_LENGTH = 2
    TOO_LARGE = 3
    BAD_STRING = 4
    TRUNCATED = 5
    VERSION = 6
    DUPLICATE = 7
    TASK = 8
    SEQUENCE = 9
    UNKNOWN_FRAME = 10
    OUT_OF_BOUNDS = 11
    TIMEOUT = 12
    CLOSED = 13
    INCONSISTENT = 14


class ProtocolError(Exception):
    def __init__(self, code: ErrorCode, reason: str, offset: int | None = None):
        super().__init__(reason)
        self.code = ErrorCode(code)
        self.reason = reason
        self.offset = offset

    def __eq__(self, other):
        return isinstance(other, ProtocolError) and \
            (self.code, self.reason, self.offset) == (other.code, other.reason, other.offset)

    def __hash__(self):
        return hash((self.code, self.reason, self.offset))


class ConnectionClosed(ProtocolError):
    def __init__(self, reason: str = "connection closed"):
        super().__init__(ErrorCode.CLOSED, reason)


# --------------------------------------------------------------------------
# messages


@dataclass(frozen=True)
class Hello:
    name: str
    task: str = "detection"
    protocol_version: int = PROTOCOL_VERSION


@dataclass(frozen=True)
class Welcome:
    consumer_id: int
    region: str
    slot_count: int
    slot_capacity: int
    consumer_count: int


@dataclass(frozen=True)
class FrameDescriptor:
    frame_id: int
    preset_id: int
    region: str
    slot_index: int
    generation: int
    meta: FrameMeta


@dataclass(frozen=True)
class Detection:
    cls: int
    x: int
    y: int
    w: int
    h: int
    score_q: int = 65535  # fixed point, score = score_q / 65535

    @property
    def score(self) -> float:
        return self.score_q / 65535


@dataclass(frozen=True)
class ResultPayload:
    frame_id: int
    exec_time_ns: int
    detections: tuple[Detection, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class Release:
    frame_id: int
    slot_index: int
    generation: int


@dataclass(frozen=True)
class Bye:
    pass


@dataclass(frozen=True)
class ErrorMsg:
    code: int
    reason: str


Message = Union[Hello, Welcome, FrameDescriptor, ResultPayload, Release, Bye, ErrorMsg]


def _pack_str(text: str, size: int) -> bytes:
    raw = text.encode("utf-8")
    if b"\0" in raw:
        raise ValueError("string contains NUL")
    if len(raw) > size:
        raise ValueError(f"string longer than {size} bytes")
    return raw.ljust(size, b"\0")


def _unpack_str(raw: bytes, what: str) -> str:
    text, _, pad = raw.partition(b"\0")
    if pad.strip(b"\0"):
        raise ProtocolError(ErrorCode.BAD_STRING, f"{what}: data after terminator")
    try:
        return text.decode("utf-8")
    except UnicodeDecodeError:
        raise ProtocolError(ErrorCode.BAD_STRING, f"{what}: invalid utf-8") from None


def encode(msg: Message) -> bytes:
    if isinstance(msg, Hello):
        t, body = MsgType.HELLO, _HELLO.pack(msg.protocol_version, _pack_str(msg.name, 64),
                                            _pack_str(msg.task, 16))
    elif isinstance(msg, Welcome):
        t, body = MsgType.WELCOME, _WELCOME.pack(msg.consumer_id, _pack_str(msg.region, 64),
                                                msg.slot_count, msg.slot_capacity, msg.consumer_count)
    elif isinstance(msg, FrameDescriptor):
        t, body = MsgType.FRAME, _FRAME.pack(msg.frame_id, msg.preset_id, _pack_str(msg.region, 64),
                                            msg.slot_index, msg.generation, msg.meta.pack())
    elif isinstance(msg, ResultPayload):
        if len(msg.detections) > 0xFFFF:
            raise ValueError("too many detections")
        t = MsgType.RESULT
        body = _RESULT_HEAD.pack(msg.frame_id, msg.exec_time_ns, len(msg.detections)) + b"".join(
            _DETECTION.pack(d.cls, d.x, d.y, d.w, d.h, d.score_q) for d in msg.detections)
    elif isinstance(msg, Release):
        t, body = MsgType.RELEASE, _RELEASE.pack(msg.frame_id, msg.slot_index, msg.generation)
    elif isinstance(msg, Bye):
        t, body = MsgType.BYE, b""
    elif isinstance(msg, ErrorMsg):
        t, body = MsgType.ERROR, _ERROR_HEAD.pack(msg.code) + msg.reason.encode("utf-8")
    else:
        raise TypeError(f"not a protocol message: {msg!r}")
    return _HEAD.pack(len(body), t) + body


def _expect(payload: bytes, size: int, name: str) -> None:
    if len(payload) != size:
        raise ProtocolError(ErrorCode.BAD_LENGTH, f"{name}: length {len(payload)}, expected {size}")


def decode_payload(msg_type: int, payload: bytes) -> Message:
    """Decode one message body. Raises ProtocolError on any malformation."""
    if msg_type == MsgType.HELLO:
        _expect(payload, _HELLO.size, "HELLO")
        version, name, task = _HELLO.unpack(payload)
        return Hello(_unpack_str(name, "name"), _unpack_str(task, "task"), version)
    if msg_type == MsgType.WELCOME:
        _expect(payload, _WELCOME.size, "WELCOME")
        cid, region, slots, cap, consumers = _WELCOME.unpack(payload)
        return Welcome(cid, _unpack_str(region, "region"), slots, cap, consumers)
    if msg_type == MsgType.FRAME:
        _expect(payload, _FRAME.size, "FRAME")
        fid, pid, region, slot, gen, meta_raw = _FRAME.unpack(payload)
        meta = FrameMeta.unpack(meta_raw)
        if meta.pack() != meta_raw:
            raise ProtocolError(ErrorCode.INCONSISTENT, "FRAME: nonzero meta padding")
        if (meta.frame_id, meta.preset_id) != (fid, pid):
            raise ProtocolError(ErrorCode.INCONSISTENT, "FRAME: descriptor and meta disagree")
        return FrameDescriptor(fid, pid, _unpack_str(region, "region"), slot, gen, meta)
    if msg_type == MsgType.RESULT:
        if len(payload) < _RESULT_HEAD.size:
            raise ProtocolError(ErrorCode.BAD_LENGTH, "RESULT: short header")
        fid, exec_ns, count = _RESULT_HEAD.unpack_from(payload)
        _expect(payload, _RESULT_HEAD.size + count * _DETECTION.size, "RESULT")
        dets = tuple(Detection(*d) for d in _DETECTION.iter_unpack(payload[_RESULT_HEAD.size:]))
        return ResultPayload(fid, exec_ns, dets)
    if msg_type == MsgType.RELEASE:
        _expect(payload, _RELEASE.size, "RELEASE")
        return Release(*_RELEASE.unpack(payload))
    if msg_type == MsgType.BYE:
        _expect(payload, 0, "BYE")
        return Bye()
    if msg_type == MsgType.ERROR:
        if len(payload) < _ERROR_HEAD.size:
            raise ProtocolError(ErrorCode.BAD_LENGTH, "ERROR: short header")
        (code,) = _ERROR_HEAD.unpack_from(payload)
        try:
            reason = payload[_ERROR_HEAD.size:].decode("utf-8")
        except UnicodeDecodeError:
            raise ProtocolError(ErrorCode.BAD_STRING, "reason: invalid utf-8") from None
        return ErrorMsg(code, reason)
    raise ProtocolError(ErrorCode.UNKNOWN_TYPE, f"unknown message type {msg_type}")


class StreamDecoder:
    """Incremental decoder for a byte stream of messages.

    After the first malformed message the decoder is poisoned: the same
    ProtocolError (with the absolute offset of the offending message) is
    raised on every later call.
    """

    def __init__(self):
        self._buf = bytearray()
        self._base = 0  # stream offset of _buf[0]
        self.error: ProtocolError | None = None

    def feed(self, data: bytes) -> list[Message]:
        """Append bytes; return every message completed so far.

        If a malformed message follows valid ones in the same chunk, the valid
        ones are returned and the error is raised on the next call.
        """
        if self.error is not None:
            raise self.error
        self._buf += data
        out: list[Message] = []
        pos = 0
        while len(self._buf) - pos >= _HEAD.size:
            length, msg_type = _HEAD.unpack_from(self._buf, pos)
            try:
                if msg_type not in MsgType._value2member_map_:
                    raise ProtocolError(ErrorCode.UNKNOWN_TYPE, f"unknown message type {msg_type}")
                if length > MAX_PAYLOAD:
                    raise ProtocolError(ErrorCode.TOO_LARGE, f"payload of {length} bytes exceeds limit")
                end = pos + _HEAD.size + length
                if end > len(self._buf):
                    break
                out.append(decode_payload(msg_type, bytes(self._buf[pos + _HEAD.size:end])))
            except ProtocolError as exc:
                self.error = ProtocolError(exc.code, exc.reason, self._base + pos)
                break
            pos = end
        del self._buf[:pos]
        self._base += pos
        if self.error is not None and not out:
            raise self.error
        return out

    def finish(self) -> None:
        """Raise if the stream ended inside a message."""
        if self.error is not None:
            raise self.error
        if self._buf:
            self.error = ProtocolError(ErrorCode.TRUNCATED, "unexpected end of stream", self._base)
            raise self.error

    @property
    def pending(self) -> int:
        return len(self._buf)


def decode_stream(data: bytes) -> tuple[list[Message], ProtocolError | None]:
    """Decode a complete byte stream: messages up to the first error, and that error."""
    dec = StreamDecoder()
    messages: list[Message] = []
    try:
        messages.extend(dec.feed(data))
        dec.finish()
    except ProtocolError as exc:
        return messages, exc
    return messages, None


# --------------------------------------------------------------------------
# connections


class Connection:
    """Message framing over a connected stream socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._decoder = StreamDecoder()
        self._inbox: list[Message] = []

    def send(self, msg: Message) -> None:
        try:
            self.sock.sendall(encode(msg))
        except (BrokenPipeError, ConnectionResetError, OSError) as exc:
            raise ConnectionClosed(f"send failed: {exc}") from None

    def recv(self, timeout: float | None = None) -> Message:
        deadline = None if timeout is None else time.monotonic() + timeout
        while not self._inbox:
            if deadline is not None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise ProtocolError(ErrorCode.TIMEOUT, "timed out waiting for message")
                ready, _, _ = select.select([self.sock], [], [], remaining)
                if not ready:
                    continue
            try:
                chunk = self.sock.recv(1 << 16)
            except (ConnectionResetError, OSError) as exc:
                raise ConnectionClosed(f"recv failed: {exc}") from None
            if not chunk:
                raise ConnectionClosed()
            self._inbox.extend(self._decoder.feed(chunk))
        return self._inbox.pop(0)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


# --------------------------------------------------------------------------
# harness side


class PluginRegistry:
    """Consumer id assignment and duplicate-name detection for one run."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.names: dict[str, int] = {}

    def register(self, hello: Hello) -> int:
        if hello.protocol_version != PROTOCOL_VERSION:
            raise ProtocolError(ErrorCode.VERSION, "unsupported protocol version")
        if hello.task not in SUPPORTED_TASKS:
            raise ProtocolError(ErrorCode.TASK, f"unsupported task kind {hello.task!r}")
        if not hello.name:
            raise ProtocolError(ErrorCode.BAD_STRING, "empty algorithm name")
        if hello.name in self.names:
            raise ProtocolError(ErrorCode.DUPLICATE, "duplicate algorithm")
        if len(self.names) >= self.capacity:
            raise ProtocolError(ErrorCode.SEQUENCE, "no consumer slots left")
        cid = len(self.names)
        self.names[hello.name] = cid
        return cid


@dataclass
class PluginSession:
    conn: Connection
    consumer_id: int
    name: str
    task: str
    region: str

    def send_frame(self, desc: FrameDescriptor) -> int:
        self.conn.send(desc)
        return time.perf_counter_ns()

    def await_result(self, desc: FrameDescriptor, sent_ns: int,
                     timeout: float | None = None) -> tuple[ResultPayload, int]:
        """Wait for RESULT then RELEASE of ``desc``; returns the result and harness-side latency."""
        msg = self.conn.recv(timeout)
        done_ns = time.perf_counter_ns()
        if isinstance(msg, ErrorMsg):
            raise ProtocolError(msg.code, f"plugin error: {msg.reason}")
        if isinstance(msg, Release):
            raise ProtocolError(ErrorCode.SEQUENCE, "RELEASE before RESULT")
        if not isinstance(msg, ResultPayload):
            raise ProtocolError(ErrorCode.SEQUENCE, f"unexpected {type(msg).__name__}")
        if msg.frame_id != desc.frame_id:
            raise ProtocolError(ErrorCode.UNKNOWN_FRAME, f"result for unknown frame_id {msg.frame_id}")
        if msg.exec_time_ns <= 0:
            raise ProtocolError(ErrorCode.BAD_LENGTH, "exec_time_ns must be positive")
        for d in msg.detections:
            if d.w == 0 or d.h == 0 or d.x + d.w > desc.meta.width or d.y + d.h > desc.meta.height:
                raise ProtocolError(ErrorCode.OUT_OF_BOUNDS, "detection outside frame")
        rel = self.conn.recv(timeout)
        if not isinstance(rel, Release):
            raise ProtocolError(ErrorCode.SEQUENCE, f"expected RELEASE, got {type(rel).__name__}")
        if (rel.frame_id, rel.slot_index, rel.generation) != \
                (desc.frame_id, desc.slot_index, desc.generation):
            raise ProtocolError(ErrorCode.UNKNOWN_FRAME, "RELEASE does not match the frame")
        return msg, done_ns - sent_ns

    def exchange(self, desc: FrameDescriptor, timeout: float | None = None) -> tuple[ResultPayload, int]:
        return self.await_result(desc, self.send_frame(desc), timeout)

    def bye(self) -> None:
        try:
            self.conn.send(Bye())
        except ProtocolError:
            pass

    def fail(self, error: ProtocolError) -> None:
        try:
            self.conn.send(ErrorMsg(error.code, error.reason))
        except ProtocolError:
            pass


def handshake(conn: Connection, registry: PluginRegistry,
              welcome: Welcome | Callable[[str], Welcome],
              timeout: float | None = None) -> PluginSession:
    """Read HELLO, answer WELCOME or ERROR.

    ``welcome`` is either a template whose consumer id is replaced by the
    registry's, or a factory called with the algorithm name that returns the
    exact WELCOME to send.
    """
    try:
        hello = conn.recv(timeout)
        if not isinstance(hello, Hello):
            raise ProtocolError(ErrorCode.SEQUENCE, f"expected HELLO, got {type(hello).__name__}")
        cid = registry.register(hello)
        if callable(welcome):
            reply = welcome(hello.name)
        else:
            reply = Welcome(cid, welcome.region, welcome.slot_count, welcome.slot_capacity,
                            welcome.consumer_count)
    except ProtocolError as exc:
        if not isinstance(exc, ConnectionClosed):
            try:
                conn.send(ErrorMsg(exc.code, exc.reason))
            except ProtocolError:
                pass
        raise
    conn.send(reply)
    return PluginSession(conn, reply.consumer_id, hello.name, hello.task, reply.region)
