"""Decode-once, multi-consumer frame distribution over shared memory.

One producer writes decoded frames into a bounded ring of slots inside a
memory-mapped region; every registered consumer sees every published frame
exactly once, in publish order, and releases it when done. A slot becomes
free again only after all consumers released it, so a slow consumer exerts
backpressure on the producer (``slot_count=1`` is strict per-frame lockstep).

Region layout (little-endian)::

    0     header   "RBUS" | version u16 | slot_count u32 | slot_capacity u64 | consumer_count u32
    24    publish_seq u64 | shutdown u32 | ring_next u32 | doorbell u64      (rest of the 64-byte block)
    64    slot table, slot_count x 128-byte control blocks:
              state u32 | pad u32 | generation u64 | refcount u32 | pad u32 | meta (64 bytes)
              | seq u64 | holders u64 (bitmask of consumers yet to release) | published_ns u64
    ...   consumer table, consumer_count x 64-byte blocks:
              cursor u64 | state u32 | pad u32 | delivered u64 | released u64
    ...   payload arena (page aligned), one 64-byte-aligned stride per slot

Control words are only touched while holding the region lock: an exclusive
``flock`` on the backing file (cross-process) layered under a per-process
thread lock. Waiters block on a per-process condition keyed by the region
and poll the ``doorbell`` word with bounded backoff for peers in other
processes.
"""

from __future__ import annotations

import fcntl
import mmap
import os
import re
import struct
import tempfile
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

MAGIC = b"RBUS"
VERSION = 1
MAX_CONSUMERS = 64
NAME_BYTES = 64

_HEADER = struct.Struct("<4sHIQI")
_OFF_PUBLISH_SEQ = 24
_OFF_SHUTDOWN = 32
_OFF_RING = 36
_OFF_DOORBELL = 40
HEADER_BLOCK = 64

_SLOT = struct.Struct("<I4xQI4x64sQQQ")
SLOT_BLOCK = 128
_OFF_GENERATION = 8

_CONSUMER = struct.Struct("<QI4xQQ")
CONSUMER_BLOCK = 64

_META = struct.Struct("<QHHIIIBBQ")
META_BYTES = 64

_U64 = struct.Struct("<Q")
_U32 = struct.Struct("<I")

_NAME_RE = re.compile(r"^[A-Za-z0-9._-]{1,63}$")


class BusError(Exception):
    pass


class BusStalled(BusError, TimeoutError):
    def __init__(self, message: str, consumer_id: int | None = None):
        super().__init__(message)
        self.consumer_id = consumer_id


class BusTimeout(BusError, TimeoutError):
    pass


class SlotRecycled(BusError):
    pass


class AlreadyReleased(BusError):
    pass


class DoublePublish(BusError):
    pass


class ConsumerEvicted(BusError):
    pass


class SlotState(IntEnum):
    FREE = 0
    FILLING = 1
    PUBLISHED = 2
    DRAINING = 3


class ConsumerState(IntEnum):
    ACTIVE = 1
    EVICTED = 2


@dataclass(frozen=True)
class FrameMeta:
    frame_id: int
    source_stream: int
    preset_id: int
    width: int
    height: int
    stride: int
    channels: int
    bit_depth: int
    timestamp_ns: int

    @property
    def bytes_per_sample(self) -> int:
        return 1 if self.bit_depth <= 8 else 2

    @property
    def payload_len(self) -> int:
        return self.stride * self.height

    @property
    def dtype(self) -> str:
        return "u1" if self.bytes_per_sample == 1 else "<u2"

    def pack(self) -> bytes:
        return _META.pack(self.frame_id, self.source_stream, self.preset_id, self.width,
                          self.height, self.stride, self.channels, self.bit_depth,
                          self.timestamp_ns).ljust(META_BYTES, b"\0")

    @classmethod
    def unpack(cls, raw: bytes) -> "FrameMeta":
        return cls(*_META.unpack_from(raw))

    @classmethod
    def for_array(cls, frame: np.ndarray, *, frame_id: int, source_stream: int,
                  preset_id: int, bit_depth: int, timestamp_ns: int) -> "FrameMeta":
        h, w = frame.shape[:2]
        channels = frame.shape[2] if frame.ndim == 3 else 1
        return cls(frame_id, source_stream, preset_id, w, h, w * channels * frame.itemsize,
                   channels, bit_depth, timestamp_ns)


@dataclass(frozen=True)
class BusConfig:
    slot_count: int = 8
    slot_capacity: int = 3208 * 2200 * 2
    consumer_count: int = 1
    publish_timeout_ms: int = 10_000
    release_timeout_ms: int | None = None

    def validate(self) -> None:
        if self.slot_count < 1:
            raise BusError("slot_count must be >= 1")
        if self.slot_capacity <= 0:
            raise BusError("slot_capacity must be positive")
        if not 0 <= self.consumer_count <= MAX_CONSUMERS:
            raise BusError(f"consumer_count must be in [0, {MAX_CONSUMERS}]")


@dataclass(frozen=True)
class SlotHandle:
    slot_index: int
    generation: int


@dataclass(frozen=True)
class SlotInfo:
    slot_index: int
    state: SlotState
    generation: int
    refcount: int
    seq: int
    holders: int
    meta: FrameMeta | None


@dataclass(frozen=True)
class ConsumerInfo:
    consumer_id: int
    state: ConsumerState
    cursor: int
    delivered: int
    released: int


def scratch_dir() -> Path:
    """Directory backing shared regions: $REEDSB_TMP, else /dev/shm, else the temp dir."""
    env = os.environ.get("REEDSB_TMP")
    if env:
        path = Path(env)
        path.mkdir(parents=True, exist_ok=True)
        return path
    shm = Path("/dev/shm")
    if shm.is_dir() and os.access(shm, os.W_OK):
        return shm
    return Path(tempfile.gettempdir())


def region_path(name: str, scratch: str | os.PathLike | None = None) -> Path:
    if not _NAME_RE.match(name):
        raise BusError(f"invalid region name: {name!r}")
    return Path(scratch or scratch_dir()) / f"{name}.rbus"


def _align(n: int, to: int) -> int:
    return (n + to - 1) // to * to


# per-process primitives shared by every FrameBus instance on one region
_registry_lock = threading.Lock()
_local_locks: dict[str, tuple[threading.RLock, threading.Condition]] = {}


def _local_primitives(key: str) -> tuple[threading.RLock, threading.Condition]:
    with _registry_lock:
        if key not in _local_locks:
            _local_locks[key] = (threading.RLock(), threading.Condition(threading.Lock()))
        return _local_locks[key]


class FrameView:
    """A consumer's read-only view of one published frame.

    Every access re-validates the slot generation, so a view kept past its
    release raises :class:`SlotRecycled` instead of returning foreign bytes.
    """

    def __init__(self, bus: "FrameBus", handle: SlotHandle, meta: FrameMeta, seq: int):
        self._bus = bus
        self.handle = handle
        self.meta = meta
        self.seq = seq

    def check(self) -> None:
        if self._bus.generation(self.handle.slot_index) != self.handle.generation:
            raise SlotRecycled("slot recycled")

    @property
    def payload(self) -> memoryview:
        self.check()
        return self._bus._payload_view(self.handle.slot_index, self.meta.payload_len).toreadonly()

    def read(self) -> bytes:
        """Copy the payload out, validated before and after the copy."""
        self.check()
        data = bytes(self._bus._payload_view(self.handle.slot_index, self.meta.payload_len))
        self.check()
        return data

    def array(self) -> np.ndarray:
        m = self.meta
        shape = (m.height, m.width) + ((m.channels,) if m.channels > 1 else ())
        row = m.width * m.channels
        flat = np.frombuffer(self.payload, dtype=m.dtype)
        return flat.reshape(m.height, m.stride // m.bytes_per_sample)[:, :row].reshape(shape)


class FrameBus:
    """Producer or consumer endpoint of a shared frame region.

    Use :meth:`create` in the producer and :meth:`attach` everywhere else. A
    process should hold only one role on a given bus.
    """

    def __init__(self, name: str, path: Path, fd: int, mm: mmap.mmap, writable: bool, owner: bool):
        self.name = name
        self.path = path
        self._fd = fd
        self._mm = mm
        self._writable = writable
        self._owner = owner
        self._last_frame: dict[tuple[int, int], int] = {}
        magic, version, self.slot_count, self.slot_capacity, self.consumer_count = \
            _HEADER.unpack_from(mm, 0)
        if magic != MAGIC:
            raise BusError("not a frame bus region")
        if version != VERSION:
            raise BusError(f"unsupported bus version {version}")
        self._slots_off = HEADER_BLOCK
        self._consumers_off = self._slots_off + self.slot_count * SLOT_BLOCK
        self._slot_stride = _align(self.slot_capacity, 64)
        self._arena_off = _align(self._consumers_off + self.consumer_count * CONSUMER_BLOCK, 4096)
        self._tlock, self._cond = _local_primitives(str(path))
        self.publish_timeout_ms = 10_000
        self.release_timeout_ms: int | None = None

    # -- lifecycle ---------------------------------------------------------

    @classmethod
    def create(cls, name: str, config: BusConfig, scratch=None) -> "FrameBus":
        config.validate()
        path = region_path(name, scratch)
        slot_stride = _align(config.slot_capacity, 64)
        consumers_off = HEADER_BLOCK + config.slot_count * SLOT_BLOCK
        arena = _align(consumers_off + config.consumer_count * CONSUMER_BLOCK, 4096)
        size = arena + config.slot_count * slot_stride
        fd = os.open(path, os.O_RDWR | os.O_CREAT | os.O_EXCL, 0o600)
        try:
            os.ftruncate(fd, size)
            mm = mmap.mmap(fd, size)
        except Exception:
            os.close(fd)
            path.unlink(missing_ok=True)
            raise
        _HEADER.pack_into(mm, 0, MAGIC, VERSION, config.slot_count, config.slot_capacity,
                          config.consumer_count)
        for j in range(config.consumer_count):
            _CONSUMER.pack_into(mm, consumers_off + j * CONSUMER_BLOCK, 1, ConsumerState.ACTIVE, 0, 0)
        bus = cls(name, path, fd, mm, writable=True, owner=True)
        bus.publish_timeout_ms = config.publish_timeout_ms
        bus.release_timeout_ms = config.release_timeout_ms
        return bus

    @classmethod
    def attach(cls, name: str, scratch=None, writable: bool = True) -> "FrameBus":
        path = region_path(name, scratch)
        try:
            fd = os.open(path, os.O_RDWR if writable else os.O_RDONLY)
        except FileNotFoundError:
            raise BusError(f"no such bus: {name}") from None
        try:
            size = os.fstat(fd).st_size
            mm = mmap.mmap(fd, size, access=mmap.ACCESS_WRITE if writable else mmap.ACCESS_READ)
        except Exception:
            os.close(fd)
            raise
        return cls(name, path, fd, mm, writable=writable, owner=False)

    @property
    def closed(self) -> bool:
        return self._mm is None

    def close(self) -> None:
        if self._mm is None:
            return
        try:
            self._mm.close()
        except BufferError:
            # a caller still holds a payload view; the mapping goes with it
            pass
        os.close(self._fd)
        self._mm = None
        if self._owner:
            self.path.unlink(missing_ok=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def config(self) -> BusConfig:
        return BusConfig(self.slot_count, self.slot_capacity, self.consumer_count,
                         self.publish_timeout_ms, self.release_timeout_ms)

    # -- raw access --------------------------------------------------------

    @contextmanager
    def _locked(self):
        with self._tlock:
            fcntl.flock(self._fd, fcntl.LOCK_EX)
            try:
                yield
            finally:
                fcntl.flock(self._fd, fcntl.LOCK_UN)

    def _slot_off(self, i: int) -> int:
        if not 0 <= i < self.slot_count:
            raise BusError(f"slot index {i} out of range")
        return self._slots_off + i * SLOT_BLOCK

    def _read_slot(self, i: int):
        return _SLOT.unpack_from(self._mm, self._slot_off(i))

    def _write_slot(self, i, state, generation, refcount, meta_raw, seq, holders, published_ns):
        _SLOT.pack_into(self._mm, self._slot_off(i), state, generation, refcount, meta_raw,
                        seq, holders, published_ns)

    def generation(self, i: int) -> int:
        return _U64.unpack_from(self._mm, self._slot_off(i) + _OFF_GENERATION)[0]

    def _consumer_off(self, j: int) -> int:
        if not 0 <= j < self.consumer_count:
            raise BusError(f"unknown consumer {j}")
        return self._consumers_off + j * CONSUMER_BLOCK

    def _read_consumer(self, j: int):
        return _CONSUMER.unpack_from(self._mm, self._consumer_off(j))

    def _write_consumer(self, j, cursor, state, delivered, released):
        _CONSUMER.pack_into(self._mm, self._consumer_off(j), cursor, state, delivered, released)

    def _u64(self, off: int) -> int:
        return _U64.unpack_from(self._mm, off)[0]

    def _set_u64(self, off: int, value: int) -> None:
        _U64.pack_into(self._mm, off, value)

    def _ring(self):
        self._set_u64(_OFF_DOORBELL, (self._u64(_OFF_DOORBELL) + 1) & 0xFFFFFFFFFFFFFFFF)
        with self._cond:
            self._cond.notify_all()

    def _payload_view(self, i: int, length: int | None = None) -> memoryview:
        start = self._arena_off + i * self._slot_stride
        length = self.slot_capacity if length is None else length
        return memoryview(self._mm)[start:start + length]

    def _wait(self, attempt, timeout_s: float | None):
        """Run ``attempt()`` under the lock until it returns non-None."""
        deadline = None if timeout_s is None else time.monotonic() + timeout_s
        delay = 20e-6
        while True:
            seen = self._u64(_OFF_DOORBELL)
            with self._locked():
                result = attempt()
            if result is not None:
                return result
            wait = delay
            if deadline is not None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                wait = min(wait, remaining)
            with self._cond:
                self._cond.wait_for(lambda: self._u64(_OFF_DOORBELL) != seen, timeout=wait)
            delay = min(delay * 2, 2e-3)

    # -- introspection -----------------------------------------------------

    def slot_info(self, i: int) -> SlotInfo:
        state, gen, ref, meta_raw, seq, holders, _ = self._read_slot(i)
        meta = FrameMeta.unpack(meta_raw) if state in (SlotState.PUBLISHED, SlotState.DRAINING) else None
        return SlotInfo(i, SlotState(state), gen, ref, seq, holders, meta)

    def consumer_info(self, j: int) -> ConsumerInfo:
        cursor, state, delivered, released = self._read_consumer(j)
        return ConsumerInfo(j, ConsumerState(state), cursor, delivered, released)

    @property
    def publish_count(self) -> int:
        return self._u64(_OFF_PUBLISH_SEQ)

    @property
    def is_shutdown(self) -> bool:
        return bool(_U32.unpack_from(self._mm, _OFF_SHUTDOWN)[0])

    def evicted(self) -> list[int]:
        return [j for j in range(self.consumer_count)
                if self._read_consumer(j)[1] == ConsumerState.EVICTED]

    def _active_mask(self) -> int:
        mask = 0
        for j in range(self.consumer_count):
            if self._read_consumer(j)[1] == ConsumerState.ACTIVE:
                mask |= 1 << j
        return mask

    # -- producer ----------------------------------------------------------

    def acquire_slot(self, timeout_ms: int | None = None) -> SlotHandle:
        """Claim a free slot for filling; blocks while the ring is full."""
        if self.is_shutdown:
            raise BusError("bus shut down")
        timeout_ms = self.publish_timeout_ms if timeout_ms is None else timeout_ms

        def attempt():
            start = _U32.unpack_from(self._mm, _OFF_RING)[0]
            for k in range(self.slot_count):
                i = (start + k) % self.slot_count
                state, gen, *_ = self._read_slot(i)
                if state == SlotState.FREE:
                    self._write_slot(i, SlotState.FILLING, gen + 1, 0, b"", 0, 0, 0)
                    _U32.pack_into(self._mm, _OFF_RING, (i + 1) % self.slot_count)
                    return SlotHandle(i, gen + 1)
            if self.release_timeout_ms is not None:
                self._evict_stragglers()
            return None

        handle = self._wait(attempt, timeout_ms / 1000)
        if handle is None:
            slow = self._slowest_consumer()
            who = f"consumer {slow}" if slow is not None else "no consumer"
            raise BusStalled(f"bus stalled: slowest is {who}", slow)
        return handle

    def _slowest_consumer(self) -> int | None:
        with self._locked():
            oldest = None
            for i in range(self.slot_count):
                state, _, _, _, seq, holders, _ = self._read_slot(i)
                if state in (SlotState.PUBLISHED, SlotState.DRAINING) and holders:
                    if oldest is None or seq < oldest[0]:
                        oldest = (seq, holders)
            if oldest is None:
                return None
            holders = oldest[1]
            candidates = [j for j in range(self.consumer_count) if holders >> j & 1]
            return min(candidates, key=lambda j: (self._read_consumer(j)[0], j))

    def _evict_stragglers(self) -> None:
        now = time.monotonic_ns()
        limit = self.release_timeout_ms * 1_000_000
        late = 0
        for i in range(self.slot_count):
            state, _, _, _, _, holders, published_ns = self._read_slot(i)
            if state in (SlotState.PUBLISHED, SlotState.DRAINING) and now - published_ns > limit:
                late |= holders
        for j in range(self.consumer_count):
            if late >> j & 1:
                self._evict_locked(j)

    def payload_buffer(self, handle: SlotHandle) -> memoryview:
        """Writable payload region of a slot in state filling."""
        state, gen, *_ = self._read_slot(handle.slot_index)
        if gen != handle.generation:
            raise SlotRecycled("slot recycled")
        if state != SlotState.FILLING:
            raise BusError("payload is writable only while filling")
        return self._payload_view(handle.slot_index)

    def write_frame(self, handle: SlotHandle, frame: np.ndarray) -> None:
        buf = self.payload_buffer(handle)
        if frame.nbytes > self.slot_capacity:
            raise BusError(f"frame of {frame.nbytes} bytes exceeds slot capacity {self.slot_capacity}")
        dst = np.frombuffer(buf, dtype=frame.dtype, count=frame.size).reshape(frame.shape)
        np.copyto(dst, frame)
        del dst
        buf.release()

    def publish(self, handle: SlotHandle, meta: FrameMeta) -> int:
        """Make a filled slot visible to every active consumer; returns its sequence number."""
        min_stride = meta.width * meta.bytes_per_sample * meta.channels
        if meta.stride < min_stride or meta.payload_len > self.slot_capacity:
            raise BusError("meta/payload mismatch")
        key = (meta.source_stream, meta.preset_id)
        if key in self._last_frame and meta.frame_id <= self._last_frame[key]:
            raise BusError(f"frame_id {meta.frame_id} not increasing for stream/preset {key}")
        with self._locked():
            state, gen, *_ = self._read_slot(handle.slot_index)
            if gen != handle.generation:
                raise SlotRecycled("slot recycled")
            if state != SlotState.FILLING:
                raise DoublePublish("double publish")
            seq = self._u64(_OFF_PUBLISH_SEQ) + 1
            self._set_u64(_OFF_PUBLISH_SEQ, seq)
            holders = self._active_mask()
            refcount = bin(holders).count("1")
            new_state = SlotState.PUBLISHED if refcount else SlotState.FREE
            self._write_slot(handle.slot_index, new_state, gen, refcount, meta.pack(), seq,
                             holders, time.monotonic_ns())
            self._ring()
        self._last_frame[key] = meta.frame_id
        return seq

    def shutdown(self) -> None:
        """No more frames; consumers drain what was published, then see end-of-stream."""
        if self.closed:
            return
        with self._locked():
            _U32.pack_into(self._mm, _OFF_SHUTDOWN, 1)
            self._ring()

    def wait_idle(self, timeout_ms: int | None = None) -> bool:
        """Block until no slot is published or draining."""
        def attempt():
            for i in range(self.slot_count):
                if self._read_slot(i)[0] in (SlotState.PUBLISHED, SlotState.DRAINING):
                    if self.release_timeout_ms is not None:
                        self._evict_stragglers()
                    return None
            return True
        return self._wait(attempt, None if timeout_ms is None else timeout_ms / 1000) is not None

    def deregister(self, consumer_id: int) -> None:
        """Evict a consumer, dropping its outstanding references."""
        with self._locked():
            self._evict_locked(consumer_id)

    def _evict_locked(self, j: int) -> None:
        cursor, state, delivered, released = self._read_consumer(j)
        if state == ConsumerState.EVICTED:
            return
        self._write_consumer(j, cursor, ConsumerState.EVICTED, delivered, released)
        bit = 1 << j
        for i in range(self.slot_count):
            st, gen, ref, meta_raw, seq, holders, pub = self._read_slot(i)
            if st in (SlotState.PUBLISHED, SlotState.DRAINING) and holders & bit:
                holders &= ~bit
                ref -= 1
                st = SlotState.FREE if ref == 0 else SlotState.DRAINING
                self._write_slot(i, st, gen, ref, meta_raw, seq, holders, pub)
        self._ring()

    # -- consumer ----------------------------------------------------------

    def consume_next(self, consumer_id: int, timeout_ms: int | None = None) -> FrameView | None:
        """Next unseen frame for ``consumer_id``; None at end-of-stream."""
        self._consumer_off(consumer_id)
        bit = 1 << consumer_id
        end = object()

        def attempt():
            cursor, state, delivered, released = self._read_consumer(consumer_id)
            if state == ConsumerState.EVICTED:
                raise ConsumerEvicted(f"consumer {consumer_id} evicted")
            published = self._u64(_OFF_PUBLISH_SEQ)
            while cursor <= published:
                for i in range(self.slot_count):
                    st, gen, _, meta_raw, seq, holders, _ = self._read_slot(i)
                    if seq == cursor and st in (SlotState.PUBLISHED, SlotState.DRAINING):
                        if holders & bit:
                            self._write_consumer(consumer_id, cursor + 1, state, delivered + 1, released)
                            return FrameView(self, SlotHandle(i, gen), FrameMeta.unpack(meta_raw), seq)
                        break
                # frame was published without us (or already reclaimed): not ours
                cursor += 1
                self._write_consumer(consumer_id, cursor, state, delivered, released)
            if self.is_shutdown:
                return end
            return None

        result = self._wait(attempt, None if timeout_ms is None else timeout_ms / 1000)
        if result is None:
            raise BusTimeout(f"consumer {consumer_id}: no frame within {timeout_ms} ms")
        return None if result is end else result

    def release(self, consumer_id: int, handle: SlotHandle | FrameView) -> None:
        if isinstance(handle, FrameView):
            handle = handle.handle
        bit = 1 << consumer_id
        with self._locked():
            cursor, cstate, delivered, released = self._read_consumer(consumer_id)
            st, gen, ref, meta_raw, seq, holders, pub = self._read_slot(handle.slot_index)
            if gen != handle.generation:
                raise SlotRecycled("slot recycled")
            if cstate == ConsumerState.EVICTED:
                raise ConsumerEvicted(f"consumer {consumer_id} evicted")
            if st not in (SlotState.PUBLISHED, SlotState.DRAINING) or not holders & bit:
                raise AlreadyReleased("already released")
            holders &= ~bit
            ref -= 1
            st = SlotState.FREE if ref == 0 else SlotState.DRAINING
            self._write_slot(handle.slot_index, st, gen, ref, meta_raw, seq, holders, pub)
            self._write_consumer(consumer_id, cursor, cstate, delivered, released + 1)
            self._ring()

    def read_slot(self, handle: SlotHandle, length: int) -> bytes:
        """Copy a slot's payload for a handle received out-of-band.

        Raises :class:`SlotRecycled` if the generation differs before or after the copy.
        """
        if self.generation(handle.slot_index) != handle.generation:
            raise SlotRecycled("slot recycled")
        data = bytes(self._payload_view(handle.slot_index, length))
        if self.generation(handle.slot_index) != handle.generation:
            raise SlotRecycled("slot recycled")
        return data
