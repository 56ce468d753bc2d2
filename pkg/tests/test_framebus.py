import multiprocessing as mp
import os
import random
import threading
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reedsbench.framebus import (AlreadyReleased, BusConfig, BusError, BusStalled, BusTimeout,
                                 ConsumerEvicted, ConsumerState, DoublePublish, FrameBus, FrameMeta,
                                 SlotRecycled, SlotState, region_path)

_names = iter(range(10**9))


def new_bus(slots=2, consumers=1, capacity=4096, **kw):
    name = f"t{os.getpid()}-{next(_names)}"
    return FrameBus.create(name, BusConfig(slots, capacity, consumers, **kw))


def frame(value, w=8, h=4):
    return np.full((h, w), value, dtype=np.uint16)


def meta_for(arr, frame_id, preset=0):
    return FrameMeta.for_array(arr, frame_id=frame_id, source_stream=0, preset_id=preset,
                               bit_depth=10, timestamp_ns=frame_id * 1000)


def put(bus, frame_id, preset=0, timeout_ms=None):
    arr = frame(frame_id)
    h = bus.acquire_slot(timeout_ms)
    bus.write_frame(h, arr)
    bus.publish(h, meta_for(arr, frame_id, preset))
    return h


def test_fresh_bus_first_slot():
    with new_bus() as bus:
        h = bus.acquire_slot()
        assert (h.slot_index, h.generation) == (0, 1)
        info = bus.slot_info(0)
        assert info.state == SlotState.FILLING and info.refcount == 0


def test_header_layout():
    with new_bus(slots=3, consumers=2, capacity=5000) as bus:
        raw = region_path(bus.name).read_bytes()[:22]
        import struct
        assert struct.unpack("<4sHIQI", raw) == (b"RBUS", 1, 3, 5000, 2)


def test_starvation_names_slowest_consumer():
    with new_bus(slots=2, consumers=2) as bus:
        put(bus, 1)
        put(bus, 2)
        # consumer 0 drains, consumer 1 never does
        for _ in range(2):
            bus.release(0, bus.consume_next(0))
        with pytest.raises(BusStalled, match="bus stalled: slowest is consumer 1") as exc:
            bus.acquire_slot(timeout_ms=50)
        assert exc.value.consumer_id == 1


def test_single_slot_reuse_bumps_generation():
    with new_bus(slots=1, consumers=1) as bus:
        h1 = put(bus, 1)
        v = bus.consume_next(0)
        bus.release(0, v)
        h2 = bus.acquire_slot(timeout_ms=100)
        assert h2.slot_index == h1.slot_index and h2.generation == h1.generation + 1


def test_publish_refcount_equals_consumers():
    with new_bus(slots=2, consumers=3) as bus:
        h = put(bus, 1)
        info = bus.slot_info(h.slot_index)
        assert info.refcount == 3 and info.state == SlotState.PUBLISHED and info.holders == 0b111


def test_double_publish():
    with new_bus() as bus:
        arr = frame(1)
        h = bus.acquire_slot()
        bus.write_frame(h, arr)
        bus.publish(h, meta_for(arr, 1))
        with pytest.raises(DoublePublish, match="double publish"):
            bus.publish(h, meta_for(arr, 2))


def test_meta_payload_mismatch_and_frame_order():
    with new_bus(capacity=64) as bus:
        h = bus.acquire_slot()
        with pytest.raises(BusError, match="meta/payload mismatch"):
            bus.publish(h, FrameMeta(1, 0, 0, 8, 4, 4, 1, 10, 0))  # stride too small
        with pytest.raises(BusError, match="meta/payload mismatch"):
            bus.publish(h, FrameMeta(1, 0, 0, 8, 40, 16, 1, 10, 0))  # exceeds capacity
        put_meta = meta_for(frame(1), 5)
        bus.publish(h, put_meta)
        h2 = bus.acquire_slot()
        with pytest.raises(BusError, match="not increasing"):
            bus.publish(h2, meta_for(frame(1), 5))


def test_zero_consumers_reclaims_immediately():
    with new_bus(slots=1, consumers=0) as bus:
        for fid in range(1, 4):
            put(bus, fid, timeout_ms=50)
        assert bus.slot_info(0).state == SlotState.FREE


def test_broadcast_in_order():
    with new_bus(slots=8, consumers=2) as bus:
        for fid in range(1, 6):
            put(bus, fid)
        for cid in (0, 1):
            seen = []
            for _ in range(5):
                v = bus.consume_next(cid, timeout_ms=100)
                seen.append(v.meta.frame_id)
                assert int(v.array()[0, 0]) == v.meta.frame_id
                bus.release(cid, v)
            assert seen == [1, 2, 3, 4, 5]


def test_shutdown_after_three_frames():
    with new_bus(slots=4) as bus:
        for fid in (1, 2, 3):
            put(bus, fid)
        bus.shutdown()
        got = []
        while (v := bus.consume_next(0, timeout_ms=100)) is not None:
            got.append(v.meta.frame_id)
            bus.release(0, v)
        assert got == [1, 2, 3]
        with pytest.raises(BusError):
            bus.acquire_slot()


def test_consume_timeout():
    with new_bus() as bus, pytest.raises(BusTimeout):
        bus.consume_next(0, timeout_ms=20)


def test_release_last_of_three_frees():
    with new_bus(slots=2, consumers=3) as bus:
        h = put(bus, 1)
        views = [bus.consume_next(c) for c in range(3)]
        bus.release(0, views[0])
        bus.release(1, views[1])
        assert bus.slot_info(h.slot_index).state == SlotState.DRAINING
        bus.release(2, views[2])
        assert bus.slot_info(h.slot_index).state == SlotState.FREE


def test_double_release_keeps_refcount():
    with new_bus(slots=2, consumers=2) as bus:
        h = put(bus, 1)
        v = bus.consume_next(0)
        bus.release(0, v)
        before = bus.slot_info(h.slot_index).refcount
        with pytest.raises(AlreadyReleased, match="already released"):
            bus.release(0, v)
        assert bus.slot_info(h.slot_index).refcount == before == 1


def test_stale_release_and_read_after_recycle():
    with new_bus(slots=1, consumers=1) as bus:
        put(bus, 1)
        v = bus.consume_next(0)
        bus.release(0, v)
        put(bus, 2, timeout_ms=100)
        with pytest.raises(SlotRecycled, match="slot recycled"):
            bus.release(0, v)
        with pytest.raises(SlotRecycled):
            v.read()
        with pytest.raises(SlotRecycled):
            bus.read_slot(v.handle, 16)
        nxt = bus.consume_next(0)
        assert nxt.meta.frame_id == 2 and int(nxt.array()[0, 0]) == 2


def test_payload_view_is_read_only():
    with new_bus() as bus:
        put(bus, 1)
        v = bus.consume_next(0)
        assert v.payload.readonly
        with pytest.raises(ValueError):
            v.array()[0, 0] = 9


def test_straggler_evicted_after_release_timeout():
    with new_bus(slots=1, consumers=2, release_timeout_ms=30) as bus:
        put(bus, 1)
        bus.release(0, bus.consume_next(0))
        put(bus, 2, timeout_ms=1000)  # consumer 1 never releases frame 1
        assert bus.evicted() == [1]
        assert bus.consumer_info(1).state == ConsumerState.EVICTED
        with pytest.raises(ConsumerEvicted):
            bus.consume_next(1, timeout_ms=10)


def test_deregister_frees_references():
    with new_bus(slots=2, consumers=2) as bus:
        h = put(bus, 1)
        bus.deregister(1)
        assert bus.slot_info(h.slot_index).refcount == 1
        bus.release(0, bus.consume_next(0))
        assert bus.slot_info(h.slot_index).state == SlotState.FREE


def test_invalid_configs_and_names():
    with pytest.raises(BusError):
        FrameBus.create("ok-name", BusConfig(0, 10, 1))
    with pytest.raises(BusError):
        FrameBus.create("ok-name", BusConfig(1, 10, 65))
    with pytest.raises(BusError):
        region_path("../escape")


def test_attach_sees_same_region():
    with new_bus(slots=2, consumers=1) as bus:
        put(bus, 1)
        other = FrameBus.attach(bus.name, writable=False)
        try:
            assert other.slot_count == 2 and other.publish_count == 1
        finally:
            other.close()


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(0, 5), st.integers(1, 30), st.integers(0, 2**32))
def test_threaded_exactly_once(slots, consumers, frames, seed):
    rng = random.Random(seed)
    with new_bus(slots=slots, consumers=consumers) as bus:
        logs = {c: [] for c in range(consumers)}

        def consumer(cid, delay):
            while (v := bus.consume_next(cid, timeout_ms=5000)) is not None:
                v.check()
                logs[cid].append((v.meta.preset_id, v.meta.frame_id, int(v.array()[0, 0])))
                if delay:
                    time.sleep(delay)
                bus.release(cid, v)

        threads = [threading.Thread(target=consumer, args=(c, rng.choice([0, 0, 0.001])))
                   for c in range(consumers)]
        for t in threads:
            t.start()
        for fid in range(1, frames + 1):
            for preset in (0, 1):
                put(bus, fid, preset, timeout_ms=5000)
        bus.shutdown()
        for t in threads:
            t.join()
        expected = [(p, f, f) for f in range(1, frames + 1) for p in (0, 1)]
        for cid in range(consumers):
            assert logs[cid] == expected
        assert bus.wait_idle(timeout_ms=100)
        assert all(bus.slot_info(i).refcount == 0 for i in range(slots))


def _child_consumer(name, cid, scratch, out):
    os.environ["REEDSB_TMP"] = scratch
    bus = FrameBus.attach(name)
    seen, stale = [], 0
    try:
        while (v := bus.consume_next(cid, timeout_ms=20000)) is not None:
            arr = v.array().copy()
            try:
                v.check()
            except SlotRecycled:
                stale += 1
            seen.append((v.meta.frame_id, int(arr[0, 0]), int(arr[-1, -1])))
            bus.release(cid, v)
    finally:
        bus.close()
    out.put((cid, seen, stale))


def test_multiprocess_exactly_once(scratch):
    ctx = mp.get_context("spawn")
    consumers, frames = 3, 60
    with new_bus(slots=2, consumers=consumers, capacity=64 * 64 * 2) as bus:
        out = ctx.Queue()
        procs = [ctx.Process(target=_child_consumer, args=(bus.name, c, scratch, out))
                 for c in range(consumers)]
        for p in procs:
            p.start()
        for fid in range(1, frames + 1):
            arr = frame(fid, 64, 64)
            h = bus.acquire_slot(timeout_ms=20000)
            bus.write_frame(h, arr)
            bus.publish(h, meta_for(arr, fid))
        bus.shutdown()
        results = [out.get(timeout=60) for _ in procs]
        for p in procs:
            p.join(timeout=30)
        for cid, seen, stale in results:
            assert stale == 0
            assert seen == [(f, f, f) for f in range(1, frames + 1)]
        assert bus.wait_idle(timeout_ms=1000)
