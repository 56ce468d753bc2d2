import socket
import struct

import pytest
from hypothesis import given, settings, strategies as st

from reedsbench.framebus import FrameMeta
from reedsbench.protocol import (MAX_PAYLOAD, Bye, Connection, ConnectionClosed, Detection,
                                 ErrorCode, ErrorMsg, FrameDescriptor, Hello, MsgType,
                                 PluginRegistry, PluginSession, ProtocolError, Release,
                                 ResultPayload, StreamDecoder, Welcome, decode_payload,
                                 decode_stream, encode, handshake)


def text(max_bytes):
    return st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="\0"),
                   max_size=max_bytes // 4)


u16, u32, u64 = st.integers(0, 2**16 - 1), st.integers(0, 2**32 - 1), st.integers(0, 2**64 - 1)


@st.composite
def frames(draw):
    fid, pid = draw(u64), draw(u16)
    meta = FrameMeta(fid, draw(u16), pid, draw(u32), draw(u32), draw(u32),
                     draw(st.integers(0, 255)), draw(st.integers(0, 255)), draw(u64))
    return FrameDescriptor(fid, pid, draw(text(64)), draw(u32), draw(u64), meta)


messages = st.one_of(
    st.builds(Hello, text(64), text(16), u16),
    st.builds(Welcome, u32, text(64), u32, u64, u32),
    frames(),
    st.builds(ResultPayload, u64, u64,
              st.lists(st.builds(Detection, u16, u32, u32, u32, u32, u16), max_size=8).map(tuple)),
    st.builds(Release, u64, u32, u64),
    st.just(Bye()),
    st.builds(ErrorMsg, u16, st.text(max_size=40)),
)


@settings(max_examples=500)
@given(messages)
def test_round_trip(msg):
    raw = encode(msg)
    length, t = struct.unpack_from("<IB", raw)
    assert length == len(raw) - 5
    assert decode_payload(t, raw[5:]) == msg


@settings(max_examples=200)
@given(st.lists(messages, max_size=6), st.binary(max_size=40), st.lists(st.integers(1, 64), max_size=20))
def test_chunking_does_not_change_outcome(msgs, tail, cuts):
    data = b"".join(encode(m) for m in msgs) + tail
    whole, err = decode_stream(data)
    dec = StreamDecoder()
    got, pos, chunk_err = [], 0, None
    sizes = cuts + [len(data)]
    try:
        for size in sizes:
            got.extend(dec.feed(data[pos:pos + size]))
            pos += size
            if pos >= len(data):
                break
        dec.finish()
    except ProtocolError as exc:
        chunk_err = exc
    assert got == whole
    assert (chunk_err is None) == (err is None)
    if err is not None:
        assert (chunk_err.code, chunk_err.offset) == (err.code, err.offset)


def test_valid_prefix_then_error_offset():
    good = encode(Bye()) + encode(Release(1, 2, 3))
    msgs, err = decode_stream(good + b"\x00\x00\x00\x00\x63")
    assert msgs == [Bye(), Release(1, 2, 3)]
    assert err.code == ErrorCode.UNKNOWN_TYPE and err.offset == len(good)


def test_decoder_is_poisoned():
    dec = StreamDecoder()
    with pytest.raises(ProtocolError) as first:
        dec.feed(b"\x01\x00\x00\x00\x06x")  # BYE with a payload
    with pytest.raises(ProtocolError) as again:
        dec.feed(encode(Bye()))
    assert first.value == again.value and first.value.code == ErrorCode.BAD_LENGTH


@pytest.mark.parametrize("data,code", [
    (struct.pack("<IB", MAX_PAYLOAD + 1, MsgType.RESULT), ErrorCode.TOO_LARGE),
    (struct.pack("<IB", 3, MsgType.RELEASE) + b"abc", ErrorCode.BAD_LENGTH),
    (struct.pack("<IB", 2, MsgType.RESULT) + b"ab", ErrorCode.BAD_LENGTH),
    (struct.pack("<IB", 18, MsgType.RESULT) + struct.pack("<QQH", 1, 1, 1), ErrorCode.BAD_LENGTH),
    (struct.pack("<IB", 82, MsgType.HELLO) + struct.pack("<H", 1) + b"a\0b".ljust(64, b"\0") + bytes(16),
     ErrorCode.BAD_STRING),
    (struct.pack("<IB", 82, MsgType.HELLO) + struct.pack("<H", 1) + b"\xff".ljust(64, b"\0") + bytes(16),
     ErrorCode.BAD_STRING),
    (encode(Bye())[:3], ErrorCode.TRUNCATED),
])
def test_specific_errors(data, code):
    _, err = decode_stream(data)
    assert err is not None and err.code == code and err.offset == 0


def test_frame_meta_must_agree():
    meta = FrameMeta(5, 0, 1, 8, 4, 16, 1, 10, 0)
    raw = bytearray(encode(FrameDescriptor(5, 1, "r", 0, 1, meta)))
    struct.pack_into("<Q", raw, 5, 6)  # descriptor frame_id no longer matches meta
    _, err = decode_stream(bytes(raw))
    assert err.code == ErrorCode.INCONSISTENT


def test_encode_rejects_bad_strings():
    with pytest.raises(ValueError):
        encode(Hello("x" * 65))
    with pytest.raises(ValueError):
        encode(Hello("a\0b"))


@settings(max_examples=1000)
@given(st.binary(max_size=300))
def test_fuzz_is_deterministic(data):
    a = decode_stream(data)
    b = decode_stream(data)
    assert a[0] == b[0]
    if a[1] is None:
        assert b[1] is None
    else:
        assert (a[1].code, a[1].offset, a[1].reason) == (b[1].code, b[1].offset, b[1].reason)
        assert 0 <= a[1].offset <= len(data)


def test_registry_rules():
    reg = PluginRegistry(2)
    assert reg.register(Hello("a")) == 0
    with pytest.raises(ProtocolError, match="duplicate algorithm"):
        reg.register(Hello("a"))
    with pytest.raises(ProtocolError, match="unsupported protocol version"):
        reg.register(Hello("b", protocol_version=2))
    with pytest.raises(ProtocolError, match="unsupported task kind"):
        reg.register(Hello("b", task="segmentation"))
    assert reg.register(Hello("b")) == 1
    with pytest.raises(ProtocolError):
        reg.register(Hello("c"))


@pytest.fixture
def pair():
    a, b = socket.socketpair()
    ca, cb = Connection(a), Connection(b)
    yield ca, cb
    ca.close()
    cb.close()


def test_handshake_and_exchange(pair):
    harness, plugin = pair
    plugin.send(Hello("algo"))
    session = handshake(harness, PluginRegistry(4), Welcome(0, "bus", 2, 100, 4), timeout=1)
    welcome = plugin.recv(1)
    assert welcome == Welcome(0, "bus", 2, 100, 4) and session.name == "algo"

    meta = FrameMeta(1, 0, 3, 100, 50, 200, 1, 10, 0)
    desc = FrameDescriptor(1, 3, "bus", 0, 1, meta)
    sent = session.send_frame(desc)
    assert plugin.recv(1) == desc
    plugin.send(ResultPayload(1, 500, (Detection(0, 1, 1, 10, 10),)))
    plugin.send(Release(1, 0, 1))
    result, harness_ns = session.await_result(desc, sent, timeout=1)
    assert result.detections[0].w == 10 and harness_ns > 0


def test_handshake_rejection_sends_error(pair):
    harness, plugin = pair
    plugin.send(Hello("algo", task="tracking"))
    with pytest.raises(ProtocolError):
        handshake(harness, PluginRegistry(1), Welcome(0, "bus", 1, 1, 1), timeout=1)
    reply = plugin.recv(1)
    assert isinstance(reply, ErrorMsg) and reply.code == ErrorCode.TASK


def _session(pair):
    harness, plugin = pair
    return PluginSession(harness, 0, "algo", "detection", "bus"), plugin


@pytest.mark.parametrize("replies,match", [
    ([Release(1, 0, 1)], "RELEASE before RESULT"),
    ([ResultPayload(9, 5)], "unknown frame_id"),
    ([ResultPayload(1, 0)], "exec_time_ns"),
    ([ResultPayload(1, 5, (Detection(0, 95, 0, 10, 10),))], "outside frame"),
    ([ResultPayload(1, 5), Release(1, 0, 2)], "does not match"),
])
def test_session_violations(pair, replies, match):
    session, plugin = _session(pair)
    desc = FrameDescriptor(1, 0, "bus", 0, 1, FrameMeta(1, 0, 0, 100, 50, 200, 1, 10, 0))
    for r in replies:
        plugin.send(r)
    with pytest.raises(ProtocolError, match=match):
        session.await_result(desc, 0, timeout=1)


def test_session_timeout_and_close(pair):
    session, plugin = _session(pair)
    desc = FrameDescriptor(1, 0, "bus", 0, 1, FrameMeta(1, 0, 0, 10, 10, 20, 1, 10, 0))
    with pytest.raises(ProtocolError) as exc:
        session.await_result(desc, 0, timeout=0.05)
    assert exc.value.code == ErrorCode.TIMEOUT
    plugin.sock.close()
    with pytest.raises(ConnectionClosed):
        session.await_result(desc, 0, timeout=1)
