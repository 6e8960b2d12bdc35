import socket
import struct
import threading
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiobench.protocol import (
    HEADER_SIZE,
    BadMagic,
    Frame,
    FrameHeader,
    Kind,
    ProtocolError,
    ShaperConfig,
    TokenBucket,
    TruncatedFrame,
    UnsupportedVersion,
    decode_frame,
    decode_header,
    encode_frame,
    recv_frame,
    send_frame,
    shaped_write,
)

U64 = st.integers(min_value=0, max_value=2**64 - 1)
frames = st.builds(
    Frame.build,
    st.sampled_from(list(Kind)),
    st.binary(max_size=2048),
    U64,
    U64,
)


def test_header_layout_is_pinned():
    f = Frame.build(Kind.DATA, b"xyz", msg_id=0x0102030405060708, cpu_cost_us=50_000)
    raw = encode_frame(f)
    assert HEADER_SIZE == 32
    assert raw[0:4] == bytes([0x48, 0x49, 0x4F, 0x31])
    assert raw[4] == 1
    assert raw[5] == int(Kind.DATA)
    assert raw[6:8] == b"\x00\x00"
    assert raw[8:16] == bytes.fromhex("0102030405060708")
    assert struct.unpack(">Q", raw[16:24])[0] == 50_000
    assert struct.unpack(">Q", raw[24:32])[0] == 3
    assert raw[32:] == b"xyz"


def test_roundtrip_thousand_random_frames():
    import random

    rng = random.Random(1234)
    kinds = list(Kind)
    for _ in range(1000):
        f = Frame.build(
            rng.choice(kinds),
            rng.randbytes(rng.randint(0, 4096)),
            rng.getrandbits(64),
            rng.getrandbits(64),
        )
        g = decode_frame(encode_frame(f))
        assert g == f
        assert (g.kind, g.msg_id, g.cpu_cost_us, g.payload) == (f.kind, f.msg_id, f.cpu_cost_us, f.payload)


def test_roundtrip_large_payload():
    payload = bytes(range(256)) * (16 * 1024 * 4)  # 16 MiB
    f = Frame.build(Kind.DATA, payload, 7, 1)
    assert decode_frame(encode_frame(f)) == f


@given(frames)
@settings(max_examples=300, deadline=None)
def test_roundtrip_property(f):
    assert decode_frame(encode_frame(f)) == f


@given(frames, st.data())
@settings(max_examples=300, deadline=None)
def test_every_strict_prefix_is_truncated(f, data):
    raw = encode_frame(f)
    cut = data.draw(st.integers(min_value=0, max_value=len(raw) - 1))
    with pytest.raises(TruncatedFrame):
        decode_frame(raw[:cut])


def test_all_prefixes_small_frame():
    raw = encode_frame(Frame.build(Kind.STATUS, b"hello", 1, 2))
    for cut in range(len(raw)):
        with pytest.raises(TruncatedFrame):
            decode_frame(raw[:cut])


def test_bad_magic_and_version():
    raw = bytearray(encode_frame(Frame.build(Kind.DATA, b"a")))
    bad = bytes(raw)
    bad = b"XIO1" + bad[4:]
    with pytest.raises(BadMagic):
        decode_frame(bad)
    with pytest.raises(BadMagic):
        decode_frame(b"X")  # wrong even as a prefix
    raw[4] = 2
    with pytest.raises(UnsupportedVersion):
        decode_frame(bytes(raw))


def test_reserved_and_kind_and_trailing_rejected():
    raw = bytearray(encode_frame(Frame.build(Kind.DATA, b"a")))
    r = bytearray(raw)
    r[7] = 1
    with pytest.raises(ProtocolError):
        decode_frame(bytes(r))
    r = bytearray(raw)
    r[5] = 99
    with pytest.raises(ProtocolError):
        decode_frame(bytes(r))
    with pytest.raises(ProtocolError):
        decode_frame(bytes(raw) + b"extra")


def test_header_rejects_out_of_range_fields():
    with pytest.raises(ValueError):
        FrameHeader(Kind.DATA, 2**64, 0, 0)
    with pytest.raises(ValueError):
        FrameHeader(Kind.DATA, 0, -1, 0)


def test_payload_len_mismatch_rejected():
    with pytest.raises(ValueError):
        Frame(FrameHeader(Kind.DATA, 0, 0, 5), b"abc")


def test_decode_header_only():
    raw = encode_frame(Frame.build(Kind.ROUTE_REQ, b"12345", 9, 0))
    h = decode_header(raw[:HEADER_SIZE])
    assert h.payload_len == 5 and h.msg_id == 9 and h.kind == Kind.ROUTE_REQ


def test_socket_send_recv():
    a, b = socket.socketpair()
    try:
        frames_out = [Frame.build(Kind.DATA, bytes([i]) * (i * 1000), i, i) for i in range(20)]
        t = threading.Thread(target=lambda: [send_frame(a, f) for f in frames_out])
        t.start()
        got = [recv_frame(b) for _ in frames_out]
        t.join()
        assert got == frames_out
        a.close()
        assert recv_frame(b) is None
    finally:
        b.close()


def test_recv_truncated_stream_raises():
    a, b = socket.socketpair()
    raw = encode_frame(Frame.build(Kind.DATA, b"x" * 100))
    a.sendall(raw[:50])
    a.close()
    with pytest.raises(TruncatedFrame):
        recv_frame(b)
    b.close()


class FakeClock:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        return self.t


def test_bucket_starts_empty_and_meters_exactly():
    clock = FakeClock()
    tb = TokenBucket(8_000, burst_bytes=500, clock=clock)  # 1000 B/s
    assert tb.reserve(100) == pytest.approx(0.1)
    clock.t = 10.0  # long idle: refills only up to the burst
    assert tb.reserve(500) == 0.0
    assert tb.reserve(1000) == pytest.approx(1.0)
    assert tb.bytes_out == 1600


@given(st.lists(st.integers(min_value=1, max_value=5000), min_size=1, max_size=50))
@settings(max_examples=100, deadline=None)
def test_shaper_conservation(chunks):
    tb = TokenBucket(1e12)
    out = bytearray()
    data = b"".join(bytes([i % 256]) * n for i, n in enumerate(chunks))
    n = shaped_write(tb, out.extend, data)
    assert n == len(data) and bytes(out) == data
    assert tb.bytes_out == len(data)


def test_shaper_rate_one_second_window():
    # 2.5 MB at 20 Mbit/s: 1.0 s nominal
    tb = TokenBucket(20e6)
    sink = bytearray()
    t0 = time.monotonic()
    shaped_write(tb, sink.extend, bytes(2_500_000))
    dt = time.monotonic() - t0
    assert len(sink) == 2_500_000
    assert 2_500_000 * 8 / dt <= 20e6 * 1.02
    assert dt <= 1.1


def test_shaper_config_validation():
    with pytest.raises(ValueError):
        ShaperConfig(0)
    with pytest.raises(ValueError):
        TokenBucket(1e6, burst_bytes=0)
    assert ShaperConfig(1e6).bucket().rate_bits_per_s == 1e6
