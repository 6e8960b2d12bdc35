"""Binary frame codec and token-bucket egress shaper.

Frame layout (big-endian, 32-byte header)::

    0-3    magic  b"HIO1"
    4      version (1)
    5      kind
    6-7    reserved, zero
    8-15   msg_id
    16-23  cpu_cost_us
    24-31  payload_len
    32..   payload
"""

from __future__ import annotations

import enum
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

MAGIC = b"HIO1"
VERSION = 1
HEADER = struct.Struct(">4sBBHQQQ")
HEADER_SIZE = HEADER.size  # 32
U64_MAX = (1 << 64) - 1

DEFAULT_BURST_BYTES = 64 * 1024


class Kind(enum.IntEnum):
    DATA = 1
    STATUS = 2
    ROUTE_REQ = 3
    ROUTE_RESP = 4
    QUEUE_PUSH = 5
    QUEUE_POP = 6
    QUEUE_MSG = 7
    DRAIN_MARK = 8


class ProtocolError(Exception):
    pass


class BadMagic(ProtocolError):
    pass


class UnsupportedVersion(ProtocolError):
    pass


class TruncatedFrame(ProtocolError):
    """Fewer bytes than the header claims; the read was incomplete."""


@dataclass(frozen=True)
class FrameHeader:
    kind: Kind
    msg_id: int = 0
    cpu_cost_us: int = 0
    payload_len: int = 0
    magic: bytes = MAGIC
    version: int = VERSION
    reserved: int = 0

    def __post_init__(self):
        for name in ("msg_id", "cpu_cost_us", "payload_len"):
            value = getattr(self, name)
            if not 0 <= value <= U64_MAX:
                raise ValueError(f"{name}={value} does not fit in 64 bits")


@dataclass(frozen=True)
class Frame:
    header: FrameHeader
    payload: bytes = field(default=b"", repr=False)

    def __post_init__(self):
        if len(self.payload) != self.header.payload_len:
            raise ValueError(
                f"payload is {len(self.payload)} bytes, header says {self.header.payload_len}"
            )

    @classmethod
    def build(cls, kind: Kind, payload: bytes = b"", msg_id: int = 0, cpu_cost_us: int = 0) -> Frame:
        payload = bytes(payload)
        return cls(FrameHeader(Kind(kind), msg_id, cpu_cost_us, len(payload)), payload)

    @property
    def kind(self) -> Kind:
        return self.header.kind

    @property
    def msg_id(self) -> int:
        return self.header.msg_id

    @property
    def cpu_cost_us(self) -> int:
        return self.header.cpu_cost_us


def encode_header(header: FrameHeader) -> bytes:
    return HEADER.pack(
        header.magic,
        header.version,
        int(header.kind),
        header.reserved,
        header.msg_id,
        header.cpu_cost_us,
        header.payload_len,
    )


def encode_frame(frame: Frame) -> bytes:
    return encode_header(frame.header) + frame.payload


def decode_header(data: bytes | bytearray | memoryview) -> FrameHeader:
    """Parse the first 32 bytes of ``data``.

    Corruption (magic, version, kind, reserved) is reported before
    incompleteness, but only from bytes actually present, so any prefix of a
    valid encoding raises TruncatedFrame.
    """
    head = bytes(data[:HEADER_SIZE])
    if head[:4] != MAGIC[: len(head[:4])]:
        raise BadMagic(f"bad magic {head[:4]!r}")
    if len(head) > 4 and head[4] != VERSION:
        raise UnsupportedVersion(f"version {head[4]} (expected {VERSION})")
    if len(head) > 5 and head[5] not in Kind._value2member_map_:
        raise ProtocolError(f"unknown frame kind {head[5]}")
    if len(head) > 6 and any(head[6:8]):
        raise ProtocolError("reserved header bytes are not zero")
    if len(head) < HEADER_SIZE:
        raise TruncatedFrame(f"need {HEADER_SIZE} header bytes, have {len(head)}")
    magic, version, kind, reserved, msg_id, cpu, plen = HEADER.unpack(head)
    return FrameHeader(Kind(kind), msg_id, cpu, plen, magic, version, reserved)


def decode_frame(data: bytes | bytearray | memoryview) -> Frame:
    header = decode_header(data)
    total = HEADER_SIZE + header.payload_len
    if len(data) < total:
        raise TruncatedFrame(f"need {total} bytes, have {len(data)}")
    if len(data) > total:
        raise ProtocolError(f"{len(data) - total} trailing bytes after frame")
    return Frame(header, bytes(data[HEADER_SIZE:total]))


class TokenBucket:
    """Thread-safe token bucket metering bytes at ``rate_bits_per_s``.

    The bucket starts empty, so a fresh link never exceeds its rate; it
    refills up to ``burst_bytes`` while idle. Tokens may go negative: a
    writer takes what it needs and sleeps off the debt outside the lock,
    which keeps concurrent writers in arrival order.
    """

    def __init__(self, rate_bits_per_s: float, burst_bytes: int = DEFAULT_BURST_BYTES, clock=time.monotonic):
        if not rate_bits_per_s > 0:
            raise ValueError("rate_bits_per_s must be positive")
        if burst_bytes < 1:
            raise ValueError("burst_bytes must be positive")
        self.rate_bits_per_s = float(rate_bits_per_s)
        self.burst_bytes = int(burst_bytes)
        self._rate = self.rate_bits_per_s / 8.0  # bytes/s
        self._clock = clock
        self._lock = threading.Lock()
        self._tokens = 0.0
        self._stamp = clock()
        self.bytes_out = 0

    def _refill(self, now: float) -> None:
        self._tokens = min(self.burst_bytes, self._tokens + (now - self._stamp) * self._rate)
        self._stamp = now

    def reserve(self, nbytes: int) -> float:
        """Take ``nbytes`` tokens and return the delay before they may be sent."""
        with self._lock:
            self._refill(self._clock())
            self._tokens -= nbytes
            self.bytes_out += nbytes
            return 0.0 if self._tokens >= 0 else -self._tokens / self._rate

    def acquire(self, nbytes: int) -> float:
        delay = self.reserve(nbytes)
        if delay > 0:
            time.sleep(delay)
        return delay


@dataclass(frozen=True)
class ShaperConfig:
    rate_bits_per_s: float
    burst_bytes: int = DEFAULT_BURST_BYTES

    def __post_init__(self):
        if not self.rate_bits_per_s > 0:
            raise ValueError("rate_bits_per_s must be positive")
        if self.burst_bytes < 1:
            raise ValueError("burst_bytes must be positive")

    def bucket(self) -> TokenBucket:
        return TokenBucket(self.rate_bits_per_s, self.burst_bytes)


def shaped_write(shaper: TokenBucket | None, write, data) -> int:
    """Write ``data`` through ``write`` no faster than ``shaper`` allows.

    Data goes out in chunks of at most ``burst_bytes``, each paced by the
    bucket. ``shaper=None`` writes unshaped. Returns the bytes written.
    """
    view = memoryview(data).cast("B")
    if shaper is None:
        write(view)
        return len(view)
    step = shaper.burst_bytes
    for off in range(0, len(view), step):
        chunk = view[off : off + step]
        shaper.acquire(len(chunk))
        write(chunk)
    return len(view)


def send_frame(sock: socket.socket, frame: Frame, shaper: TokenBucket | None = None) -> int:
    header = encode_header(frame.header)
    payload = frame.payload
    if shaper is not None:
        shaped_write(shaper, sock.sendall, header)
        shaped_write(shaper, sock.sendall, payload)
    elif len(payload) < 65536:
        sock.sendall(header + payload)
    else:
        sock.sendall(header)
        sock.sendall(payload)
    return HEADER_SIZE + len(payload)


def _recv_exact(sock: socket.socket, n: int, *, eof_ok: bool = False) -> bytearray | None:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        k = sock.recv_into(view[got:])
        if k == 0:
            if got == 0 and eof_ok:
                return None
            raise TruncatedFrame(f"connection closed after {got} of {n} bytes")
        got += k
    return buf


def recv_frame(sock: socket.socket) -> Frame | None:
    """Read one frame; returns None on a clean EOF at a frame boundary."""
    head = _recv_exact(sock, HEADER_SIZE, eof_ok=True)
    if head is None:
        return None
    header = decode_header(head)
    payload = _recv_exact(sock, header.payload_len) if header.payload_len else b""
    return Frame(header, bytes(payload))


def connect(addr: tuple[str, int], timeout: float | None = 5.0) -> socket.socket:
    sock = socket.create_connection(addr, timeout=timeout)
    sock.settimeout(None)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return sock
