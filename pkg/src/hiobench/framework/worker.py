"""Worker node: a pool of processing-engine slots.

Each slot loops: pop a message from the master queue if there is one,
otherwise wait for a frame sent directly by the stream source, process it,
repeat. A status daemon reports slot availability to the master on every
change and at least once per heartbeat interval.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import socketserver
import threading
import time
import uuid
from dataclasses import dataclass

from ..protocol import Frame, Kind, ProtocolError, connect, recv_frame, send_frame
from ..telemetry import Counters, EventLog, StatusServer, metrics_document
from ..workload import burn_cpu
from .master import EMPTY_QUEUE_ID, HEARTBEAT_S

log = logging.getLogger(__name__)


class MasterUnreachable(ConnectionError):
    pass


@dataclass(frozen=True)
class ProcessingRecord:
    msg_id: int
    slot: int
    burn_us: float
    latency_us: float  # receive -> done
    via: str  # "p2p" | "queue"


class _MasterLink:
    """One persistent request/response connection to the master."""

    def __init__(self, addr: tuple[str, int], backoff_s: float = 0.05, max_backoff_s: float = 1.0):
        self.addr = addr
        self._sock: socket.socket | None = None
        self._backoff = backoff_s
        self._min_backoff = backoff_s
        self._max_backoff = max_backoff_s
        self._retry_at = 0.0
        self._lock = threading.Lock()

    def _ensure(self) -> socket.socket:
        if self._sock is None:
            now = time.monotonic()
            if now < self._retry_at:
                raise MasterUnreachable(f"master {self.addr} down; retrying in {self._retry_at - now:.2f}s")
            try:
                self._sock = connect(self.addr)
            except OSError as exc:
                self._retry_at = now + self._backoff
                self._backoff = min(self._max_backoff, self._backoff * 2)
                raise MasterUnreachable(f"master {self.addr}: {exc}") from exc
            self._backoff = self._min_backoff
        return self._sock

    def call(self, frame: Frame, expect_reply: bool = True) -> Frame | None:
        with self._lock:
            try:
                sock = self._ensure()
                send_frame(sock, frame)
                if not expect_reply:
                    return None
                reply = recv_frame(sock)
                if reply is None:
                    raise OSError("master closed connection")
                return reply
            except (OSError, ProtocolError) as exc:
                self.close_locked()
                if isinstance(exc, MasterUnreachable):
                    raise
                raise MasterUnreachable(str(exc)) from exc

    def close_locked(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None

    def close(self) -> None:
        with self._lock:
            self.close_locked()


class Worker:
    def __init__(
        self,
        master_addr: tuple[str, int],
        slots: int = 1,
        host: str = "127.0.0.1",
        port: int = 0,
        http_port: int | None = 0,
        worker_id: str | None = None,
        heartbeat_s: float = HEARTBEAT_S,
        poll_s: float = 0.1,
        track_ids: bool = False,
        event_log: EventLog | None = None,
    ):
        if slots < 1:
            raise ValueError("slots must be >= 1")
        self.worker_id = worker_id or f"worker-{uuid.uuid4().hex[:6]}"
        self.master_addr = tuple(master_addr)
        self.slots = slots
        self.heartbeat_s = heartbeat_s
        self.poll_s = poll_s
        self.track_ids = track_ids
        self.processed_ids: list[int] = []
        self.counters = Counters()
        self.counters.set_gauge("slots", slots)
        self.events = (event_log or EventLog()).bind("worker", self.worker_id)
        self.started = time.monotonic()
        self.inbox: queue.Queue[tuple[Frame, float]] = queue.Queue()
        self._busy = 0
        self._state_lock = threading.Lock()
        self._changed = threading.Event()
        self._stop = threading.Event()
        self._killed = False
        self._threads: list[threading.Thread] = []
        self._conns: set[socket.socket] = set()
        worker = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                sock = self.request
                with worker._state_lock:
                    worker._conns.add(sock)
                try:
                    while not worker._stop.is_set():
                        frame = recv_frame(sock)
                        if frame is None:
                            return
                        worker.receive_direct(frame)
                except (OSError, ProtocolError) as exc:
                    log.debug("%s: p2p connection closed: %s", worker.worker_id, exc)
                finally:
                    with worker._state_lock:
                        worker._conns.discard(sock)

        socketserver.ThreadingTCPServer.allow_reuse_address = True
        self._server = socketserver.ThreadingTCPServer((host, port), Handler)
        self._server.daemon_threads = True
        self.http = StatusServer("worker", self.worker_id, self.metrics, host, http_port) if http_port is not None else None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> Worker:
        self._spawn(self._server.serve_forever, "p2p")
        if self.http:
            self.http.start()
        for slot in range(self.slots):
            self._spawn(self._slot_loop, f"slot{slot}", slot)
        self._spawn(self._status_loop, "status")
        self.events.emit("start", address=list(self.address), slots=self.slots)
        return self

    def _spawn(self, fn, name, *args):
        t = threading.Thread(target=fn, args=args, name=f"{self.worker_id}-{name}", daemon=True)
        t.start()
        self._threads.append(t)

    def stop(self) -> None:
        self._stop.set()
        self._changed.set()
        self._server.shutdown()
        self._server.server_close()
        self._close_conns()
        if self.http:
            self.http.stop()
        self.events.emit("stop")

    def kill(self) -> None:
        """Simulate a crash: buffered and in-progress frames are lost."""
        self._killed = True
        self.events.emit("killed", inbox=self.inbox.qsize(), busy=self._busy)
        self.stop()

    def _close_conns(self):
        with self._state_lock:
            conns = list(self._conns)
        for c in conns:
            try:
                c.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass

    def join(self, timeout: float | None = None) -> None:
        for t in self._threads:
            t.join(timeout)

    # -- acquisition ---------------------------------------------------------

    def receive_direct(self, frame: Frame) -> None:
        if self._killed:
            return
        if frame.kind != Kind.DATA:
            self.counters.add("total_dropped")
            return
        self.inbox.put((frame, time.monotonic()))
        self.counters.update({"total_p2p": 1, "total_bytes": len(frame.payload)})
        self._changed.set()

    def acquire_next(self, link: _MasterLink, timeout: float | None = None) -> tuple[Frame, float, str] | None:
        """Head of the master queue if non-empty, else the next direct frame.

        Waits up to ``timeout`` (None: ``poll_s``) for a direct frame, then
        returns None so the caller re-checks the master queue.
        """
        try:
            reply = link.call(Frame.build(Kind.QUEUE_POP))
        except MasterUnreachable as exc:
            log.debug("%s: %s", self.worker_id, exc)
            reply = None
        if reply is not None and reply.msg_id != EMPTY_QUEUE_ID:
            frame = Frame.build(Kind.DATA, reply.payload, reply.msg_id, reply.cpu_cost_us)
            self.counters.update({"total_queued": 1, "total_bytes": len(reply.payload)})
            return frame, time.monotonic(), "queue"
        try:
            frame, t_recv = self.inbox.get(timeout=self.poll_s if timeout is None else timeout)
        except queue.Empty:
            return None
        return frame, t_recv, "p2p"

    def _slot_loop(self, slot: int) -> None:
        link = _MasterLink(self.master_addr)
        try:
            while not self._stop.is_set():
                got = self.acquire_next(link)
                if got is None:
                    continue
                self.process(got[0], slot, got[1], got[2])
        finally:
            link.close()

    # -- processing ----------------------------------------------------------

    def process(self, frame: Frame, slot: int = 0, received_at: float | None = None, via: str = "p2p"):
        """Run the synthetic map stage for one frame.

        Non-DATA frames are counted as dropped and ignored.
        """
        if frame.kind != Kind.DATA:
            self.counters.add("total_dropped")
            return None
        received_at = time.monotonic() if received_at is None else received_at
        with self._state_lock:
            self._busy += 1
        self._changed.set()
        t0 = time.monotonic_ns()
        burned = burn_cpu(frame.cpu_cost_us)
        busy_ns = time.monotonic_ns() - t0
        done = time.monotonic()
        with self._state_lock:
            self._busy -= 1
            if self._killed:
                return None
            if self.track_ids:
                self.processed_ids.append(frame.msg_id)
            self.counters.update({"total_processed": 1, "busy_ns": busy_ns})
        self._changed.set()
        return ProcessingRecord(frame.msg_id, slot, burned, (done - received_at) * 1e6, via)

    # -- status --------------------------------------------------------------

    def status(self) -> dict:
        with self._state_lock:
            busy = self._busy
            counters, _ = self.counters.snapshot()
        inbox = self.inbox.qsize()
        return {
            "worker_id": self.worker_id,
            "host": self.address[0],
            "port": self.address[1],
            "metrics_url": self.http.url if self.http else "",
            "slots": self.slots,
            "busy": busy,
            "inbox": inbox,
            "free": max(0, self.slots - busy - inbox),
            "processed": counters["total_processed"],
            "p2p_received": counters["total_p2p"],
        }

    def _status_loop(self) -> None:
        link = _MasterLink(self.master_addr)
        registered = False
        try:
            while not self._stop.is_set():
                self._changed.wait(self.heartbeat_s)
                self._changed.clear()
                if self._stop.is_set():
                    break
                try:
                    link.call(Frame.build(Kind.STATUS, json.dumps(self.status()).encode()), expect_reply=False)
                    if not registered:
                        registered = True
                        self.events.emit("registered", master=list(self.master_addr))
                except MasterUnreachable as exc:
                    log.debug("%s: status: %s", self.worker_id, exc)
        finally:
            link.close()

    def metrics(self) -> dict:
        with self._state_lock:
            busy = self._busy
            counters, gauges = self.counters.snapshot()
        inbox = self.inbox.qsize()
        gauges.update(in_flight=busy + inbox, slots=self.slots, free_slots=max(0, self.slots - busy - inbox))
        return metrics_document("worker", self.worker_id, self.started, counters, gauges)

    def serve_forever(self) -> None:
        self.start()
        try:
            while True:
                time.sleep(3600)
        finally:
            self.stop()
