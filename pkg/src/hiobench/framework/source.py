"""Streaming source: paced message generator with P2P-first routing."""

from __future__ import annotations

import itertools
import json
import logging
import socket
import threading
import time
import uuid
from dataclasses import dataclass

from ..protocol import Frame, Kind, ProtocolError, TokenBucket, connect, recv_frame, send_frame
from ..telemetry import Counters, EventLog, StatusServer, metrics_document
from ..workload import WorkloadPoint, make_message
from .master import NoWorkersRegistered, RouteDecision

log = logging.getLogger(__name__)

FELL_BEHIND_RATIO = 0.95


class SourceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SendReport:
    target_hz: float
    sent: int
    p2p: int
    queued: int
    duration_s: float
    achieved_hz: float
    blocked_fraction: float
    drained: bool = False

    @property
    def fell_behind(self) -> bool:
        """Achieved rate under 95% of target: data for the governor, not an error."""
        return self.achieved_hz < FELL_BEHIND_RATIO * self.target_hz


class StreamSource:
    """Sends synthetic DATA frames on an absolute schedule.

    Message k of a run is due at ``start + k / rate``; a late send never
    shifts later deadlines. Time a send spends past the next message's
    deadline counts as blocked time.

    All egress, control traffic included, goes through ``shaper`` when one
    is given, modelling the source's uplink.
    """

    def __init__(
        self,
        master_addr: tuple[str, int],
        shaper: TokenBucket | None = None,
        source_id: str | None = None,
        stream_seed: int = 0,
        http_port: int | None = None,
        host: str = "127.0.0.1",
        event_log: EventLog | None = None,
    ):
        self.master_addr = tuple(master_addr)
        self.shaper = shaper
        self.source_id = source_id or f"source-{uuid.uuid4().hex[:6]}"
        self.stream_seed = stream_seed
        self.counters = Counters()
        self.events = (event_log or EventLog()).bind("source", self.source_id)
        self.started = time.monotonic()
        self._ids = itertools.count()
        self._master: socket.socket | None = None
        self._workers: dict[tuple[str, int], socket.socket] = {}
        self._send_lock = threading.Lock()
        # continuous mode
        self._cond = threading.Condition()
        self._rate = 0.0
        self._point: WorkloadPoint | None = None
        self._epoch = 0
        self._halt = False
        self._thread: threading.Thread | None = None
        self.error: BaseException | None = None
        self.http = StatusServer("source", self.source_id, self.metrics, host, http_port) if http_port is not None else None
        if self.http:
            self.http.start()

    # -- connections ---------------------------------------------------------

    def _master_sock(self) -> socket.socket:
        if self._master is None:
            try:
                self._master = connect(self.master_addr)
            except OSError as exc:
                raise SourceError(f"master {self.master_addr} unreachable: {exc}") from exc
        return self._master

    def _master_call(self, frame: Frame) -> Frame:
        sock = self._master_sock()
        try:
            send_frame(sock, frame, self.shaper)
            reply = recv_frame(sock)
        except (OSError, ProtocolError) as exc:
            self._drop_master()
            raise SourceError(f"master connection failed: {exc}") from exc
        if reply is None:
            self._drop_master()
            raise SourceError("master closed the connection")
        return reply

    def _drop_master(self):
        if self._master is not None:
            self._master.close()
            self._master = None

    def route_request(self) -> RouteDecision:
        reply = self._master_call(Frame.build(Kind.ROUTE_REQ))
        return RouteDecision.from_json(json.loads(reply.payload))

    def close(self) -> None:
        self.stop_continuous()
        with self._send_lock:
            self._drop_master()
            for s in self._workers.values():
                s.close()
            self._workers.clear()
        if self.http:
            self.http.stop()

    # -- sending -------------------------------------------------------------

    def send_one(self, point: WorkloadPoint) -> str:
        """Route and send one message; returns "p2p" or "queue"."""
        with self._send_lock:
            msg_id = next(self._ids)
            frame = make_message(point, msg_id, self.stream_seed)
            decision = self.route_request()
            via = "queue"
            if decision.is_p2p:
                try:
                    sock = self._workers.get(decision.address)
                    if sock is None:
                        sock = self._workers[decision.address] = connect(decision.address)
                    send_frame(sock, frame, self.shaper)
                    via = "p2p"
                except OSError as exc:
                    log.info("%s: p2p send to %s failed (%s); falling back to queue", self.source_id, decision.address, exc)
                    bad = self._workers.pop(decision.address, None)
                    if bad is not None:
                        bad.close()
            if via == "queue":
                push = Frame.build(Kind.QUEUE_PUSH, frame.payload, frame.msg_id, frame.cpu_cost_us)
                try:
                    send_frame(self._master_sock(), push, self.shaper)
                except OSError as exc:
                    self._drop_master()
                    raise SourceError(f"queue push failed: {exc}") from exc
            self.counters.update(
                {"total_sent": 1, "total_bytes": len(frame.payload), "total_p2p" if via == "p2p" else "total_queued": 1}
            )
            return via

    def send_drain_mark(self) -> dict:
        sent = self.counters.get("total_sent")
        payload = {"source_id": self.source_id, "sent": sent}
        with self._send_lock:
            reply = self._master_call(Frame.build(Kind.DRAIN_MARK, json.dumps(payload).encode()))
        if reply.kind != Kind.DRAIN_MARK:
            raise SourceError(f"unexpected reply {reply.kind!r} to DRAIN_MARK")
        self.events.emit("drain_mark", sent=sent)
        return payload

    def stream(
        self,
        target_hz: float,
        point: WorkloadPoint,
        count: int | None = None,
        duration_s: float | None = None,
        drain_mark: bool | None = None,
    ) -> SendReport:
        """Send at ``target_hz`` until ``count`` messages or ``duration_s`` elapse.

        Count mode finishes with a DRAIN_MARK to the master (override with
        ``drain_mark``).
        """
        if not target_hz > 0:
            raise ValueError("target_hz must be positive")
        if count is None and duration_s is None:
            raise ValueError("give count or duration_s")
        if drain_mark is None:
            drain_mark = count is not None
        self.counters.set_gauge("offered_hz", target_hz)
        self.events.emit("stream_start", target_hz=target_hz, size=point.message_size_bytes, cpu_us=point.cpu_cost_us)
        period = 1.0 / target_hz
        sent = p2p = 0
        blocked = 0.0
        start = time.monotonic()
        k = 0
        while True:
            if count is not None and k >= count:
                break
            due = start + k * period
            if duration_s is not None and due - start >= duration_s:
                break
            now = time.monotonic()
            if due > now:
                time.sleep(due - now)
            s = time.monotonic()
            via = self.send_one(point)
            e = time.monotonic()
            late = e - max(due + period, s)
            if late > 0:
                blocked += late
                self.counters.add("blocked_ns", int(late * 1e9))
            sent += 1
            p2p += via == "p2p"
            k += 1
        end = time.monotonic()
        if duration_s is not None and count is None:
            end = max(end, start + duration_s)
        elapsed = max(end - start, 1e-9)
        self.counters.set_gauge("offered_hz", 0.0)
        drained = False
        if drain_mark:
            self.send_drain_mark()
            drained = True
        report = SendReport(
            target_hz=target_hz,
            sent=sent,
            p2p=p2p,
            queued=sent - p2p,
            duration_s=elapsed,
            achieved_hz=sent / elapsed,
            blocked_fraction=min(1.0, blocked / elapsed),
            drained=drained,
        )
        self.events.emit("stream_end", sent=sent, achieved_hz=report.achieved_hz, blocked=report.blocked_fraction)
        return report

    # -- continuous mode (driven by the governor adapter) -------------------

    def start_continuous(self, point: WorkloadPoint, rate_hz: float = 0.0) -> None:
        with self._cond:
            self._point = point
            self._rate = rate_hz
            self._epoch += 1
            self._halt = False
            if self._thread is None or not self._thread.is_alive():
                self._thread = threading.Thread(target=self._pace_loop, name=f"{self.source_id}-pacer", daemon=True)
                self._thread.start()
            self._cond.notify_all()
        self.counters.set_gauge("offered_hz", rate_hz)

    def set_rate(self, rate_hz: float) -> None:
        if rate_hz < 0:
            raise ValueError("rate must be non-negative")
        with self._cond:
            self._rate = float(rate_hz)
            self._epoch += 1
            self._cond.notify_all()
        self.counters.set_gauge("offered_hz", rate_hz)
        self.events.emit("rate_change", rate_hz=rate_hz)

    def set_point(self, point: WorkloadPoint) -> None:
        with self._cond:
            self._point = point
            self._epoch += 1
            self._cond.notify_all()

    def stop_continuous(self) -> None:
        with self._cond:
            self._halt = True
            self._cond.notify_all()
        if self._thread is not None:
            self._thread.join(timeout=30)
            self._thread = None
        self.counters.set_gauge("offered_hz", 0.0)

    def _pace_loop(self) -> None:
        epoch = -1
        start = period = 0.0
        point = None
        k = 0
        try:
            while True:
                with self._cond:
                    while not self._halt and (self._rate <= 0 or self._point is None):
                        self._cond.wait()
                    if self._halt:
                        return
                    if self._epoch != epoch:
                        epoch, point = self._epoch, self._point
                        period = 1.0 / self._rate
                        start, k = time.monotonic(), 0
                    due = start + k * period
                    delay = due - time.monotonic()
                    if delay > 0:
                        self._cond.wait(delay)
                        continue  # re-check for rate changes
                s = time.monotonic()
                self.send_one(point)
                e = time.monotonic()
                late = e - max(due + period, s)
                if late > 0:
                    self.counters.add("blocked_ns", int(late * 1e9))
                k += 1
        except (SourceError, NoWorkersRegistered) as exc:
            log.error("%s: pacing stopped: %s", self.source_id, exc)
            self.error = exc

    def metrics(self) -> dict:
        counters, gauges = self.counters.snapshot()
        return metrics_document("source", self.source_id, self.started, counters, gauges)
