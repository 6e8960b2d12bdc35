"""Master node: worker availability registry and the fallback message queue."""

from __future__ import annotations

import collections
import itertools
import json
import logging
import socket
import socketserver
import threading
import time
import uuid
from dataclasses import dataclass

from ..protocol import U64_MAX, Frame, Kind, ProtocolError, recv_frame, send_frame
from ..telemetry import Counters, EventLog, StatusServer, metrics_document

log = logging.getLogger(__name__)

HEARTBEAT_S = 0.5
STALE_INTERVALS = 3
EMPTY_QUEUE_ID = U64_MAX  # QUEUE_MSG with this msg_id means "queue empty"


class NoWorkersRegistered(RuntimeError):
    """No live worker is registered: misconfiguration, not saturation."""


@dataclass
class WorkerRegistration:
    worker_id: str
    host: str
    port: int
    slot_count: int
    available_slots: int
    last_heartbeat: float
    metrics_url: str = ""
    order: int = 0
    reported_free: int = 0
    busy: int = 0
    inbox: int = 0
    processed: int = 0
    p2p_received: int = 0
    p2p_assigned: int = 0

    @property
    def address(self) -> tuple[str, int]:
        return (self.host, self.port)

    def refresh_available(self) -> None:
        # frames routed to this worker that it has not reported receiving yet
        in_transit = max(0, self.p2p_assigned - self.p2p_received)
        self.available_slots = max(0, min(self.slot_count, self.reported_free - in_transit))


@dataclass(frozen=True)
class RouteDecision:
    route: str  # "p2p" | "queue"
    worker_id: str | None = None
    address: tuple[str, int] | None = None

    @classmethod
    def p2p(cls, reg: WorkerRegistration) -> RouteDecision:
        return cls("p2p", reg.worker_id, reg.address)

    @classmethod
    def queue(cls) -> RouteDecision:
        return cls("queue")

    @property
    def is_p2p(self) -> bool:
        return self.route == "p2p"

    def to_json(self) -> dict:
        if self.is_p2p:
            return {"route": "p2p", "worker_id": self.worker_id, "host": self.address[0], "port": self.address[1]}
        return {"route": "queue"}

    @classmethod
    def from_json(cls, data: dict) -> RouteDecision:
        if data.get("error") == "no_workers":
            raise NoWorkersRegistered(data.get("detail", "no live workers"))
        if data["route"] == "p2p":
            return cls("p2p", data["worker_id"], (data["host"], int(data["port"])))
        return cls.queue()


class WorkerRegistry:
    """Availability as reported by worker status daemons.

    Routing decrements a worker's advertised slots optimistically; the next
    status report from that worker corrects the count.
    """

    def __init__(self, stale_after_s: float = HEARTBEAT_S * STALE_INTERVALS, clock=time.monotonic):
        self.stale_after_s = stale_after_s
        self._clock = clock
        self._lock = threading.Lock()
        self._workers: dict[str, WorkerRegistration] = {}
        self._order = itertools.count()

    def update(self, status: dict) -> WorkerRegistration:
        now = self._clock()
        with self._lock:
            reg = self._workers.get(status["worker_id"])
            if reg is None:
                reg = WorkerRegistration(
                    worker_id=status["worker_id"],
                    host=status["host"],
                    port=int(status["port"]),
                    slot_count=int(status["slots"]),
                    available_slots=0,
                    last_heartbeat=now,
                    order=next(self._order),
                )
                self._workers[reg.worker_id] = reg
            reg.host, reg.port = status["host"], int(status["port"])
            reg.slot_count = int(status["slots"])
            reg.metrics_url = status.get("metrics_url", "")
            reg.reported_free = int(status["free"])
            reg.busy = int(status.get("busy", 0))
            reg.inbox = int(status.get("inbox", 0))
            reg.processed = int(status.get("processed", 0))
            reg.p2p_received = int(status.get("p2p_received", 0))
            reg.last_heartbeat = now
            reg.refresh_available()
            return reg

    def is_stale(self, reg: WorkerRegistration, now: float | None = None) -> bool:
        now = self._clock() if now is None else now
        return now - reg.last_heartbeat > self.stale_after_s

    def route(self) -> RouteDecision:
        now = self._clock()
        with self._lock:
            live = [w for w in self._workers.values() if not self.is_stale(w, now)]
            if not live:
                raise NoWorkersRegistered("no live workers registered")
            free = [w for w in live if w.available_slots >= 1]
            if not free:
                return RouteDecision.queue()
            best = min(free, key=lambda w: (-w.available_slots, w.order))
            best.available_slots -= 1
            best.p2p_assigned += 1
            return RouteDecision.p2p(best)

    def workers(self) -> list[WorkerRegistration]:
        with self._lock:
            return sorted(self._workers.values(), key=lambda w: w.order)

    def __len__(self) -> int:
        with self._lock:
            return len(self._workers)


class MasterQueue:
    """FIFO of DATA frames with a high-watermark; optionally bounded.

    With a capacity set, ``push`` blocks the producer until space frees.
    """

    def __init__(self, capacity: int | None = None):
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: collections.deque[Frame] = collections.deque()
        self._cond = threading.Condition()
        self.high_watermark = 0
        self.pushed = 0
        self.popped = 0
        self.bytes_pushed = 0

    def push(self, frame: Frame, timeout: float | None = None) -> bool:
        with self._cond:
            if self.capacity is not None:
                if not self._cond.wait_for(lambda: len(self._items) < self.capacity, timeout):
                    return False
            self._items.append(frame)
            self.pushed += 1
            self.bytes_pushed += len(frame.payload)
            self.high_watermark = max(self.high_watermark, len(self._items))
            return True

    def pop(self) -> Frame | None:
        with self._cond:
            if not self._items:
                return None
            self.popped += 1
            frame = self._items.popleft()
            self._cond.notify()
            return frame

    @property
    def depth(self) -> int:
        return len(self._items)

    def stats(self) -> dict:
        with self._cond:
            return {
                "depth": len(self._items),
                "high_watermark": self.high_watermark,
                "pushed": self.pushed,
                "popped": self.popped,
                "bytes_pushed": self.bytes_pushed,
            }

    def __len__(self) -> int:
        return len(self._items)


def status_frame(payload: dict, kind: Kind) -> Frame:
    return Frame.build(kind, json.dumps(payload).encode())


class Master:
    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 0,
        http_port: int | None = 0,
        queue_capacity: int | None = None,
        heartbeat_s: float = HEARTBEAT_S,
        stale_intervals: int = STALE_INTERVALS,
        event_log: EventLog | None = None,
        node_id: str | None = None,
    ):
        self.node_id = node_id or f"master-{uuid.uuid4().hex[:6]}"
        self.registry = WorkerRegistry(heartbeat_s * stale_intervals)
        self.queue = MasterQueue(queue_capacity)
        self.counters = Counters()
        self.events = (event_log or EventLog()).bind("master", self.node_id)
        self.started = time.monotonic()
        self._sources: dict[str, int] = {}
        self._lock = threading.Lock()
        self._conns: set[socket.socket] = set()
        master = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                sock = self.request
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                with master._lock:
                    master._conns.add(sock)
                try:
                    while True:
                        frame = recv_frame(sock)
                        if frame is None:
                            return
                        reply = master.dispatch(frame)
                        if reply is not None:
                            send_frame(sock, reply)
                except (OSError, ProtocolError) as exc:
                    log.debug("master connection closed: %s", exc)
                finally:
                    with master._lock:
                        master._conns.discard(sock)

        socketserver.ThreadingTCPServer.allow_reuse_address = True
        self._server = socketserver.ThreadingTCPServer((host, port), Handler, bind_and_activate=True)
        self._server.daemon_threads = True
        self._thread = threading.Thread(target=self._server.serve_forever, name="master-tcp", daemon=True)
        self.http = StatusServer("master", self.node_id, self.metrics, host, http_port) if http_port is not None else None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    @property
    def metrics_url(self) -> str | None:
        return self.http.url if self.http else None

    def start(self) -> Master:
        self._thread.start()
        if self.http:
            self.http.start()
        self.events.emit("start", address=list(self.address), metrics_url=self.metrics_url)
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        with self._lock:
            conns = list(self._conns)
        for c in conns:
            try:
                c.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        if self.http:
            self.http.stop()
        self.events.emit("stop")

    def dispatch(self, frame: Frame) -> Frame | None:
        kind = frame.kind
        if kind == Kind.STATUS:
            status = json.loads(frame.payload)
            new = status["worker_id"] not in {w.worker_id for w in self.registry.workers()}
            self.registry.update(status)
            if new:
                self.events.emit("worker_registered", worker_id=status["worker_id"], slots=status["slots"])
            return None
        if kind == Kind.ROUTE_REQ:
            try:
                decision = self.registry.route()
            except NoWorkersRegistered as exc:
                return status_frame({"error": "no_workers", "detail": str(exc)}, Kind.ROUTE_RESP)
            return status_frame(decision.to_json(), Kind.ROUTE_RESP)
        if kind in (Kind.QUEUE_PUSH, Kind.DATA):
            data = Frame.build(Kind.DATA, frame.payload, frame.msg_id, frame.cpu_cost_us)
            self.queue.push(data)
            return None
        if kind == Kind.QUEUE_POP:
            item = self.queue.pop()
            if item is None:
                return Frame.build(Kind.QUEUE_MSG, msg_id=EMPTY_QUEUE_ID)
            return Frame.build(Kind.QUEUE_MSG, item.payload, item.msg_id, item.cpu_cost_us)
        if kind == Kind.DRAIN_MARK:
            mark = json.loads(frame.payload or b"{}")
            with self._lock:
                self._sources[mark.get("source_id", "")] = int(mark.get("sent", 0))
            self.events.emit("drain_mark", **mark)
            return Frame.build(Kind.DRAIN_MARK, frame.payload)
        self.counters.add("total_dropped")
        return None

    def worker_view(self) -> list[dict]:
        now = time.monotonic()
        out = []
        for w in self.registry.workers():
            out.append(
                {
                    "worker_id": w.worker_id,
                    "host": w.host,
                    "port": w.port,
                    "metrics_url": w.metrics_url,
                    "slots": w.slot_count,
                    "free": w.available_slots,
                    "busy": w.busy,
                    "inbox": w.inbox,
                    "processed": w.processed,
                    "p2p_received": w.p2p_received,
                    "stale": self.registry.is_stale(w, now),
                    "heartbeat_age_s": now - w.last_heartbeat,
                }
            )
        return out

    def metrics(self) -> dict:
        workers = self.worker_view()
        counters, gauges = self.counters.snapshot()
        with self._lock:
            sent = sum(self._sources.values())
        q = self.queue.stats()
        live = [w for w in workers if not w["stale"]]
        counters.update(
            total_sent=sent,
            total_processed=sum(w["processed"] for w in workers),
            total_queued=q["pushed"],
            total_bytes=q["bytes_pushed"],
        )
        gauges.update(
            queue_depth=q["depth"],
            queue_high_watermark=q["high_watermark"],
            slots=sum(w["slots"] for w in live),
            free_slots=sum(w["free"] for w in live),
            in_flight=sum(w["busy"] + w["inbox"] for w in live),
        )
        return metrics_document("master", self.node_id, self.started, counters, gauges, workers)

    def serve_forever(self) -> None:
        self.start()
        try:
            while True:
                time.sleep(3600)
        finally:
            self.stop()
