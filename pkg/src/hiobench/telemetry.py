"""Windowed metrics: per-node counters, HTTP status endpoint, scraping collector.

Every node serves ``GET /metrics`` and ``GET /healthz``. The governor pulls
``/metrics`` from the source, the master and every worker the master knows
about, at the start and end of a window, and samples the master's queue
depth in between.

``/metrics`` document (all roles share the key set; unused values are 0)::

    schema_version  int, currently 1
    role            "master" | "worker" | "source"
    node_id         str
    uptime_s        float
    monotonic_s     float, node clock (CLOCK_MONOTONIC, comparable on one host)
    counters        total_sent, total_processed, total_lost, total_bytes,
                    total_dropped, total_p2p, total_queued, busy_ns, blocked_ns
    gauges          queue_depth, queue_high_watermark, in_flight, slots,
                    free_slots, offered_hz
    workers         master only: one object per registered worker with
                    worker_id, host, port, metrics_url, slots, free, busy,
                    inbox, processed, p2p_received, stale, heartbeat_age_s

Event log lines are JSON objects with ``ts`` (unix time), ``mono``,
``role``, ``node_id``, ``event`` plus event-specific fields.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
METRICS_KEYS = ("schema_version", "role", "node_id", "uptime_s", "monotonic_s", "counters", "gauges", "workers")
COUNTER_KEYS = (
    "total_sent",
    "total_processed",
    "total_lost",
    "total_bytes",
    "total_dropped",
    "total_p2p",
    "total_queued",
    "busy_ns",
    "blocked_ns",
)
GAUGE_KEYS = ("queue_depth", "queue_high_watermark", "in_flight", "slots", "free_slots", "offered_hz")
WORKER_KEYS = (
    "worker_id",
    "host",
    "port",
    "metrics_url",
    "slots",
    "free",
    "busy",
    "inbox",
    "processed",
    "p2p_received",
    "stale",
    "heartbeat_age_s",
)
HEALTH_KEYS = ("status", "role", "node_id", "uptime_s")


class NodeUnreachable(ConnectionError):
    pass


class Counters:
    """Named counters and gauges behind one lock.

    Updates are a dict increment under the lock; ``snapshot`` copies every
    value under the same lock, so one scrape never mixes two states.
    """

    def __init__(self, counters=COUNTER_KEYS, gauges=GAUGE_KEYS):
        self._lock = threading.Lock()
        self._counters = dict.fromkeys(counters, 0)
        self._gauges = dict.fromkeys(gauges, 0)

    def add(self, name: str, n: int = 1) -> None:
        with self._lock:
            self._counters[name] += n

    def update(self, counters: dict | None = None, gauges: dict | None = None) -> None:
        with self._lock:
            for k, v in (counters or {}).items():
                self._counters[k] += v
            self._gauges.update(gauges or {})

    def set_gauge(self, name: str, value) -> None:
        with self._lock:
            self._gauges[name] = value

    def get(self, name: str):
        with self._lock:
            return self._counters.get(name, self._gauges.get(name))

    def snapshot(self) -> tuple[dict, dict]:
        with self._lock:
            return dict(self._counters), dict(self._gauges)


def metrics_document(
    role: str, node_id: str, started: float, counters: dict, gauges: dict, workers: list | None = None
) -> dict:
    now = time.monotonic()
    return {
        "schema_version": SCHEMA_VERSION,
        "role": role,
        "node_id": node_id,
        "uptime_s": now - started,
        "monotonic_s": now,
        "counters": {k: counters.get(k, 0) for k in COUNTER_KEYS},
        "gauges": {k: gauges.get(k, 0) for k in GAUGE_KEYS},
        "workers": [{k: w.get(k) for k in WORKER_KEYS} for w in (workers or [])],
    }


class StatusServer:
    """``/metrics`` and ``/healthz`` over HTTP, served from a daemon thread."""

    def __init__(self, role: str, node_id: str, provider, host: str = "127.0.0.1", port: int = 0):
        self.role = role
        self.node_id = node_id
        self.started = time.monotonic()
        server = self

        class Handler(BaseHTTPRequestHandler):
            def do_GET(self):
                path = self.path.split("?", 1)[0]
                if path == "/metrics":
                    body = provider()
                elif path == "/healthz":
                    body = {
                        "status": "ok",
                        "role": server.role,
                        "node_id": server.node_id,
                        "uptime_s": time.monotonic() - server.started,
                    }
                else:
                    self.send_error(404)
                    return
                data = json.dumps(body).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, fmt, *args):
                log.debug("%s http: " + fmt, server.role, *args)

        self._httpd = ThreadingHTTPServer((host, port), Handler)
        self._httpd.daemon_threads = True
        self._thread = threading.Thread(target=self._httpd.serve_forever, name=f"{role}-http", daemon=True)

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> StatusServer:
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()


class EventLog:
    """Newline-delimited JSON, one object per node state change."""

    def __init__(self, path=None, role: str = "", node_id: str = ""):
        self.role = role
        self.node_id = node_id
        self._lock = threading.Lock()
        self._fh = open(path, "a", buffering=1) if path else None

    def bind(self, role: str, node_id: str) -> EventLog:
        other = EventLog(None, role, node_id)
        other._fh, other._lock = self._fh, self._lock
        return other

    def emit(self, event: str, **fields) -> None:
        if self._fh is None:
            return
        rec = {"ts": time.time(), "mono": time.monotonic(), "role": self.role, "node_id": self.node_id, "event": event}
        rec.update(fields)
        line = json.dumps(rec, default=str)
        with self._lock:
            self._fh.write(line + "\n")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def fetch_json(url: str, timeout: float = 2.0) -> dict:
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            return json.loads(resp.read())
    except (urllib.error.URLError, OSError, ValueError) as exc:
        raise NodeUnreachable(f"{url}: {exc}") from exc


@dataclass(frozen=True)
class CumulativeCounters:
    total_sent: int = 0
    total_processed: int = 0
    total_lost: int = 0
    total_bytes: int = 0


@dataclass(frozen=True)
class MetricsSnapshot:
    window_start: float
    window_end: float
    offered_hz: float = 0.0
    sent: int = 0
    achieved_send_hz: float = 0.0
    source_blocked_fraction: float = 0.0
    processed: int = 0
    processed_hz: float = 0.0
    queue_depth_series: tuple[int, ...] = ()
    worker_busy_fraction: float = 0.0
    in_flight: int = 0
    partial: bool = False
    stale_nodes: tuple[str, ...] = ()
    cumulative: CumulativeCounters = field(default_factory=CumulativeCounters)

    def __post_init__(self):
        if not self.window_end > self.window_start:
            raise ValueError("window_end must be after window_start")
        for name in ("source_blocked_fraction", "worker_busy_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} outside [0, 1]")

    @property
    def duration_s(self) -> float:
        return self.window_end - self.window_start

    @property
    def queue_depth_end(self) -> int:
        return self.queue_depth_series[-1] if self.queue_depth_series else 0


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


class TelemetryCollector:
    """Scrape the cluster over a window and reduce it to a MetricsSnapshot."""

    def __init__(self, master_url: str, source_url: str | None = None, sample_s: float = 1.0, timeout: float = 2.0):
        self.master_url = master_url.rstrip("/")
        self.source_url = source_url.rstrip("/") if source_url else None
        self.sample_s = sample_s
        self.timeout = timeout

    def _scrape_all(self) -> tuple[dict | None, dict | None, dict[str, dict], list[str]]:
        stale = []
        source = master = None
        if self.source_url:
            try:
                source = fetch_json(self.source_url + "/metrics", self.timeout)
            except NodeUnreachable:
                stale.append("source")
        try:
            master = fetch_json(self.master_url + "/metrics", self.timeout)
        except NodeUnreachable:
            stale.append("master")
            return source, None, {}, stale
        workers = {}
        for w in master["workers"]:
            if w["stale"]:
                stale.append(w["worker_id"])
                continue
            try:
                workers[w["worker_id"]] = fetch_json(w["metrics_url"] + "/metrics", self.timeout)
            except NodeUnreachable:
                stale.append(w["worker_id"])
        return source, master, workers, stale

    def collect_snapshot(self, window_s: float) -> MetricsSnapshot:
        """Observe the cluster for ``window_s`` seconds.

        Unreachable or stale nodes are listed in ``stale_nodes`` and make the
        snapshot partial; their counters are left out, not zeroed.
        """
        if window_s <= 0:
            raise ValueError("window_s must be positive")
        start = time.monotonic()
        src0, master0, workers0, stale0 = self._scrape_all()
        depths = [master0["gauges"]["queue_depth"]] if master0 else []
        partial = bool(stale0)
        end_at = start + window_s
        step = min(self.sample_s, window_s)
        next_sample = start + step
        while next_sample < end_at - 1e-3:
            time.sleep(max(0.0, next_sample - time.monotonic()))
            try:
                depths.append(fetch_json(self.master_url + "/metrics", self.timeout)["gauges"]["queue_depth"])
            except NodeUnreachable:
                partial = True
            next_sample += step
        time.sleep(max(0.0, end_at - time.monotonic()))
        src1, master1, workers1, stale1 = self._scrape_all()
        end = time.monotonic()
        if master1:
            depths.append(master1["gauges"]["queue_depth"])
        stale = tuple(dict.fromkeys(stale0 + stale1))
        partial = partial or bool(stale) or set(workers0) != set(workers1)
        w = end - start

        sent = blocked_ns = 0
        offered = 0.0
        if src0 and src1:
            sent = src1["counters"]["total_sent"] - src0["counters"]["total_sent"]
            blocked_ns = src1["counters"]["blocked_ns"] - src0["counters"]["blocked_ns"]
            offered = float(src1["gauges"]["offered_hz"])
        processed = busy_ns = slots = in_flight = 0
        for wid in set(workers0) & set(workers1):
            c0, c1 = workers0[wid]["counters"], workers1[wid]["counters"]
            processed += c1["total_processed"] - c0["total_processed"]
            busy_ns += c1["busy_ns"] - c0["busy_ns"]
            slots += workers1[wid]["gauges"]["slots"]
            in_flight += workers1[wid]["gauges"]["in_flight"]

        cum = CumulativeCounters()
        if master1:
            mc = master1["counters"]
            cum = CumulativeCounters(
                total_sent=src1["counters"]["total_sent"] if src1 else mc["total_sent"],
                total_processed=mc["total_processed"],
                total_lost=mc["total_lost"],
                total_bytes=src1["counters"]["total_bytes"] if src1 else mc["total_bytes"],
            )
        return MetricsSnapshot(
            window_start=start,
            window_end=end,
            offered_hz=offered,
            sent=sent,
            achieved_send_hz=sent / w,
            source_blocked_fraction=_clamp01(blocked_ns / 1e9 / w),
            processed=processed,
            processed_hz=processed / w,
            queue_depth_series=tuple(depths),
            worker_busy_fraction=_clamp01(busy_ns / 1e9 / (w * slots)) if slots else 0.0,
            in_flight=in_flight,
            partial=partial,
            stale_nodes=stale,
            cumulative=cum,
        )


def collect_snapshot(master_url: str, window_s: float, source_url: str | None = None, sample_s: float = 1.0):
    return TelemetryCollector(master_url, source_url, sample_s).collect_snapshot(window_s)
