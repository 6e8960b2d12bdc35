"""Single-host cluster: one master plus N workers, for tests and desk runs."""

from __future__ import annotations

import os
import subprocess
import sys
import time

from ..bounds import ClusterSpec
from ..protocol import DEFAULT_BURST_BYTES, TokenBucket
from ..telemetry import EventLog
from .master import Master
from .source import StreamSource
from .worker import Worker

LOOPBACK_BITS_PER_S = 10e9  # nominal figure used for bounds when unshaped


class LocalCluster:
    """Master in this process; workers as threads or subprocesses.

    ``mode="process"`` runs each worker through the ``bench worker`` CLI so
    its slots do not share this interpreter.
    """

    def __init__(
        self,
        workers: int = 2,
        slots: int = 1,
        shaper_bits_per_s: float | None = None,
        burst_bytes: int = DEFAULT_BURST_BYTES,
        mode: str = "thread",
        track_ids: bool = False,
        heartbeat_s: float = 0.5,
        queue_capacity: int | None = None,
        event_log: EventLog | None = None,
        poll_s: float = 0.1,
    ):
        if mode not in ("thread", "process"):
            raise ValueError("mode must be 'thread' or 'process'")
        self.n_workers = workers
        self.slots = slots
        self.shaper_bits_per_s = shaper_bits_per_s
        self.burst_bytes = burst_bytes
        self.mode = mode
        self.track_ids = track_ids
        self.heartbeat_s = heartbeat_s
        self.poll_s = poll_s
        self.events = event_log or EventLog()
        self.master = Master(queue_capacity=queue_capacity, heartbeat_s=heartbeat_s, event_log=self.events)
        self.workers: list[Worker] = []
        self.procs: list[subprocess.Popen] = []
        self.sources: list[StreamSource] = []

    def start(self, timeout_s: float = 20.0) -> LocalCluster:
        self.master.start()
        for i in range(self.n_workers):
            if self.mode == "thread":
                w = Worker(
                    self.master.address,
                    slots=self.slots,
                    worker_id=f"w{i}",
                    heartbeat_s=self.heartbeat_s,
                    poll_s=self.poll_s,
                    track_ids=self.track_ids,
                    event_log=self.events,
                )
                self.workers.append(w.start())
            else:
                host, port = self.master.address
                cmd = [
                    sys.executable, "-m", "hiobench", "worker",
                    "--master", f"{host}:{port}",
                    "--slots", str(self.slots),
                    "--worker-id", f"w{i}",
                    "--heartbeat-s", str(self.heartbeat_s),
                ]
                self.procs.append(subprocess.Popen(cmd, env=dict(os.environ), stdout=subprocess.DEVNULL))
        self.wait_registered(timeout_s)
        return self

    def wait_registered(self, timeout_s: float = 20.0) -> None:
        deadline = time.monotonic() + timeout_s
        while True:
            doc = self.master.metrics()
            live = [w for w in doc["workers"] if not w["stale"]]
            if len(live) >= self.n_workers and all(w["metrics_url"] for w in live):
                return
            if time.monotonic() > deadline:
                self.stop()
                raise TimeoutError(f"only {len(live)}/{self.n_workers} workers registered")
            time.sleep(0.05)

    @property
    def total_slots(self) -> int:
        return self.n_workers * self.slots

    def spec(self, topology_factor: float = 1.0) -> ClusterSpec:
        return ClusterSpec(self.shaper_bits_per_s or LOOPBACK_BITS_PER_S, self.total_slots, topology_factor)

    def source(self, http: bool = True, **kw) -> StreamSource:
        shaper = TokenBucket(self.shaper_bits_per_s, self.burst_bytes) if self.shaper_bits_per_s else None
        src = StreamSource(self.master.address, shaper=shaper, http_port=0 if http else None, event_log=self.events, **kw)
        self.sources.append(src)
        return src

    def stop(self) -> None:
        for s in self.sources:
            s.close()
        for w in self.workers:
            w.stop()
        for p in self.procs:
            p.terminate()
        for p in self.procs:
            try:
                p.wait(timeout=5)
            except subprocess.TimeoutExpired:
                p.kill()
        self.master.stop()

    def __enter__(self) -> LocalCluster:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
