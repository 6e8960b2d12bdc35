"""Governor adapters: the built-in framework and a deterministic mock."""

from __future__ import annotations

import time
from collections.abc import Callable, Mapping

from .bounds import ClusterSpec, ideal_bound
from .framework.source import StreamSource
from .governor import Adapter, AdapterDown
from .telemetry import MetricsSnapshot, NodeUnreachable, TelemetryCollector, fetch_json
from .workload import WorkloadPoint, calibrate_burner

Threshold = int | Mapping[WorkloadPoint, int] | Callable[[WorkloadPoint], int]


class MockAdapter(Adapter):
    """Pipeline that sustains exactly ``threshold`` Hz at each point.

    Runs on a virtual clock: ``metrics()`` returns immediately and advances
    time by ``window_s``. Above the threshold the queue grows every sample.
    """

    def __init__(self, threshold: Threshold, window_s: float = 1.0, samples: int = 5):
        # virtual seconds: no wall time passes, but rates need a nonzero span
        if window_s <= 0:
            raise ValueError("window_s must be positive")
        if samples < 2:
            raise ValueError("samples must be >= 2")
        self.threshold = threshold
        self.window_s = window_s
        self.samples = samples
        self.clock = 0.0
        self.point: WorkloadPoint | None = None
        self.f = 0.0
        self.windows = 0
        self.rates: list[float] = []

    def hidden_max(self, point: WorkloadPoint) -> int:
        t = self.threshold
        if callable(t):
            return int(t(point))
        if isinstance(t, Mapping):
            return int(t[point])
        return int(t)

    def set_point(self, point: WorkloadPoint) -> None:
        self.point = point

    def set_rate(self, f: float) -> None:
        self.f = float(f)
        self.rates.append(self.f)

    def reset(self) -> None:
        self.f = 0.0

    def now(self) -> float:
        return self.clock

    def metrics(self) -> MetricsSnapshot:
        w = self.window_s
        start = self.clock
        self.clock += w
        self.windows += 1
        f = self.f
        t = self.hidden_max(self.point)
        if f <= t:
            processed_hz, depths = f, (0,) * self.samples
        else:
            step = max(1, int(round(f - t)))
            processed_hz, depths = float(t), tuple(k * step for k in range(self.samples))
        return MetricsSnapshot(
            window_start=start,
            window_end=self.clock,
            offered_hz=f,
            sent=int(f * w),
            achieved_send_hz=f,
            processed=int(processed_hz * w),
            processed_hz=processed_hz,
            queue_depth_series=depths,
            worker_busy_fraction=min(1.0, f / t) if t > 0 else 1.0,
        )


def efficiency_threshold(cluster: ClusterSpec, efficiency: float = 1.0, ceiling_hz: float | None = None):
    """Mock threshold: a fixed fraction of the ideal bound, optionally capped."""

    def threshold(point: WorkloadPoint) -> int:
        t = efficiency * ideal_bound(point, cluster)
        if ceiling_hz is not None:
            t = min(t, ceiling_hz)
        return int(t)

    return threshold


class FrameworkAdapter(Adapter):
    """Drives a running master/worker cluster through an in-process source."""

    def __init__(
        self,
        master_url: str,
        source: StreamSource,
        window_s: float = 10.0,
        settle_s: float | None = None,
        sample_s: float | None = None,
        drain_timeout_s: float = 120.0,
        calibrate: bool = True,
    ):
        if source.http is None:
            raise ValueError("source needs its status endpoint (http_port) for telemetry")
        self.master_url = master_url.rstrip("/")
        self.source = source
        self.window_s = window_s
        self.settle_s = window_s if settle_s is None else settle_s
        self.drain_timeout_s = drain_timeout_s
        sample = min(1.0, window_s / 4) if sample_s is None else sample_s
        self.collector = TelemetryCollector(self.master_url, source.http.url, sample_s=sample)
        self._settling = True
        self._running = False
        self.calibration = calibrate_burner() if calibrate else None

    @classmethod
    def for_cluster(cls, cluster, **kw) -> FrameworkAdapter:
        return cls(cluster.master.metrics_url, cluster.source(), **kw)

    def _check(self) -> None:
        if self.source.error is not None:
            raise AdapterDown(f"source failed: {self.source.error}")
        try:
            fetch_json(self.master_url + "/healthz")
        except NodeUnreachable as exc:
            raise AdapterDown(str(exc)) from exc

    def set_point(self, point: WorkloadPoint) -> None:
        if self._running:
            self.source.set_point(point)
        else:
            self.source.start_continuous(point, 0.0)
            self._running = True
        self._settling = True

    def set_rate(self, f: float) -> None:
        self.source.set_rate(f)
        self._settling = True

    def metrics(self) -> MetricsSnapshot:
        self._check()
        window = self.settle_s if self._settling else self.window_s
        self._settling = False
        snap = self.collector.collect_snapshot(window)
        if "master" in snap.stale_nodes:
            raise AdapterDown("master stopped answering during the window")
        return snap

    def reset(self) -> None:
        """Stop offering load and wait until the queue and workers are idle."""
        self.source.set_rate(0.0)
        deadline = time.monotonic() + self.drain_timeout_s
        while time.monotonic() < deadline:
            doc = fetch_json(self.master_url + "/metrics")
            live = [w for w in doc["workers"] if not w["stale"]]
            if doc["gauges"]["queue_depth"] == 0 and all(w["busy"] == 0 and w["inbox"] == 0 for w in live):
                return
            time.sleep(0.05)
        raise AdapterDown(f"pipeline did not drain within {self.drain_timeout_s}s")

    def close(self) -> None:
        self.source.stop_continuous()
