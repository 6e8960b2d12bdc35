"""Quiesce the pipeline after sending stops and account for every message."""

from __future__ import annotations

import time
from dataclasses import dataclass

from ..telemetry import fetch_json


class DrainTimeout(TimeoutError):
    pass


@dataclass(frozen=True)
class ReconcileReport:
    sent: int
    processed: int
    lost: int
    duration_s: float

    @property
    def flagged(self) -> bool:
        return self.lost != 0


def _status_fn(master):
    if isinstance(master, str):
        url = master.rstrip("/") + "/metrics"
        return lambda: fetch_json(url)
    return master.metrics


def drain_and_reconcile(
    master,
    sent: int | None = None,
    timeout_s: float = 60.0,
    settle_s: float = 1.0,
    poll_s: float = 0.05,
) -> ReconcileReport:
    """Wait for queue depth 0 and idle workers, then compare sent vs processed.

    ``master`` is a Master or its status base URL. ``sent`` defaults to the
    totals announced by sources' DRAIN_MARK frames. When the pipeline is idle
    but short of ``sent`` (a worker died holding messages), the shortfall is
    reported as lost once the processed count has been stable for
    ``settle_s``.
    """
    status = _status_fn(master)
    t0 = time.monotonic()
    deadline = t0 + timeout_s
    stable_since = None
    last_processed = None
    while True:
        doc = status()
        expected = doc["counters"]["total_sent"] if sent is None else sent
        processed = doc["counters"]["total_processed"]
        live = [w for w in doc["workers"] if not w["stale"]]
        idle = doc["gauges"]["queue_depth"] == 0 and all(w["busy"] == 0 and w["inbox"] == 0 for w in live)
        now = time.monotonic()
        if idle and processed >= expected:
            report = ReconcileReport(expected, processed, expected - processed, now - t0)
            break
        if idle:
            if processed != last_processed:
                stable_since, last_processed = now, processed
            elif now - stable_since >= settle_s:
                report = ReconcileReport(expected, processed, expected - processed, now - t0)
                break
        else:
            stable_since = last_processed = None
        if now > deadline:
            raise DrainTimeout(
                f"not drained after {timeout_s}s: queue={doc['gauges']['queue_depth']} "
                f"processed={processed}/{expected}"
            )
        time.sleep(poll_s)
    if hasattr(master, "counters"):
        # counters only grow: record the increase over what is already booked
        extra = report.lost - master.counters.get("total_lost")
        if extra > 0:
            master.counters.add("total_lost", extra)
    return report
