"""Saturation search for the maximum sustainable message frequency.

Ramp the offered rate up piecewise-linearly while the pipeline keeps up;
after the first overload, binary-search between the highest rate known
good and the lowest rate known bad until they are adjacent integers.

    throttle_up:   load < 0.01 -> f*10;  < 0.1 -> f*5;  < 0.5 -> int(f*1.10);
                   < 0.8 -> int(f*1.05); else -> int(f*1.05); no change -> f+1
                   (midpoint instead, once an overload has been seen)
    throttle_down: record f as not ok, then midpoint
    midpoint:      done(max_ok) if max_ok + 1 >= min_not_ok
                   else int(mean(max_ok, min_not_ok))
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field

from .bounds import ClusterSpec, ideal_bound
from .telemetry import MetricsSnapshot
from .workload import WorkloadPoint

log = logging.getLogger(__name__)


class Verdict(str, enum.Enum):
    SUSTAINED_LOAD_OK = "sustained_load_ok"
    TOO_MUCH_LOAD = "too_much_load"
    WAIT_AND_SEE = "wait_and_see"


class AdapterDown(RuntimeError):
    pass


@dataclass(frozen=True)
class Thresholds:
    ok_processed_ratio: float = 0.98
    overload_processed_ratio: float = 0.95
    overload_send_ratio: float = 0.95
    max_blocked_fraction: float = 0.05
    # allow one message of counting error per window on the rate ratios
    quantization_slack: bool = True


DEFAULT_THRESHOLDS = Thresholds()


@dataclass(frozen=True)
class Done:
    """Terminal result of the search: the largest sustained integer rate."""

    max_hz: int


@dataclass
class SearchState:
    f: int
    point: WorkloadPoint
    max_known_ok_f: int = 0
    min_known_not_ok_f: int | None = None
    windows_since_change: int = 0
    history: list[tuple[int, Verdict]] = field(default_factory=list)
    non_monotone: bool = False

    def __post_init__(self):
        if self.f < 1:
            raise ValueError("f must be >= 1")

    def check_bracket(self) -> None:
        if self.min_known_not_ok_f is not None and not self.max_known_ok_f < self.min_known_not_ok_f:
            raise AssertionError(f"bracket violated: {self.max_known_ok_f} !< {self.min_known_not_ok_f}")


def _strictly_increasing(xs) -> bool:
    return len(xs) >= 2 and all(b > a for a, b in zip(xs, xs[1:]))


def heuristics(snapshot: MetricsSnapshot, state: SearchState, thresholds: Thresholds = DEFAULT_THRESHOLDS) -> Verdict:
    """Judge one observation window at the current offered rate ``state.f``.

    The first window after a rate change, partial snapshots, and windows
    that are neither clearly fine nor clearly overloaded are wait_and_see.
    """
    if state.windows_since_change == 0 or snapshot.partial:
        return Verdict.WAIT_AND_SEE
    f = state.f
    slack = 1.0 / snapshot.duration_s if thresholds.quantization_slack else 0.0
    depths = snapshot.queue_depth_series
    queue_growing = _strictly_increasing(depths)
    queue_flat = not depths or depths[-1] <= depths[0]
    if (
        queue_growing
        or snapshot.processed_hz < thresholds.overload_processed_ratio * f - slack
        or snapshot.achieved_send_hz < thresholds.overload_send_ratio * f - slack
    ):
        return Verdict.TOO_MUCH_LOAD
    if (
        snapshot.processed_hz >= thresholds.ok_processed_ratio * f - slack
        and queue_flat
        and snapshot.source_blocked_fraction < thresholds.max_blocked_fraction
    ):
        return Verdict.SUSTAINED_LOAD_OK
    return Verdict.WAIT_AND_SEE


def estimate_fraction_max_load(snapshot: MetricsSnapshot, point: WorkloadPoint, cluster: ClusterSpec) -> float:
    """Fraction of the tightest resource the offered rate would consume.

    max(network utilisation, CPU utilisation, send shortfall), in [0, 1].
    """
    f = snapshot.offered_hz
    if f <= 0:
        return 0.0
    net = f * point.message_size_bytes * 8 * cluster.topology_factor / cluster.bandwidth_bits_per_s
    cpu = f * point.cpu_cost_us / (1e6 * cluster.total_worker_slots)
    shortfall = max(0.0, 1.0 - snapshot.achieved_send_hz / f)
    return min(1.0, max(0.0, net, cpu, shortfall))


def find_midpoint_or_done(state: SearchState) -> int | Done:
    if state.max_known_ok_f + 1 >= state.min_known_not_ok_f:
        return Done(state.max_known_ok_f)
    return int((state.max_known_ok_f + state.min_known_not_ok_f) / 2)


def throttle_up(load: float, f: int, state: SearchState) -> int | Done:
    state.max_known_ok_f = f
    if state.min_known_not_ok_f is None:
        if load < 0.01:
            new_f = f * 10
        elif load < 0.1:
            new_f = f * 5
        elif load < 0.5:
            new_f = int(f * 1.10)
        elif load < 0.8:
            new_f = int(f * 1.05)
        else:
            new_f = int(f * 1.05)
        if f == new_f:
            new_f = f + 1
        return new_f
    return find_midpoint_or_done(state)


def throttle_down(f: int, state: SearchState) -> int | Done:
    if f <= state.max_known_ok_f:
        # a rate at or below a known-good rate failed: distrust the old result
        log.warning("non-monotone behaviour: %d Hz failed after %d Hz succeeded", f, state.max_known_ok_f)
        state.non_monotone = True
        state.max_known_ok_f = f - 1
    state.min_known_not_ok_f = f
    return find_midpoint_or_done(state)


def default_start(point: WorkloadPoint, cluster: ClusterSpec) -> int:
    return max(1, int(0.1 * ideal_bound(point, cluster)))


@dataclass
class MaxThroughputResult:
    point: WorkloadPoint
    max_hz: int
    iterations: int  # judged windows
    verdict_trace: list[tuple[int, str]]
    wall_time: float
    min_known_not_ok_f: int | None = None
    non_monotone: bool = False
    timed_out: bool = False

    @property
    def unsustainable(self) -> bool:
        return self.max_hz == 0


class Adapter:
    """What the governor needs from a framework under test.

    ``metrics()`` blocks for one observation window and returns it.
    ``now()`` is the adapter's clock; mock adapters use virtual time.
    """

    def set_point(self, point: WorkloadPoint) -> None:
        raise NotImplementedError

    def set_rate(self, f: float) -> None:
        raise NotImplementedError

    def metrics(self) -> MetricsSnapshot:
        raise NotImplementedError

    def reset(self) -> None:
        raise NotImplementedError

    def now(self) -> float:
        return time.monotonic()


def find_max_f(
    point: WorkloadPoint,
    adapter: Adapter,
    cluster: ClusterSpec,
    f_last_run: int | None = None,
    thresholds: Thresholds = DEFAULT_THRESHOLDS,
    time_cap_s: float | None = 15 * 60,
    max_waits: int = 3,
    max_windows: int = 1000,
) -> MaxThroughputResult:
    """Search the largest integer rate the adapter sustains at ``point``.

    Each rate gets one settling window (discarded) and one judged window.
    More than ``max_waits`` consecutive undecided windows at one rate count
    as overload. On ``time_cap_s`` the best bracket so far is returned with
    ``timed_out`` set.
    """
    t0 = adapter.now()
    f = f_last_run if f_last_run and f_last_run >= 1 else default_start(point, cluster)
    state = SearchState(f=f, point=point)
    adapter.set_point(point)
    adapter.set_rate(f)
    judged = waits = windows = 0
    timed_out = False
    while True:
        snap = adapter.metrics()
        windows += 1
        verdict = heuristics(snap, state, thresholds)
        if verdict is Verdict.WAIT_AND_SEE and state.windows_since_change > 0 and not snap.partial:
            waits += 1
            if waits > max_waits:
                verdict = Verdict.TOO_MUCH_LOAD
        state.history.append((state.f, verdict))
        state.windows_since_change += 1
        if verdict is Verdict.WAIT_AND_SEE:
            if time_cap_s is not None and adapter.now() - t0 > time_cap_s or windows >= max_windows:
                timed_out = True
                break
            continue
        judged += 1
        waits = 0
        if verdict is Verdict.SUSTAINED_LOAD_OK:
            nxt = throttle_up(estimate_fraction_max_load(snap, point, cluster), state.f, state)
        else:
            nxt = throttle_down(state.f, state)
        state.check_bracket()
        if isinstance(nxt, Done):
            break
        if time_cap_s is not None and adapter.now() - t0 > time_cap_s or windows >= max_windows:
            timed_out = True
            break
        state.f = nxt
        state.windows_since_change = 0
        adapter.set_rate(nxt)
    return MaxThroughputResult(
        point=point,
        max_hz=state.max_known_ok_f,
        iterations=judged,
        verdict_trace=[(f, v.value) for f, v in state.history],
        wall_time=adapter.now() - t0,
        min_known_not_ok_f=state.min_known_not_ok_f,
        non_monotone=state.non_monotone,
        timed_out=timed_out,
    )
