import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiobench.adapters import MockAdapter, efficiency_threshold
from hiobench.bounds import ClusterSpec
from hiobench.governor import (
    Adapter,
    Done,
    SearchState,
    Thresholds,
    Verdict,
    default_start,
    estimate_fraction_max_load,
    find_max_f,
    find_midpoint_or_done,
    heuristics,
    throttle_down,
    throttle_up,
)
from hiobench.telemetry import MetricsSnapshot
from hiobench.workload import WorkloadPoint

P = WorkloadPoint(100, 0)
SPEC = ClusterSpec()


def state(f=10, ok=0, not_ok=None, since=1):
    return SearchState(f=f, point=P, max_known_ok_f=ok, min_known_not_ok_f=not_ok, windows_since_change=since)


# -- ramp and bisection rules ----------------------------------------------


@pytest.mark.parametrize(
    "load,f,want",
    [(0.005, 10, 100), (0.05, 10, 50), (0.3, 100, 110), (0.6, 5, 6), (0.6, 100, 105), (0.9, 100, 105), (0.9, 10, 11)],
)
def test_ramp_table(load, f, want):
    s = state(f)
    assert throttle_up(load, f, s) == want
    assert s.max_known_ok_f == f


def test_fail_then_midpoint():
    s = state(200, ok=100)
    assert throttle_down(200, s) == 150
    assert s.min_known_not_ok_f == 200


def test_fail_adjacent_is_done():
    s = state(100, ok=99)
    assert throttle_down(100, s) == Done(99)


def test_up_after_failure_bisects():
    s = state(150, ok=100, not_ok=200)
    assert throttle_up(0.9, 150, s) == 175
    s = state(199, ok=198, not_ok=200)
    assert throttle_up(0.9, 199, s) == Done(199)


def test_midpoint_truncates():
    assert find_midpoint_or_done(state(ok=3, not_ok=6)) == 4
    assert find_midpoint_or_done(state(ok=0, not_ok=1)) == Done(0)


def test_default_start():
    assert default_start(WorkloadPoint(10_000_000, 0), SPEC) == 1  # 0.1 * 17.5
    assert default_start(WorkloadPoint(100, 0), ClusterSpec(1e9, 2, 1)) == 125_000
    assert default_start(WorkloadPoint(1000, 50_000), ClusterSpec(10e9, 4, 1)) == 8


def test_state_requires_positive_f():
    with pytest.raises(ValueError):
        state(0)


# -- heuristics --------------------------------------------------------------


def snap(f, processed_hz, depths=(0, 0, 0), achieved=None, blocked=0.0, partial=False, duration=10.0):
    return MetricsSnapshot(
        window_start=0.0,
        window_end=duration,
        offered_hz=f,
        achieved_send_hz=f if achieved is None else achieved,
        source_blocked_fraction=blocked,
        processed_hz=processed_hz,
        queue_depth_series=tuple(depths),
        partial=partial,
    )


EXACT = Thresholds(quantization_slack=False)


def test_heuristics_ok_and_thresholds():
    assert heuristics(snap(100, 98.0), state(100), EXACT) is Verdict.SUSTAINED_LOAD_OK
    assert heuristics(snap(100, 97.9), state(100), EXACT) is Verdict.WAIT_AND_SEE
    assert heuristics(snap(100, 94.9), state(100), EXACT) is Verdict.TOO_MUCH_LOAD
    assert heuristics(snap(100, 100, achieved=94.0), state(100), EXACT) is Verdict.TOO_MUCH_LOAD
    assert heuristics(snap(100, 100, blocked=0.06), state(100), EXACT) is Verdict.WAIT_AND_SEE


def test_heuristics_queue_rules():
    assert heuristics(snap(100, 100, (1, 2, 3)), state(100)) is Verdict.TOO_MUCH_LOAD
    assert heuristics(snap(100, 100, (3, 2, 2)), state(100)) is Verdict.SUSTAINED_LOAD_OK
    assert heuristics(snap(100, 100, (1, 3, 2)), state(100)) is Verdict.WAIT_AND_SEE


def test_heuristics_settling_and_partial_wait():
    assert heuristics(snap(100, 100), state(100, since=0)) is Verdict.WAIT_AND_SEE
    assert heuristics(snap(100, 0, (1, 2, 3), partial=True), state(100)) is Verdict.WAIT_AND_SEE


def test_slack_forgives_one_message():
    # 10 Hz over 3 s counts 29 processed when one message straddles the edge
    s = snap(10, 29 / 3, duration=3.0)
    assert heuristics(s, state(10), EXACT) is Verdict.WAIT_AND_SEE
    assert heuristics(s, state(10)) is Verdict.SUSTAINED_LOAD_OK


def test_load_estimate():
    spec = ClusterSpec(8e6, 2, 1)  # 1000 B -> 1000 Hz network; 1 ms x 2 -> 2000 Hz cpu
    p = WorkloadPoint(1000, 1000)
    assert estimate_fraction_max_load(snap(500, 500), p, spec) == pytest.approx(0.5)
    assert estimate_fraction_max_load(snap(500, 500, achieved=200), p, spec) == pytest.approx(0.6)
    assert estimate_fraction_max_load(snap(5000, 500), p, spec) == 1.0


# -- search against deterministic oracles -----------------------------------


@given(st.integers(min_value=1, max_value=10**6))
@settings(max_examples=200, deadline=None)
def test_search_finds_exact_threshold(t):
    r = find_max_f(P, MockAdapter(t), SPEC, time_cap_s=None)
    assert r.max_hz == t
    assert r.iterations <= 80
    assert r.min_known_not_ok_f == t + 1


@given(st.integers(min_value=1, max_value=10**6), st.integers(min_value=1, max_value=2 * 10**6))
@settings(max_examples=100, deadline=None)
def test_search_exact_from_any_warm_start(t, start):
    r = find_max_f(P, MockAdapter(t), SPEC, f_last_run=start, time_cap_s=None)
    assert r.max_hz == t


@given(st.integers(min_value=1, max_value=10**6))
@settings(max_examples=100, deadline=None)
def test_bracket_and_gating(t):
    adapter = MockAdapter(t)
    r = find_max_f(P, adapter, SPEC, time_cap_s=None)
    lo, hi = 0, None
    trace = r.verdict_trace
    # every rate is judged by exactly one decisive verdict and changes only after it
    rates = [f for f, _ in trace]
    for i, (f, v) in enumerate(trace):
        if i + 1 < len(trace) and rates[i + 1] != f:
            assert v != Verdict.WAIT_AND_SEE.value
    for f, v in trace:
        if hi is not None:
            assert lo < f < hi
        if v == Verdict.SUSTAINED_LOAD_OK.value:
            lo = f
        elif v == Verdict.TOO_MUCH_LOAD.value:
            hi = f
        if hi is not None:
            assert lo < hi
    assert adapter.rates == sorted(set(adapter.rates), key=adapter.rates.index)  # no rate offered twice


def test_unsustainable_point():
    r = find_max_f(P, MockAdapter(0), SPEC, f_last_run=5, time_cap_s=None)
    assert r.max_hz == 0 and r.unsustainable


def test_per_point_threshold_and_efficiency():
    spec = ClusterSpec(8e6, 2, 1)
    fn = efficiency_threshold(spec, 0.8, ceiling_hz=500)
    assert fn(WorkloadPoint(1000, 0)) == 500
    assert fn(WorkloadPoint(10_000, 0)) == 80
    r = find_max_f(WorkloadPoint(10_000, 0), MockAdapter(fn), spec, time_cap_s=None)
    assert r.max_hz == 80


class Flaky(Adapter):
    """Undecided forever at one rate, fine below it."""

    def __init__(self, bad):
        self.bad, self.f, self.clock = bad, 1, 0.0

    def set_point(self, point):
        pass

    def set_rate(self, f):
        self.f = f

    def reset(self):
        pass

    def now(self):
        return self.clock

    def metrics(self):
        self.clock += 1.0
        depths = (0, 2, 1) if self.f >= self.bad else (0, 0, 0)
        return snap(self.f, self.f, depths, duration=1.0)


def test_endless_wait_escalates():
    r = find_max_f(P, Flaky(50), SPEC, f_last_run=40, time_cap_s=None, max_waits=3)
    assert r.max_hz == 49
    waits_at_50 = [v for f, v in r.verdict_trace if f == 50]
    assert waits_at_50.count(Verdict.WAIT_AND_SEE.value) == 4  # settle + 3 undecided
    assert waits_at_50[-1] == Verdict.TOO_MUCH_LOAD.value


def test_time_cap_returns_best_bracket():
    r = find_max_f(P, MockAdapter(10**6, window_s=60.0), SPEC, f_last_run=1, time_cap_s=600)
    assert r.timed_out
    assert 1 <= r.max_hz < 10**6
    assert r.wall_time >= 600


def test_failure_at_known_good_rate_resets_bracket():
    s = state(100, ok=100)
    nxt = throttle_down(100, s)
    assert s.non_monotone
    assert (s.max_known_ok_f, s.min_known_not_ok_f) == (99, 100)
    assert nxt == Done(99)
    s.check_bracket()


def test_bracket_check_raises():
    with pytest.raises(AssertionError):
        state(ok=10, not_ok=10).check_bracket()
