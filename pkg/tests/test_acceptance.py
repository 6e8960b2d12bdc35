"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py``; the lines appear in the
"acceptance" section of the terminal summary. The framework criteria (3-6)
run real clusters on this host and take a few minutes in total.
"""

import random
import socket
import threading
import time

import pytest

from hiobench.adapters import FrameworkAdapter, MockAdapter, efficiency_threshold
from hiobench.bounds import ClusterSpec, Regime, classify_regime, cpu_bound, network_bound
from hiobench.framework import LocalCluster, drain_and_reconcile
from hiobench.governor import Done, SearchState, find_max_f, throttle_down, throttle_up
from hiobench.protocol import (
    Frame,
    Kind,
    TokenBucket,
    TruncatedFrame,
    decode_frame,
    encode_frame,
    shaped_write,
)
from hiobench.sweep import CellResult, SweepGrid, load_csv, persist_csv, run_sweep
from hiobench.workload import WorkloadPoint

pytestmark = pytest.mark.acceptance


def _state(f, ok=0):
    return SearchState(f=f, point=WorkloadPoint(100, 0), max_known_ok_f=ok)


def test_criterion_1_ramp_and_bisection_table(verdict):
    verdict(1, "ramp/bisection table")
    t0 = time.monotonic()
    got = [
        throttle_up(0.005, 10, _state(10)),
        throttle_up(0.05, 10, _state(10)),
        throttle_up(0.3, 100, _state(100)),
        throttle_up(0.6, 5, _state(5)),
        throttle_down(200, _state(200, ok=100)),
        throttle_down(100, _state(100, ok=99)),
    ]
    dt = time.monotonic() - t0
    want = [100, 50, 110, 6, 150, Done(99)]
    verdict(1, f"ramp/bisection table {got} in {dt * 1e3:.2f} ms")
    assert got == want
    assert dt < 1.0


def test_criterion_2_governor_matches_mock_oracle(verdict):
    verdict(2, "50 random thresholds")
    rng = random.Random(20240601)
    spec = ClusterSpec()
    point = WorkloadPoint(100, 0)
    t0 = time.monotonic()
    worst, misses = 0, []
    for _ in range(50):
        t = rng.randint(1, 10**6)
        r = find_max_f(point, MockAdapter(t), spec, time_cap_s=None)
        worst = max(worst, r.iterations)
        if r.max_hz != t:
            misses.append((t, r.max_hz))
    dt = time.monotonic() - t0
    verdict(2, f"50 thresholds: {50 - len(misses)} exact, worst {worst} judged windows, {dt:.2f} s")
    assert not misses
    assert worst <= 80
    assert dt < 30


@pytest.mark.slow
def test_criterion_3_network_bound_approach(verdict):
    verdict(3, "1 MB @ 80 Mbit/s shaped, 2 workers")
    point = WorkloadPoint(1_000_000, 0)
    t0 = time.monotonic()
    with LocalCluster(workers=2, slots=1, shaper_bits_per_s=80e6) as c:
        spec = c.spec()
        adapter = FrameworkAdapter.for_cluster(c, window_s=3.0, settle_s=1.0)
        try:
            r = find_max_f(point, adapter, spec)
        finally:
            adapter.close()
    dt = time.monotonic() - t0
    bound = network_bound(point, spec)
    verdict(3, f"max {r.max_hz} Hz vs network bound {bound:g} Hz ({r.max_hz / bound:.1%}), {dt:.0f} s")
    assert bound == pytest.approx(10.0)
    assert abs(r.max_hz - bound) <= 0.15 * bound
    assert dt <= 300


@pytest.mark.slow
def test_criterion_4_cpu_bound_approach(verdict):
    verdict(4, "50 ms x 4 slots, 1 KB, loopback")
    point = WorkloadPoint(1000, 50_000)
    t0 = time.monotonic()
    with LocalCluster(workers=2, slots=2) as c:
        spec = c.spec()
        adapter = FrameworkAdapter.for_cluster(c, window_s=3.0, settle_s=1.0)
        try:
            r = find_max_f(point, adapter, spec)
        finally:
            adapter.close()
    dt = time.monotonic() - t0
    bound = cpu_bound(point, spec)
    verdict(4, f"max {r.max_hz} Hz vs CPU bound {bound:g} Hz ({r.max_hz / bound:.1%}), {dt:.0f} s")
    assert bound == pytest.approx(80.0)
    assert abs(r.max_hz - bound) <= 0.15 * bound
    assert dt <= 300


@pytest.mark.slow
def test_criterion_5_queue_fallback_under_overload(verdict):
    verdict(5, "2x overload for 30 s")
    # 2 slots x 12 ms = 166.7 Hz service; offer 340 Hz for 30 s
    point = WorkloadPoint(100, 12_000)
    rate, count = 340, 10_200
    with LocalCluster(workers=2, slots=1, track_ids=True) as c:
        src = c.source(http=False)
        depths, stop = [], threading.Event()

        def sample():
            while not stop.wait(1.0):
                depths.append(c.master.queue.depth)

        sampler = threading.Thread(target=sample)
        sampler.start()
        try:
            rep = src.stream(rate, point, count=count)
        finally:
            stop.set()
            sampler.join()
        r = drain_and_reconcile(c.master, sent=rep.sent, timeout_s=180)
        ids = {i for w in c.workers for i in w.processed_ids}
    growing = len(depths) >= 10 and depths[-1] > depths[len(depths) // 2] > depths[0]
    verdict(
        5,
        f"sent {rep.sent} in {rep.duration_s:.1f} s, blocked {rep.blocked_fraction:.2%}, "
        f"queue depth {depths[0] if depths else '-'} -> {depths[-1] if depths else '-'}, "
        f"processed {r.processed}, lost {r.lost}",
    )
    assert rep.duration_s >= 29.9
    assert growing
    assert rep.blocked_fraction < 0.05
    assert rep.sent == r.processed >= 10_000
    assert r.lost == 0
    assert ids == set(range(rep.sent))


@pytest.mark.slow
def test_criterion_6_framework_ceiling(verdict, tmp_path):
    verdict(6, "100 B, no CPU, 1 Gbit/s shaped")
    point = WorkloadPoint(100, 0)
    with LocalCluster(workers=2, slots=1, shaper_bits_per_s=1e9) as c:
        spec = c.spec()
        adapter = FrameworkAdapter.for_cluster(c, window_s=2.0, settle_s=1.0)
        try:
            r = find_max_f(point, adapter, spec)
        finally:
            adapter.close()
    bound = network_bound(point, spec)
    cell = CellResult.from_measurement("builtin", point, r.max_hz, spec, r.iterations, r.wall_time)
    out = tmp_path / "ceiling.csv"
    persist_csv([cell], out)
    stored = load_csv(out)[0]
    verdict(
        6,
        f"ceiling {r.max_hz} Hz = {r.max_hz / bound:.3%} of network bound {bound:g} Hz, regime {stored.regime.value}",
    )
    assert bound == pytest.approx(1.25e6)
    assert 0 < r.max_hz < 0.1 * bound
    assert stored.max_hz == r.max_hz
    assert stored.regime is Regime.FRAMEWORK_BOUND


def test_criterion_7_bounds_model(verdict):
    verdict(7, "bounds arithmetic")
    lab = ClusterSpec(1.4e9, 40, 1)
    relay = ClusterSpec(1.4e9, 40, 2)
    got = (
        network_bound(WorkloadPoint(10_000_000, 0), lab),
        network_bound(WorkloadPoint(10_000_000, 0), relay),
        cpu_bound(WorkloadPoint(100, 1_000_000), lab),
        classify_regime(WorkloadPoint(100, 1_000_000), lab).value,
        classify_regime(WorkloadPoint(10_000_000, 0), lab).value,
    )
    verdict(7, f"bounds {got[0]:g} / {got[1]:g} / {got[2]:g} Hz, regimes {got[3]} {got[4]}")
    assert got[0] == pytest.approx(17.5, abs=1e-9)
    assert got[1] == pytest.approx(8.75, abs=1e-9)
    assert got[2] == pytest.approx(40.0, abs=1e-9)
    assert got[3:] == ("A", "B")


def test_criterion_8_codec_and_shaper(verdict):
    verdict(8, "codec roundtrip, truncation, shaper timing")
    rng = random.Random(8)
    kinds = list(Kind)
    mismatches = undetected = 0
    for _ in range(1000):
        f = Frame.build(rng.choice(kinds), rng.randbytes(rng.randint(0, 2048)), rng.getrandbits(64), rng.getrandbits(64))
        raw = encode_frame(f)
        if decode_frame(raw) != f:
            mismatches += 1
        try:
            decode_frame(raw[: rng.randrange(len(raw))])
            undetected += 1
        except TruncatedFrame:
            pass

    # 12.5 MB through a 100 Mbit/s shaped socket
    total = 12_500_000
    a, b = socket.socketpair()
    received = [0]

    def drain():
        while received[0] < total:
            chunk = b.recv(1 << 20)
            if not chunk:
                break
            received[0] += len(chunk)

    reader = threading.Thread(target=drain)
    reader.start()
    bucket = TokenBucket(100e6)
    t0 = time.monotonic()
    shaped_write(bucket, a.sendall, bytes(total))
    reader.join()
    dt = time.monotonic() - t0
    a.close()
    b.close()
    verdict(8, f"1000 roundtrips ({mismatches} mismatches, {undetected} undetected truncations), 12.5 MB in {dt:.3f} s")
    assert mismatches == 0 and undetected == 0
    assert received[0] == total
    assert 1.0 <= dt <= 1.1


def _strip(path):
    lines = path.read_text().splitlines()
    return [line.rsplit(",", 1)[0] for line in lines]


def test_criterion_9_sweep_determinism_and_resume(verdict, tmp_path):
    verdict(9, "mock 2x2 sweep")
    spec = ClusterSpec(8e6, 4, 1)
    grid = SweepGrid((1000, 100_000), (0, 50_000), "mock", spec)
    threshold = efficiency_threshold(spec, 0.85)
    a, b, part = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "part.csv"
    run_sweep(grid, MockAdapter(threshold), out=a)
    run_sweep(grid, MockAdapter(threshold), out=b)

    class Interrupted(MockAdapter):
        calls = 0

        def set_point(self, point):
            Interrupted.calls += 1
            if Interrupted.calls > 2:
                raise KeyboardInterrupt  # operator stops the run
            super().set_point(point)

    with pytest.raises(KeyboardInterrupt):
        run_sweep(grid, Interrupted(threshold), out=part)
    partial_rows = len(load_csv(part))
    run_sweep(grid, MockAdapter(threshold), out=part)
    same = _strip(a) == _strip(b)
    resumed = _strip(part) == _strip(a)
    verdict(9, f"repeat identical: {same}; resumed after {partial_rows} of 4 cells identical: {resumed}")
    assert same and resumed
    assert partial_rows == 2
