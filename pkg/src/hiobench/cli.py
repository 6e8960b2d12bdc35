"""``bench`` command line: framework roles, saturation search, sweeps, reports."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import kernels
from .bounds import ClusterSpec, bounds_table
from .config import load_config

log = logging.getLogger("hiobench")


def parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    return host, int(port)


def _spec_from_args(args) -> ClusterSpec:
    data = {}
    if getattr(args, "spec", None):
        data = load_config(args.spec).get("cluster", {})
    if getattr(args, "bandwidth_bits", None) is not None:
        data["bandwidth_bits_per_s"] = args.bandwidth_bits
    if getattr(args, "spec_slots", None) is not None:
        data["total_worker_slots"] = args.spec_slots
    if getattr(args, "topology_factor", None) is not None:
        data["topology_factor"] = args.topology_factor
    return ClusterSpec.from_dict(data)


def _add_spec_flags(p):
    p.add_argument("--spec", help="YAML/JSON config with a 'cluster' section")
    p.add_argument("--bandwidth-bits", type=float, help="link bandwidth, bits/s")
    p.add_argument("--slots", dest="spec_slots", type=int, help="total worker slots for the bounds model")
    p.add_argument("--topology-factor", type=float, help="1 = direct P2P, 2 = single relay")


def _event_log(args):
    from .telemetry import EventLog

    return EventLog(args.event_log) if getattr(args, "event_log", None) else None


def cmd_master(args) -> int:
    from .framework import Master

    host, port = args.listen
    m = Master(host, port, http_port=args.http_port, queue_capacity=args.queue_capacity, event_log=_event_log(args))
    m.start()
    print(json.dumps({"role": "master", "address": list(m.address), "metrics_url": m.metrics_url}), flush=True)
    try:
        m._thread.join()
    except KeyboardInterrupt:
        pass
    finally:
        m.stop()
    return 0


def cmd_worker(args) -> int:
    import signal

    from .framework import Worker

    host, port = args.listen
    w = Worker(
        args.master,
        slots=args.slots,
        host=host,
        port=port,
        http_port=args.http_port,
        worker_id=args.worker_id,
        heartbeat_s=args.heartbeat_s,
        event_log=_event_log(args),
    )
    signal.signal(signal.SIGTERM, lambda *_: sys.exit(0))
    w.start()
    print(json.dumps({"role": "worker", "worker_id": w.worker_id, "address": list(w.address)}), flush=True)
    try:
        w.join()
    except (KeyboardInterrupt, SystemExit):
        pass
    finally:
        w.stop()
    return 0


def cmd_source(args) -> int:
    from .framework import StreamSource, drain_and_reconcile
    from .protocol import TokenBucket
    from .workload import WorkloadPoint

    shaper = TokenBucket(args.shape_bits, args.burst_bytes) if args.shape_bits else None
    src = StreamSource(args.master, shaper=shaper, event_log=_event_log(args))
    point = WorkloadPoint(args.size_bytes, args.cpu_us)
    try:
        rep = src.stream(args.rate_hz, point, count=args.count, duration_s=args.duration_s)
    finally:
        src.close()
    out = {
        "sent": rep.sent,
        "p2p": rep.p2p,
        "queued": rep.queued,
        "duration_s": rep.duration_s,
        "target_hz": rep.target_hz,
        "achieved_hz": rep.achieved_hz,
        "blocked_fraction": rep.blocked_fraction,
        "fell_behind": rep.fell_behind,
    }
    if args.master_http and rep.drained:
        r = drain_and_reconcile(args.master_http, sent=rep.sent, timeout_s=args.drain_timeout_s)
        out["reconcile"] = {"sent": r.sent, "processed": r.processed, "lost": r.lost}
    print(json.dumps(out))
    return 0


def _make_adapter(args, spec: ClusterSpec):
    """Returns (adapter, spec, cleanup)."""
    from .adapters import FrameworkAdapter, MockAdapter, efficiency_threshold

    if args.adapter == "mock":
        cfg = load_config(args.grid).get("mock", {}) if getattr(args, "grid", None) else {}
        if getattr(args, "mock_max", None) is not None:
            threshold = args.mock_max
        else:
            threshold = efficiency_threshold(spec, float(cfg.get("efficiency", 1.0)), cfg.get("ceiling_hz"))
        return MockAdapter(threshold), spec, lambda: None
    if args.adapter != "builtin":
        raise SystemExit(f"unknown adapter {args.adapter!r} (mock, builtin)")
    kw = dict(window_s=args.window_s, settle_s=args.settle_s, calibrate=not args.no_calibrate)
    if args.master:
        from .framework import StreamSource
        from .protocol import TokenBucket

        if not args.master_http:
            raise SystemExit("--master needs --master-http")
        shaper = TokenBucket(args.shape_bits) if args.shape_bits else None
        src = StreamSource(args.master, shaper=shaper, http_port=0)
        adapter = FrameworkAdapter(args.master_http, src, **kw)
        return adapter, spec, lambda: (adapter.close(), src.close())
    from .framework import LocalCluster

    cluster = LocalCluster(
        workers=args.workers, slots=args.worker_slots, shaper_bits_per_s=args.shape_bits, mode=args.mode
    ).start()
    if args.bandwidth_bits is None and not getattr(args, "spec", None):
        spec = cluster.spec(spec.topology_factor)
    adapter = FrameworkAdapter.for_cluster(cluster, **kw)
    return adapter, spec, lambda: (adapter.close(), cluster.stop())


def _add_adapter_flags(p):
    p.add_argument("--adapter", default="builtin", help="builtin (the bundled framework) or mock")
    p.add_argument("--window-s", type=float, default=10.0, help="judged window length")
    p.add_argument("--settle-s", type=float, default=None, help="settling window length (default: --window-s)")
    p.add_argument("--master", type=parse_addr, help="existing master host:port (default: start a local cluster)")
    p.add_argument("--master-http", help="existing master status URL")
    p.add_argument("--workers", type=int, default=2, help="local cluster workers")
    p.add_argument("--worker-slots", type=int, default=1, help="slots per local worker")
    p.add_argument("--mode", choices=("thread", "process"), default="thread", help="local worker mode")
    p.add_argument("--shape-bits", type=float, help="shape source egress to this many bits/s")
    p.add_argument("--no-calibrate", action="store_true", help="skip the CPU burner calibration")
    p.add_argument("--mock-max", type=int, help="mock adapter: hidden maximum rate")
    p.add_argument("--time-cap-s", type=float, default=15 * 60, help="per-cell time cap")


def cmd_govern(args) -> int:
    from .governor import find_max_f
    from .workload import WorkloadPoint

    spec = _spec_from_args(args)
    adapter, spec, cleanup = _make_adapter(args, spec)
    try:
        res = find_max_f(WorkloadPoint(args.size_bytes, args.cpu_us), adapter, spec, time_cap_s=args.time_cap_s)
    finally:
        cleanup()
    print(
        json.dumps(
            {
                "message_size_bytes": args.size_bytes,
                "cpu_cost_us": args.cpu_us,
                "max_hz": res.max_hz,
                "iterations": res.iterations,
                "wall_time_s": res.wall_time,
                "unsustainable": res.unsustainable,
                "timed_out": res.timed_out,
                "trace": res.verdict_trace,
            }
        )
    )
    return 0


def cmd_sweep(args) -> int:
    from .sweep import SweepGrid, run_sweep

    cfg = load_config(args.grid)
    grid = SweepGrid.from_dict(cfg, adapter=args.adapter)
    args.spec = args.grid
    spec = _spec_from_args(args)
    adapter, spec, cleanup = _make_adapter(args, spec)
    grid = SweepGrid(grid.sizes_bytes, grid.cpu_costs_us, grid.adapter, spec)
    try:
        results = run_sweep(grid, adapter, out=args.out, repeats=args.repeats, time_cap_s=args.time_cap_s)
    finally:
        cleanup()
    log.info("%d cells in %s", len(results), args.out)
    return 0


def cmd_report(args) -> int:
    from .report import emit_bound_comparison, emit_regime_map
    from .sweep import load_csv

    if args.map:
        sets = {}
        for path in args.map:
            rows = load_csv(path)
            name = rows[0].adapter if rows else Path(path).stem
            sets[name if name not in sets else Path(path).stem] = rows
        svg, table = emit_regime_map(sets)
        Path(args.out).write_text(svg)
        if args.table:
            Path(args.table).write_text(table)
        print(table, end="")
        return 0
    if args.bounds:
        svg, text = emit_bound_comparison(load_csv(args.bounds), _spec_from_args(args))
        Path(args.out).write_text(svg)
        if args.csv:
            Path(args.csv).write_text(text)
        else:
            print(text, end="")
        return 0
    raise SystemExit("report needs --map or --bounds")


def cmd_bounds(args) -> int:
    from .workload import DEFAULT_CPU_COSTS_US, DEFAULT_SIZES_BYTES

    spec = _spec_from_args(args)
    grid = load_config(args.spec).get("grid", {}) if args.spec else {}
    rows = bounds_table(grid.get("sizes_bytes", DEFAULT_SIZES_BYTES), grid.get("cpu_costs_us", DEFAULT_CPU_COSTS_US), spec)
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return 0


def cmd_calibrate(args) -> int:
    from .workload import CalibrationFailed, calibrate_burner

    try:
        cal = calibrate_burner(args.samples)
    except CalibrationFailed as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return 1
    print(f"backend={cal.backend} median_overshoot={cal.median_overshoot:.4%}")
    for r in cal.rows():
        print(f"{r['requested_us']:>9} us  median {r['median_us']:>12.1f} us  overshoot {r['overshoot']:.4%}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--event-log", help="append node events (NDJSON) to this file")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("master", help="run the master (registry + queue)")
    p.add_argument("--listen", type=parse_addr, default=("127.0.0.1", 7100))
    p.add_argument("--http-port", type=int, default=7180)
    p.add_argument("--queue-capacity", type=int, help="bound the queue; producers block when full")
    p.set_defaults(func=cmd_master)

    p = sub.add_parser("worker", help="run a worker")
    p.add_argument("--master", type=parse_addr, required=True)
    p.add_argument("--slots", type=int, default=1)
    p.add_argument("--listen", type=parse_addr, default=("127.0.0.1", 0))
    p.add_argument("--http-port", type=int, default=0)
    p.add_argument("--worker-id")
    p.add_argument("--heartbeat-s", type=float, default=0.5)
    p.set_defaults(func=cmd_worker)

    p = sub.add_parser("source", help="stream messages at a fixed rate")
    p.add_argument("--master", type=parse_addr, required=True)
    p.add_argument("--master-http", help="master status URL; reconcile after a count-mode run")
    p.add_argument("--rate-hz", type=float, required=True)
    p.add_argument("--size-bytes", type=int, required=True)
    p.add_argument("--cpu-us", type=int, default=0)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--count", type=int)
    g.add_argument("--duration-s", type=float)
    p.add_argument("--shape-bits", type=float)
    p.add_argument("--burst-bytes", type=int, default=64 * 1024)
    p.add_argument("--drain-timeout-s", type=float, default=120.0)
    p.set_defaults(func=cmd_source)

    p = sub.add_parser("govern", help="find the maximum sustained rate for one point")
    p.add_argument("--size-bytes", type=int, required=True)
    p.add_argument("--cpu-us", type=int, required=True)
    _add_adapter_flags(p)
    _add_spec_flags(p)
    p.set_defaults(func=cmd_govern)

    p = sub.add_parser("sweep", help="run the saturation search over a grid")
    p.add_argument("--grid", required=True, help="YAML/JSON config (grid, cluster, mock sections)")
    p.add_argument("--out", required=True)
    p.add_argument("--repeats", type=int, default=1)
    _add_adapter_flags(p)
    p.add_argument("--bandwidth-bits", type=float)
    p.add_argument("--spec-slots", dest="spec_slots", type=int)
    p.add_argument("--topology-factor", type=float)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="SVG/text reports from result CSVs")
    p.add_argument("--map", nargs="+", metavar="CSV", help="regime map over one or more result sets")
    p.add_argument("--bounds", metavar="CSV", help="bound comparison for one result set")
    p.add_argument("--out", required=True, help="SVG output path")
    p.add_argument("--table", help="text table output path (--map)")
    p.add_argument("--csv", help="normalised CSV output path (--bounds)")
    _add_spec_flags(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("bounds", help="print network/CPU bounds and regimes as CSV")
    _add_spec_flags(p)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("calibrate", help="check CPU burn accuracy on this machine")
    p.add_argument("--samples", type=int, default=3)
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    log.debug("kernel backend: %s", kernels.BACKEND)
    return args.func(args) or 0
