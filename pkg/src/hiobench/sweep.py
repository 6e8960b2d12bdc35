"""Parameter sweep over (message size, CPU cost) and result persistence.

Results CSV: a ``# hiobench-cells v1`` line, then a header row and one row
per measured cell, in this column order::

    adapter, message_size_bytes, cpu_cost_us, max_hz, bound_network_hz,
    bound_cpu_hz, regime, utilization, iterations, wall_time_s, timestamp

Floats are written with ``repr`` so they read back exactly; an unbounded
CPU bound is ``inf``.
"""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .bounds import ClusterSpec, Regime, classify_regime, cpu_bound, network_bound, utilization
from .governor import AdapterDown, find_max_f
from .workload import DEFAULT_CPU_COSTS_US, DEFAULT_SIZES_BYTES, WorkloadPoint

log = logging.getLogger(__name__)

SCHEMA_LINE = "# hiobench-cells v1"
SCHEMA_PREFIX = "# hiobench-cells v"
COLUMNS = (
    "adapter",
    "message_size_bytes",
    "cpu_cost_us",
    "max_hz",
    "bound_network_hz",
    "bound_cpu_hz",
    "regime",
    "utilization",
    "iterations",
    "wall_time_s",
    "timestamp",
)
# A measured maximum below this fraction of the ideal bound is treated as
# the framework's own ceiling (regime C).
FRAMEWORK_CEILING_UTILIZATION = 0.5


class SchemaMismatch(ValueError):
    pass


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SweepGrid:
    sizes_bytes: tuple[int, ...] = DEFAULT_SIZES_BYTES
    cpu_costs_us: tuple[int, ...] = DEFAULT_CPU_COSTS_US
    adapter: str = "mock"
    cluster: ClusterSpec = field(default_factory=ClusterSpec)

    def __post_init__(self):
        for name in ("sizes_bytes", "cpu_costs_us"):
            axis = tuple(int(v) for v in getattr(self, name))
            if not axis:
                raise ValueError(f"{name} is empty")
            if any(b <= a for a, b in zip(axis, axis[1:])):
                raise ValueError(f"{name} must be strictly increasing")
            object.__setattr__(self, name, axis)

    def points(self) -> list[WorkloadPoint]:
        """Sweep order: size-major, both axes ascending."""
        return [WorkloadPoint(s, c) for s in self.sizes_bytes for c in self.cpu_costs_us]

    @classmethod
    def from_dict(cls, data: dict, adapter: str | None = None) -> SweepGrid:
        grid = data.get("grid", {})
        return cls(
            tuple(grid.get("sizes_bytes", DEFAULT_SIZES_BYTES)),
            tuple(grid.get("cpu_costs_us", DEFAULT_CPU_COSTS_US)),
            adapter or data.get("adapter", "mock"),
            ClusterSpec.from_dict(data.get("cluster", {})),
        )


@dataclass(frozen=True)
class CellResult:
    adapter: str
    point: WorkloadPoint
    max_hz: int
    bound_network_hz: float
    bound_cpu_hz: float
    regime: Regime
    utilization: float
    iterations: int
    wall_time_s: float
    timestamp: str = ""

    @classmethod
    def from_measurement(
        cls, adapter: str, point: WorkloadPoint, max_hz: int, spec: ClusterSpec, iterations: int, wall_time_s: float, timestamp: str = ""
    ) -> CellResult:
        util = utilization(max_hz, point, spec)
        ceiling = max_hz if util < FRAMEWORK_CEILING_UTILIZATION else None
        return cls(
            adapter,
            point,
            int(max_hz),
            network_bound(point, spec),
            cpu_bound(point, spec),
            classify_regime(point, spec, ceiling),
            util,
            iterations,
            wall_time_s,
            timestamp,
        )

    def row(self) -> list[str]:
        return [
            self.adapter,
            str(self.point.message_size_bytes),
            str(self.point.cpu_cost_us),
            str(self.max_hz),
            repr(float(self.bound_network_hz)),
            repr(float(self.bound_cpu_hz)),
            self.regime.value,
            repr(float(self.utilization)),
            str(self.iterations),
            repr(float(self.wall_time_s)),
            self.timestamp,
        ]

    @classmethod
    def from_row(cls, row: dict) -> CellResult:
        return cls(
            row["adapter"],
            WorkloadPoint(int(row["message_size_bytes"]), int(row["cpu_cost_us"])),
            int(row["max_hz"]),
            float(row["bound_network_hz"]),
            float(row["bound_cpu_hz"]),
            Regime(row["regime"]),
            float(row["utilization"]),
            int(row["iterations"]),
            float(row["wall_time_s"]),
            row["timestamp"],
        )

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.adapter, self.point.message_size_bytes, self.point.cpu_cost_us)


def _header_text() -> str:
    buf = io.StringIO()
    buf.write(SCHEMA_LINE + "\n")
    csv.writer(buf, lineterminator="\n").writerow(COLUMNS)
    return buf.getvalue()


def _row_text(result: CellResult) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(result.row())
    return buf.getvalue()


def persist_csv(results: list[CellResult], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(_header_text())
        for r in results:
            fh.write(_row_text(r))


def append_csv(result: CellResult, path: str | Path) -> None:
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        if new:
            fh.write(_header_text())
        fh.write(_row_text(result))
        fh.flush()
        os.fsync(fh.fileno())


def load_csv(path: str | Path) -> list[CellResult]:
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\r\n")
        if first != SCHEMA_LINE:
            found = first[len(SCHEMA_PREFIX):] if first.startswith(SCHEMA_PREFIX) else "none"
            raise SchemaMismatch(f"{path}: expected {SCHEMA_LINE!r}, found schema version {found}")
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise SchemaMismatch(f"{path}: columns {reader.fieldnames} != {list(COLUMNS)}")
        return [CellResult.from_row(row) for row in reader]


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_sweep(
    grid: SweepGrid,
    adapter,
    out: str | Path | None = None,
    repeats: int = 1,
    failures: list | None = None,
    **find_kwargs,
) -> list[CellResult]:
    """Find the maximum rate for every grid cell, one cell at a time.

    Each cell starts from the previous cell's maximum. With ``out`` given,
    rows already in that file are kept and their cells skipped, and each new
    row is appended as soon as it is measured. Cell errors are logged (and
    appended to ``failures``) and the sweep moves on; only AdapterDown
    aborts it.
    """
    done: dict[tuple, list[CellResult]] = {}
    results: list[CellResult] = []
    if out is not None and os.path.exists(out) and os.path.getsize(out) > 0:
        for r in load_csv(out):
            done.setdefault(r.key, []).append(r)
            results.append(r)
    last_max: int | None = None
    for point in grid.points():
        key = (grid.adapter, point.message_size_bytes, point.cpu_cost_us)
        have = done.get(key, [])
        if have:
            last_max = have[-1].max_hz or None
        for _ in range(repeats - len(have)):
            try:
                adapter.reset()
                res = find_max_f(point, adapter, grid.cluster, f_last_run=last_max, **find_kwargs)
            except AdapterDown:
                raise
            except Exception as exc:  # noqa: BLE001 - one bad cell must not end the sweep
                log.exception("cell %s failed", point)
                if failures is not None:
                    failures.append((point, exc))
                continue
            cell = CellResult.from_measurement(
                grid.adapter, point, res.max_hz, grid.cluster, res.iterations, res.wall_time, _utc_now()
            )
            if res.timed_out:
                log.warning("cell %s hit the time cap; recorded best bracket %d Hz", point, res.max_hz)
            results.append(cell)
            if out is not None:
                append_csv(cell, out)
            last_max = res.max_hz or None
    return results
