"""Analytic throughput bounds for an ideal, zero-overhead framework.

An ideal framework reaches whichever is tighter: the rate at which the
source link can move messages, or the rate at which the worker cores can
burn through their per-message CPU cost. A measured ceiling below both marks
the cell as framework bound.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

from .workload import WorkloadPoint

UNBOUNDED = math.inf
OVER_BOUND_TOLERANCE = 1.05

LAB_BANDWIDTH_BITS_PER_S = 1.4e9
LAB_WORKER_SLOTS = 40  # 5 workers x 8 vCPU; the master does no map work


class Regime(str, enum.Enum):
    CPU_BOUND = "A"
    NETWORK_BOUND = "B"
    FRAMEWORK_BOUND = "C"


class BoundUnboundedError(ValueError):
    pass


class BoundExceededWarning(UserWarning):
    """Measured throughput beat the ideal bound; the ClusterSpec is probably wrong."""


@dataclass(frozen=True)
class ClusterSpec:
    bandwidth_bits_per_s: float = LAB_BANDWIDTH_BITS_PER_S
    total_worker_slots: int = LAB_WORKER_SLOTS
    # 1 = direct P2P; 2 = every message crosses one relay (broker, receiver)
    topology_factor: float = 1.0

    def __post_init__(self):
        if not self.bandwidth_bits_per_s > 0:
            raise ValueError("bandwidth_bits_per_s must be positive")
        if int(self.total_worker_slots) != self.total_worker_slots or self.total_worker_slots < 1:
            raise ValueError("total_worker_slots must be a positive integer")
        if not self.topology_factor >= 1:
            raise ValueError("topology_factor must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> ClusterSpec:
        return cls(
            float(data.get("bandwidth_bits_per_s", LAB_BANDWIDTH_BITS_PER_S)),
            int(data.get("total_worker_slots", LAB_WORKER_SLOTS)),
            float(data.get("topology_factor", 1.0)),
        )


def network_bound(point: WorkloadPoint, spec: ClusterSpec) -> float:
    return spec.bandwidth_bits_per_s / (point.message_size_bytes * 8 * spec.topology_factor)


def cpu_bound(point: WorkloadPoint, spec: ClusterSpec) -> float:
    if point.cpu_cost_us == 0:
        return UNBOUNDED
    return spec.total_worker_slots * 1e6 / point.cpu_cost_us


def ideal_bound(point: WorkloadPoint, spec: ClusterSpec) -> float:
    return min(network_bound(point, spec), cpu_bound(point, spec))


def classify_regime(
    point: WorkloadPoint, spec: ClusterSpec, framework_ceiling_hz: float | None = None
) -> Regime:
    """Label a cell A (CPU), B (network) or C (framework bound).

    C needs a measured ceiling below the ideal bound; it cannot be predicted.
    Network/CPU ties are labelled B.
    """
    if framework_ceiling_hz is not None and framework_ceiling_hz < ideal_bound(point, spec):
        return Regime.FRAMEWORK_BOUND
    if cpu_bound(point, spec) < network_bound(point, spec):
        return Regime.CPU_BOUND
    return Regime.NETWORK_BOUND


def utilization(measured_hz: float, point: WorkloadPoint, spec: ClusterSpec) -> float:
    bound = ideal_bound(point, spec)
    if math.isinf(bound):
        raise BoundUnboundedError(f"ideal bound for {point} is unbounded")
    frac = measured_hz / bound
    if frac > OVER_BOUND_TOLERANCE:
        warnings.warn(
            f"{measured_hz:g} Hz is {frac:.2f}x the ideal bound {bound:g} Hz for {point}",
            BoundExceededWarning,
            stacklevel=2,
        )
    return frac


def normalize_across(results: dict[str, float]) -> dict[str, float]:
    """Scale each framework's rate for one point by the best rate."""
    if not results:
        raise ValueError("need at least one result")
    best = max(results.values())
    if best <= 0:
        return {name: 0.0 for name in results}
    return {name: hz / best for name, hz in results.items()}


def bounds_table(sizes_bytes, cpu_costs_us, spec: ClusterSpec) -> list[dict]:
    """One row per grid point (size-major), for the ``bounds`` report."""
    rows = []
    for size in sizes_bytes:
        for cost in cpu_costs_us:
            p = WorkloadPoint(size, cost)
            rows.append(
                {
                    "message_size_bytes": size,
                    "cpu_cost_us": cost,
                    "bound_network_hz": network_bound(p, spec),
                    "bound_cpu_hz": cpu_bound(p, spec),
                    "ideal_hz": ideal_bound(p, spec),
                    "regime": classify_regime(p, spec).value,
                }
            )
    return rows
