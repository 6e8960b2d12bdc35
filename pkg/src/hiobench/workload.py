"""Synthetic messages and per-message CPU burn.

Both benchmark axes, message size and CPU cost, are continuous knobs: a
message carries its CPU cost in the frame header and the worker spins for
that long on a monotonic clock.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType

from . import kernels
from .protocol import Frame, Kind

MAX_MESSAGE_BYTES = 64 * 1024 * 1024

# Default sweep grid: log-spaced between the domain endpoints.
DEFAULT_SIZES_BYTES = (100, 1_000, 10_000, 100_000, 1_000_000, 10_000_000)
DEFAULT_CPU_COSTS_US = (0, 10_000, 50_000, 100_000, 200_000, 500_000, 1_000_000)

_SEED_MULT = 0xD1B54A32D192ED03


class SizeTooLarge(ValueError):
    pass


class UnknownProfile(KeyError):
    pass


class CalibrationFailed(RuntimeError):
    pass


@dataclass(frozen=True, order=True)
class WorkloadPoint:
    message_size_bytes: int
    cpu_cost_us: int

    def __post_init__(self):
        if int(self.message_size_bytes) != self.message_size_bytes or self.message_size_bytes < 1:
            raise ValueError(f"message_size_bytes must be a positive integer, got {self.message_size_bytes}")
        if int(self.cpu_cost_us) != self.cpu_cost_us or self.cpu_cost_us < 0:
            raise ValueError(f"cpu_cost_us must be a non-negative integer, got {self.cpu_cost_us}")
        object.__setattr__(self, "message_size_bytes", int(self.message_size_bytes))
        object.__setattr__(self, "cpu_cost_us", int(self.cpu_cost_us))


@dataclass(frozen=True)
class WorkloadProfile:
    name: str
    point: WorkloadPoint
    target_hz_hint: float | None = None


_PRESETS = MappingProxyType(
    {
        # high-content imaging: ~10 MB frames at 38 fps, ~100 ms simple analysis
        "hci": WorkloadProfile("hci", WorkloadPoint(10_000_000, 100_000), 38.0),
        "tiny-enterprise": WorkloadProfile("tiny-enterprise", WorkloadPoint(100, 0)),
        "heavy-sim": WorkloadProfile("heavy-sim", WorkloadPoint(100, 1_000_000)),
    }
)


def preset(name: str, extra: dict[str, WorkloadProfile] | None = None) -> WorkloadProfile:
    if extra and name in extra:
        return extra[name]
    try:
        return _PRESETS[name]
    except KeyError:
        raise UnknownProfile(name) from None


def preset_names() -> list[str]:
    return sorted(_PRESETS)


def payload_seed(msg_id: int, stream_seed: int = 0) -> int:
    return (msg_id * _SEED_MULT + stream_seed) & 0xFFFFFFFFFFFFFFFF


def make_payload(size: int, msg_id: int, stream_seed: int = 0) -> bytes:
    buf = bytearray(size)
    kernels.fill_payload(buf, payload_seed(msg_id, stream_seed))
    return bytes(buf)


def make_message(
    point: WorkloadPoint, msg_id: int, stream_seed: int = 0, max_bytes: int = MAX_MESSAGE_BYTES
) -> Frame:
    """Build a DATA frame of ``point.message_size_bytes`` pseudo-random bytes.

    The payload is a pure function of ``(msg_id, stream_seed)``.
    """
    if point.message_size_bytes > max_bytes:
        raise SizeTooLarge(f"{point.message_size_bytes} bytes exceeds cap of {max_bytes}")
    payload = make_payload(point.message_size_bytes, msg_id, stream_seed)
    return Frame.build(Kind.DATA, payload, msg_id=msg_id, cpu_cost_us=point.cpu_cost_us)


def burn_cpu(duration_us: int) -> float:
    """Busy-spin for at least ``duration_us``; returns the measured elapsed µs."""
    if duration_us < 0:
        raise ValueError("duration_us must be non-negative")
    return kernels.burn_ns(int(duration_us) * 1000) / 1000.0


@dataclass
class BurnCalibration:
    durations_us: list[int]
    samples: list[list[float]] = field(default_factory=list)  # measured µs per duration
    backend: str = kernels.BACKEND

    def rows(self) -> list[dict]:
        out = []
        for requested, measured in zip(self.durations_us, self.samples):
            med = statistics.median(measured)
            out.append(
                {
                    "requested_us": requested,
                    "median_us": med,
                    "max_us": max(measured),
                    "min_us": min(measured),
                    "overshoot": (med - requested) / requested,
                }
            )
        return out

    @property
    def median_overshoot(self) -> float:
        return statistics.median(r["overshoot"] for r in self.rows())

    @property
    def never_undershoots(self) -> bool:
        return all(m >= d for d, ms in zip(self.durations_us, self.samples) for m in ms)


def calibrate_burner(
    samples: int = 3,
    durations_us: list[int] | None = None,
    max_median_overshoot: float = 0.02,
) -> BurnCalibration:
    """Burn a log-spaced set of durations and check the overshoot.

    Raises CalibrationFailed when the median relative overshoot exceeds
    ``max_median_overshoot`` or any burn undershoots.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if durations_us is None:
        durations_us = [int(round(10 ** (3 + k / 2))) for k in range(5)]  # 1 ms .. 100 ms
    cal = BurnCalibration(list(durations_us))
    for d in cal.durations_us:
        cal.samples.append([burn_cpu(d) for _ in range(samples)])
    if not cal.never_undershoots:
        raise CalibrationFailed("burn_cpu returned before the requested duration")
    if cal.median_overshoot > max_median_overshoot:
        raise CalibrationFailed(
            f"median burn overshoot {cal.median_overshoot:.2%} exceeds {max_median_overshoot:.0%}; "
            "machine too noisy for trustworthy results"
        )
    return cal


@dataclass(frozen=True)
class WorkloadConfig:
    sizes_bytes: tuple[int, ...] = DEFAULT_SIZES_BYTES
    cpu_costs_us: tuple[int, ...] = DEFAULT_CPU_COSTS_US
    profiles: dict[str, WorkloadProfile] = field(default_factory=dict)

    def points(self) -> list[WorkloadPoint]:
        return [WorkloadPoint(s, c) for s in self.sizes_bytes for c in self.cpu_costs_us]


def workload_config_from_dict(data: dict) -> WorkloadConfig:
    grid = data.get("grid", data)
    sizes = tuple(int(v) for v in grid.get("sizes_bytes", DEFAULT_SIZES_BYTES))
    costs = tuple(int(v) for v in grid.get("cpu_costs_us", DEFAULT_CPU_COSTS_US))
    profiles = {}
    for name, spec in (data.get("profiles") or {}).items():
        hint = spec.get("target_hz_hint")
        profiles[name] = WorkloadProfile(
            name,
            WorkloadPoint(int(spec["message_size_bytes"]), int(spec["cpu_cost_us"])),
            None if hint is None else float(hint),
        )
    return WorkloadConfig(sizes, costs, profiles)


def load_workload_config(path: str | Path) -> WorkloadConfig:
    from .config import load_config

    return workload_config_from_dict(load_config(path))

