"""Data-logistics and decode-cost calculators.

All sizes are decimal (1 TB = 1e12 bytes, 1 GB/s = 1e9 B/s), matching how
drive capacities and sensor bandwidths are quoted.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum
from typing import Iterable

TB = 10**12
GB = 10**9
MB = 10**6


class PlannerError(ValueError):
    pass


class Packing(str, Enum):
    PACKED = "packed"
    WORD16 = "word16"


@dataclass(frozen=True)
class SensorRate:
    width: int
    height: int
    bit_depth: int
    rate: float
    channels: int = 1
    packing: Packing = Packing.PACKED

    def bits_per_sample(self) -> int:
        return self.bit_depth if self.packing == Packing.PACKED else 16


def camera_rate(sensor: SensorRate) -> float:
    """Bytes per second produced by a camera."""
    if min(sensor.width, sensor.height, sensor.bit_depth, sensor.channels) <= 0 or sensor.rate < 0:
        raise PlannerError("invalid sensor description")
    bits = sensor.width * sensor.height * sensor.bits_per_sample() * sensor.channels
    return bits * sensor.rate / 8


def lidar_rate(points_per_s: float, bytes_per_point: int = 16) -> float:
    return points_per_s * bytes_per_point


def logging_budget(rates: Iterable[float], capacity_bytes: float,
                   compression_ratio: float = 1.0) -> float:
    """Seconds until ``capacity_bytes`` fills at the aggregate of ``rates``.

    ``compression_ratio`` is stored/raw size; 0.25 means 75 % space savings.
    """
    if capacity_bytes <= 0:
        raise PlannerError("capacity must be positive")
    if not 0 < compression_ratio <= 1:
        raise PlannerError("compression ratio must be in (0, 1]")
    total = sum(rates)
    if total <= 0:
        raise PlannerError("zero aggregate rate")
    return capacity_bytes / (total * compression_ratio)


def dump_time(volume_bytes: float, throughput: float) -> float:
    if throughput <= 0:
        raise PlannerError("zero throughput")
    return volume_bytes / throughput


@dataclass(frozen=True)
class SavingsModel:
    n: int
    m: int
    p: int
    volume_bytes: float = 0.0


@dataclass(frozen=True)
class SavingsReport:
    n: int
    m: int
    p: int
    volume_bytes: float
    naive_ops: int
    parallel_ops: int
    naive_volume: float
    # the naive volume itself is what the headline figure quotes as saved
    saved_volume_headline: float
    # what is actually avoided: every pass but the single shared one
    saved_volume_strict: float
    decode_ratio: int

    def to_dict(self) -> dict:
        return asdict(self)


def decode_savings(model: SavingsModel) -> SavingsReport:
    if min(model.n, model.m, model.p) <= 0:
        raise PlannerError("n, m and p must be positive")
    if model.volume_bytes < 0:
        raise PlannerError("volume must be non-negative")
    fan = model.m * model.p
    return SavingsReport(
        n=model.n,
        m=model.m,
        p=model.p,
        volume_bytes=model.volume_bytes,
        naive_ops=model.n * fan,
        parallel_ops=model.n,
        naive_volume=model.volume_bytes * fan,
        saved_volume_headline=model.volume_bytes * fan,
        saved_volume_strict=model.volume_bytes * (fan - 1),
        decode_ratio=fan,
    )


# --------------------------------------------------------------------------
# unit parsing / formatting for the CLI

_SIZE_UNITS = {
    "b": 1, "kb": 10**3, "mb": MB, "gb": GB, "tb": TB, "pb": 10**15,
    "kib": 2**10, "mib": 2**20, "gib": 2**30, "tib": 2**40,
}
_TIME_UNITS = {"ns": 1e-9, "us": 1e-6, "ms": 1e-3, "s": 1.0, "min": 60.0, "h": 3600.0}


def _split_unit(text: str) -> tuple[float, str]:
    text = text.strip().replace("_", "").replace(",", "")
    i = len(text)
    while i > 0 and text[i - 1].isalpha():
        i -= 1
    try:
        return float(text[:i]), text[i:].lower()
    except ValueError:
        raise PlannerError(f"cannot parse quantity: {text!r}") from None


def parse_size(text: str) -> float:
    text = text.strip()
    if text.lower().endswith("/s"):
        text = text[:-2]
    value, unit = _split_unit(text)
    if unit == "":
        return value
    if unit not in _SIZE_UNITS:
        raise PlannerError(f"unknown size unit: {unit!r}")
    return value * _SIZE_UNITS[unit]


def parse_duration(text: str) -> float:
    """Seconds from ``"10s"``, ``"500ms"``, ``"76min"``; bare numbers are seconds."""
    value, unit = _split_unit(text)
    if unit == "":
        return value
    if unit not in _TIME_UNITS:
        raise PlannerError(f"unknown time unit: {unit!r}")
    return value * _TIME_UNITS[unit]


def format_tb(volume_bytes: float) -> str:
    tb = volume_bytes / TB
    return f"{tb:,.0f} TB" if float(tb).is_integer() else f"{tb:,.3f} TB"
