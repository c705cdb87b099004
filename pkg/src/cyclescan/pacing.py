"""Send-rate control and Ethernet line-rate arithmetic."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

MIN_FRAME = 60
FCS = 4
PREAMBLE_SFD = 8
INTERFRAME_GAP = 12
DEFAULT_BATCH = 64


def wire_length(frame_len: int) -> int:
    """Bytes a frame occupies on the wire, padding and framing overhead included."""
    return max(frame_len, MIN_FRAME) + FCS + PREAMBLE_SFD + INTERFRAME_GAP


def line_rate_pps(frame_len: int, link_bps: float) -> float:
    if frame_len < 14:
        raise ValueError("frame shorter than an Ethernet header")
    return link_bps / (wire_length(frame_len) * 8)


_SUFFIX = {"": 1, "K": 10**3, "M": 10**6, "G": 10**9}


def parse_bandwidth(text: str) -> int:
    """``"1G"``, ``"250M"``, ``"10000"`` to bits per second."""
    m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*([KkMmGg]?)\s*", text)
    if not m:
        raise ValueError(f"invalid bandwidth {text!r}")
    return int(float(m.group(1)) * _SUFFIX[m.group(2).upper()])


@dataclass(frozen=True)
class RatePlan:
    target_pps: float = 0.0
    bandwidth_bps: int | None = None
    batch_size: int = DEFAULT_BATCH

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.target_pps < 0:
            raise ValueError("rate must be non-negative")

    @classmethod
    def from_bandwidth(cls, bandwidth_bps: int, frame_len: int, batch_size: int = DEFAULT_BATCH) -> "RatePlan":
        return cls(line_rate_pps(frame_len, bandwidth_bps), bandwidth_bps, batch_size)

    @property
    def unlimited(self) -> bool:
        return self.target_pps <= 0

    def split(self, workers: int) -> "RatePlan":
        """Per-worker share of the rate; each worker paces on its own."""
        if self.unlimited:
            return self
        return RatePlan(self.target_pps / workers, self.bandwidth_bps, self.batch_size)


def _due(plan: RatePlan, sent_so_far: int, scan_start_time: float) -> float:
    # rounding up keeps the float schedule from running a hair ahead of the rate
    due = scan_start_time + sent_so_far / plan.target_pps
    while (due - scan_start_time) * plan.target_pps < sent_so_far:
        due = math.nextafter(due, math.inf)
    return due


def pace(plan: RatePlan, sent_so_far: int, scan_start_time: float, now: float) -> float:
    """Seconds to wait before the next batch so that sent / elapsed <= rate."""
    if plan.unlimited:
        return 0.0
    return max(0.0, _due(plan, sent_so_far, scan_start_time) - now)


class Pacer:
    """Per-worker pacing state: batches of ``plan.batch_size`` probes."""

    def __init__(self, plan: RatePlan, start_time: float):
        self.plan = plan
        self.start_time = start_time
        self.sent = 0

    def next_send_time(self) -> float:
        if self.plan.unlimited:
            return self.start_time
        return _due(self.plan, self.sent, self.start_time)

    def delay(self, now: float) -> float:
        return pace(self.plan, self.sent, self.start_time, now)

    def record(self, count: int) -> None:
        self.sent += count
