"""A deterministic, virtual-clock network medium for desk-scale scans.

Probes handed to :meth:`SimulatedMedium.send_frame` are parsed with the probe
parser, matched against a responder table, and answered with replies built by
the inverse builders in :mod:`cyclescan.probes`. Loss and latency are drawn
from an RNG keyed by ``(profile seed, probe identity)`` so the outcome for a
probe does not depend on the order probes arrive in.
"""

from __future__ import annotations

import hashlib
import heapq
import ipaddress
import json
import random
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Any

from cyclescan import probes
from cyclescan.probes import MalformedFrame, ProbeInfo, ProbeKind

BEHAVIORS = ("silent", "synack", "rst", "synack_dup", "blowback", "unreach")


class VirtualClock:
    """Seconds since scan start, advanced explicitly; ``epoch`` anchors wall time."""

    def __init__(self, start: float = 0.0, epoch: float | None = None):
        self._now = start
        self.epoch = time.time() if epoch is None else epoch

    def now(self) -> float:
        return self._now

    def advance_to(self, t: float) -> None:
        if t > self._now:
            self._now = t

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            self._now += seconds

    def wall(self) -> float:
        return self.epoch + self._now


@dataclass(frozen=True)
class Behavior:
    kind: str = "silent"
    count: int = 0

    def __post_init__(self) -> None:
        if self.kind not in BEHAVIORS:
            raise ValueError(f"unknown responder behavior {self.kind!r}")
        if self.count < 0:
            raise ValueError("behavior count must be >= 0")

    @property
    def replies(self) -> int:
        if self.kind == "silent":
            return 0
        if self.kind == "synack_dup":
            return self.count + 1
        if self.kind == "blowback":
            return self.count
        return 1

    @classmethod
    def from_dict(cls, spec: dict[str, Any] | str) -> "Behavior":
        if isinstance(spec, str):
            return cls(spec)
        kind = spec["behavior"]
        if kind == "synack_dup":
            return cls(kind, int(spec.get("k", 1)))
        if kind == "blowback":
            return cls(kind, int(spec.get("m", 1000)))
        return cls(kind)


@dataclass(frozen=True)
class ResponderRule:
    network: ipaddress.IPv4Network
    behavior: Behavior
    ports: frozenset[int] | None = None
    ttl: int | None = None

    def matches(self, ip: int, port: int) -> bool:
        if self.ports is not None and port not in self.ports:
            return False
        return ip & int(self.network.netmask) == int(self.network.network_address)


@dataclass
class MediumProfile:
    """Responder table plus loss/latency model; first matching rule wins."""

    rules: list[ResponderRule] = field(default_factory=list)
    default: Behavior = field(default_factory=Behavior)
    loss_prob: float = 0.0
    latency_ms: tuple[float, float] = (1.0, 1.0)
    ttl: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must be within [0, 1]")
        lo, hi = self.latency_ms
        if lo < 0 or hi < lo:
            raise ValueError("latency range must satisfy 0 <= lo <= hi")
        self._hosts: dict[int, list[int]] = {}
        self._networks: list[int] = []
        for i, rule in enumerate(self.rules):
            if rule.network.prefixlen == 32:
                self._hosts.setdefault(int(rule.network.network_address), []).append(i)
            else:
                self._networks.append(i)

    def behavior_for(self, ip: int, port: int) -> tuple[Behavior, int]:
        """Return the behavior and TTL for a probe to ``ip:port``."""
        candidates = sorted(self._hosts.get(ip, []) + self._networks)
        for i in candidates:
            rule = self.rules[i]
            if rule.matches(ip, port):
                return rule.behavior, rule.ttl if rule.ttl is not None else self.ttl
        return self.default, self.ttl

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "MediumProfile":
        rules = []
        for entry in doc.get("responders", []):
            ports = entry.get("ports")
            rules.append(
                ResponderRule(
                    ipaddress.IPv4Network(entry.get("match", "0.0.0.0/0"), strict=False),
                    Behavior.from_dict(entry),
                    frozenset(ports) if ports is not None else None,
                    entry.get("ttl"),
                )
            )
        latency = doc.get("latency_ms", 1.0)
        if isinstance(latency, (int, float)):
            latency = (float(latency), float(latency))
        return cls(
            rules=rules,
            default=Behavior.from_dict(doc.get("default", "silent")),
            loss_prob=float(doc.get("loss_prob", 0.0)),
            latency_ms=(float(latency[0]), float(latency[1])),
            ttl=int(doc.get("ttl", 64)),
            seed=int(doc.get("seed", 0)),
        )

    @classmethod
    def load(cls, path: str) -> "MediumProfile":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class SimulatedMedium:
    """Send/receive endpoint shared by all send workers and the receive worker."""

    def __init__(self, profile: MediumProfile, clock: VirtualClock | None = None, record_sends: bool = False):
        self.profile = profile
        self.clock = clock or VirtualClock()
        self.frames_sent = 0
        self.errors: list[str] = []
        self.send_times: list[float] | None = [] if record_sends else None
        self._queue: list[tuple[float, int, bytes]] = []
        self._order = 0
        self._lock = threading.Lock()

    def _probe_rng(self, probe: ProbeInfo) -> random.Random:
        ident = struct.pack(
            "!QIIHHIHHB", self.profile.seed & (2**64 - 1), probe.src_ip, probe.dst_ip,
            probe.sport, probe.dport, probe.seq, probe.icmp_id, probe.icmp_seq, probe.kind is ProbeKind.TCP_SYN,
        )
        return random.Random(hashlib.blake2b(ident, digest_size=8).digest())

    def _replies(self, probe: ProbeInfo, rng: random.Random) -> list[bytes]:
        behavior, ttl = self.profile.behavior_for(probe.dst_ip, probe.dport)
        if behavior.kind == "silent":
            return []
        if behavior.kind == "unreach":
            return [probes.build_unreachable(probe, probe.dst_ip, ttl=ttl)]
        if probe.kind is ProbeKind.ICMP_ECHO:
            if behavior.kind == "rst":
                return []
            return [probes.build_echo_reply(probe, ttl)] * behavior.replies
        if behavior.kind == "rst":
            return [probes.build_rst(probe, ttl)]
        return [probes.build_synack(probe, ttl, rng.getrandbits(32))] * behavior.replies

    def send_frame(self, frame: bytes) -> None:
        try:
            probe = probes.parse_probe(frame)
        except MalformedFrame as exc:
            with self._lock:
                self.errors.append(f"malformed probe: {exc}")
            return
        rng = self._probe_rng(probe)
        lost = rng.random() < self.profile.loss_prob
        replies = [] if lost else self._replies(probe, rng)
        lo, hi = self.profile.latency_ms
        with self._lock:
            now = self.clock.now()
            self.frames_sent += 1
            if self.send_times is not None:
                self.send_times.append(now)
            for reply in replies:
                latency = (lo if lo == hi else rng.uniform(lo, hi)) / 1000.0
                heapq.heappush(self._queue, (now + latency, self._order, probes.pad_frame(reply)))
                self._order += 1

    def pending(self) -> int:
        return len(self._queue)

    def recv_frame(self, timeout: float) -> bytes | None:
        """Next reply due within ``timeout`` seconds, else ``None`` after the timeout."""
        with self._lock:
            deadline = self.clock.now() + max(0.0, timeout)
            if self._queue and self._queue[0][0] <= deadline:
                due, _, frame = heapq.heappop(self._queue)
                self.clock.advance_to(due)
                return frame
            self.clock.advance_to(deadline)
            return None
