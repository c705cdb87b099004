"""Scan orchestration: config resolution, send/receive lifecycle, cooldown.

Send workers and the receive worker run as cooperative tasks driven by one
scheduler. Each send worker owns its shard cursor, pacer and RNG; the receive
worker owns the dedup window and the data stream. The only things they share
are the medium, the counters and the abort flag.
"""

from __future__ import annotations

import hashlib
import ipaddress
import os
import platform
import random
import secrets
import socket
import sys
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import IO, Any

from cyclescan import __version__, probes
from cyclescan.dedup import DedupWindow
from cyclescan.groupcycle import make_permutation, smallest_group_for
from cyclescan.pacing import Pacer, RatePlan, parse_bandwidth
from cyclescan.probes import IpIdPolicy, OptionLayout, ProbeKind, ProbeTemplate, Rejected, ValidationKey
from cyclescan.sharder import ShardCursor, ShardPlan, make_cursor
from cyclescan.simnet import MediumProfile, SimulatedMedium, VirtualClock
from cyclescan.streams import (
    DataRow,
    OutputFormat,
    RowWriter,
    ScanCounts,
    ScanMetadata,
    StatusChannel,
    StatusUpdate,
    finalize_metadata,
    logger,
    rfc3339,
)
from cyclescan.targetspace import (
    ADDRESS_SPACE,
    AddressConstraint,
    PortSet,
    Target,
    decode_element,
    load_constraints,
    parse_cidr_lines,
    parse_max_targets,
    space_size,
)

DEFAULT_COOLDOWN = 8.0
_SAMPLE_TARGET = Target(0x0A000001, 80, 0)
DEFAULT_SOURCE_IP = "192.0.2.1"
BLOCKLIST_ENV = "CYCLESCAN_BLOCKLIST"


class ConfigError(ValueError):
    pass


class ScanIOError(OSError):
    pass


@dataclass
class ScanConfig:
    targets: list[str] = field(default_factory=list)
    allowlist_file: str | None = None
    blocklist_file: str | None = None
    blocklist: list[str] = field(default_factory=list)
    target_ports: str = "80"
    rate: float | None = None
    bandwidth: str | None = None
    batch_size: int = 64
    shards: int = 1
    shard: int = 0
    sender_threads: int = 1
    seed: int | None = None
    dedup_window: int = 10**6
    probe_module: str = "tcp_syn"
    tcp_options: str = "mss"
    ip_id: str = "random"
    source_port: str = "32768-61000"
    source_ip: str | None = None
    source_mac: str = "02:00:00:00:00:01"
    gateway_mac: str = "02:00:00:00:00:02"
    interface: str | None = None
    output_file: str | None = None
    output_module: str = "csv"
    log_file: str | None = None
    log_level: str = "info"
    status_updates_file: str | None = None
    metadata_file: str | None = None
    quiet: bool = False
    cooldown_s: float = DEFAULT_COOLDOWN
    max_targets: str | None = None
    max_runtime: float | None = None
    dry_run: bool = False
    simulate: str | None = None

    def validate(self) -> None:
        """Check the whole configuration before anything is sent."""
        if self.rate is not None and self.bandwidth is not None:
            raise ConfigError("--rate and --bandwidth are mutually exclusive")
        if self.rate is not None and self.rate < 0:
            raise ConfigError("rate must be non-negative")
        if self.bandwidth is not None:
            try:
                parse_bandwidth(self.bandwidth)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if self.shards < 1 or not 0 <= self.shard < self.shards:
            raise ConfigError(f"shard {self.shard} must lie in [0, {self.shards})")
        if self.sender_threads < 1:
            raise ConfigError("sender threads must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.dedup_window < 0:
            raise ConfigError("dedup window must be >= 0")
        if self.cooldown_s < 0:
            raise ConfigError("cooldown must be >= 0")
        if self.max_runtime is not None and self.max_runtime <= 0:
            raise ConfigError("max runtime must be positive")
        if self.output_module not in {f.value for f in OutputFormat}:
            raise ConfigError(f"unknown output module {self.output_module!r}")
        try:
            self.port_set()
            self.template()
            if self.max_targets is not None:
                parse_max_targets(self.max_targets, 1)
            for entry in self.targets + self.blocklist:
                parse_cidr_lines([entry], "<config>")
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not (self.dry_run or self.simulate) and (self.interface is None or self.source_ip is None):
            raise ConfigError("live scans need --interface and --source-ip (or use --simulate / --dryrun)")

    def port_set(self) -> PortSet:
        return PortSet.parse(self.target_ports)

    def template(self) -> ProbeTemplate:
        lo, sep, hi = self.source_port.partition("-")
        port_range = (int(lo), int(hi) if sep else int(lo))
        return ProbeTemplate(
            source_ip=int(ipaddress.IPv4Address(self.source_ip or DEFAULT_SOURCE_IP)),
            probe_kind=ProbeKind(self.probe_module),
            source_mac=probes.parse_mac(self.source_mac),
            gateway_mac=probes.parse_mac(self.gateway_mac),
            source_port_range=port_range,
            option_layout=OptionLayout(self.tcp_options),
            ip_id_policy=IpIdPolicy.parse(self.ip_id),
        )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class ScanHandle:
    """Progress counters, abort flag and final result of one scan."""

    def __init__(self) -> None:
        self.counts = ScanCounts()
        self._abort = threading.Event()
        self._done = threading.Event()
        self.result: ScanMetadata | None = None

    def abort(self) -> None:
        if not self._done.is_set():
            self._abort.set()

    @property
    def abort_requested(self) -> bool:
        return self._abort.is_set()

    @property
    def done(self) -> bool:
        return self._done.is_set()

    def wait(self, timeout: float | None = None) -> ScanMetadata | None:
        self._done.wait(timeout)
        return self.result


def abort(handle: ScanHandle) -> None:
    handle.abort()


class WallClock:
    def __init__(self) -> None:
        self._t0 = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._t0

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)

    def wall(self) -> float:
        return time.time()


class RawSocketMedium:
    """AF_PACKET send/receive on a live interface (Linux, needs CAP_NET_RAW)."""

    def __init__(self, interface: str):
        if not hasattr(socket, "AF_PACKET"):
            raise ConfigError("raw-socket scanning requires Linux AF_PACKET support")
        self.sock = socket.socket(socket.AF_PACKET, socket.SOCK_RAW, socket.htons(probes.ETHERTYPE_IPV4))
        self.sock.bind((interface, 0))
        self.frames_sent = 0

    def send_frame(self, frame: bytes) -> None:
        self.sock.send(frame)
        self.frames_sent += 1

    def recv_frame(self, timeout: float) -> bytes | None:
        self.sock.settimeout(max(timeout, 0.0) or 1e-6)
        try:
            return self.sock.recv(65535)
        except (socket.timeout, BlockingIOError):
            return None

    def close(self) -> None:
        self.sock.close()


def _derive(seed: int, label: str) -> int:
    digest = hashlib.blake2b(f"{seed}:{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


class _LogSink:
    """File-like adapter that sends status lines to the log channel."""

    def write(self, text: str) -> None:
        text = text.rstrip("\n")
        if text:
            logger.info("%s", text)

    def flush(self) -> None:
        pass


@dataclass
class _SendWorker:
    index: int
    cursor: ShardCursor
    pacer: Pacer
    rng: random.Random
    sent: int = 0
    finished: bool = False


class Scan:
    """One configured scan; :meth:`run` executes it to completion."""

    def __init__(
        self,
        config: ScanConfig,
        *,
        medium=None,
        clock=None,
        handle: ScanHandle | None = None,
        data_sink: IO[str] | None = None,
        status_sink: IO[str] | None = None,
        metadata_sink: IO[str] | str | None = None,
    ):
        config.validate()
        self.config = config
        self.handle = handle or ScanHandle()
        self.counts = self.handle.counts
        self.seed = config.seed if config.seed is not None else secrets.randbits(64)

        self.ports = config.port_set()
        self.constraint = self._load_constraint()
        self.space = space_size(self.constraint, self.ports)
        self.group = smallest_group_for(self.space)
        self.permutation = make_permutation(self.group, self.seed)
        self.plan = ShardPlan(
            self.group, self.permutation.generator, config.shards, config.sender_threads, self.permutation.first
        )
        self.template = config.template()
        self.key = ValidationKey.from_seed(self.seed)
        self.total_targets = self.constraint.allowed_count * len(self.ports)
        self.max_targets = (
            parse_max_targets(config.max_targets, self.total_targets) if config.max_targets is not None else None
        )

        self.medium = medium
        if self.medium is None and not config.dry_run:
            if config.simulate:
                self.medium = SimulatedMedium(MediumProfile.load(config.simulate), clock or VirtualClock())
            else:
                self.medium = RawSocketMedium(config.interface)
        if clock is None:
            clock = getattr(self.medium, "clock", None) or (VirtualClock() if config.dry_run else WallClock())
        self.clock = clock

        self.rate_plan = self._rate_plan()
        self.dedup = DedupWindow(config.dedup_window)
        self._data_sink = data_sink
        self._status_sink = status_sink
        self._metadata_sink = metadata_sink
        self._opened: list[IO[str]] = []

    def _load_constraint(self) -> AddressConstraint:
        cfg = self.config
        allow_lines: list[str] | None = None
        if cfg.allowlist_file is not None:
            with open(cfg.allowlist_file) as fh:
                allow_lines = fh.readlines()
        if cfg.targets:
            allow_lines = (allow_lines or []) + list(cfg.targets)
        block_lines = list(cfg.blocklist)
        if cfg.blocklist_file is not None:
            with open(cfg.blocklist_file) as fh:
                block_lines = fh.readlines() + block_lines
        try:
            return load_constraints(
                allow_lines,
                block_lines,
                allow_source=cfg.allowlist_file or "<targets>",
                block_source=cfg.blocklist_file or "<blocklist>",
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def _rate_plan(self) -> RatePlan:
        cfg = self.config
        if cfg.dry_run:
            return RatePlan(0.0, None, cfg.batch_size)
        if cfg.bandwidth is not None:
            frame_len = len(probes.build_probe(self.template, _SAMPLE_TARGET, self.key, random.Random(0)))
            return RatePlan.from_bandwidth(parse_bandwidth(cfg.bandwidth), frame_len, cfg.batch_size)
        return RatePlan(cfg.rate or 0.0, None, cfg.batch_size)

    # -- streams ---------------------------------------------------------

    def _open(self, path: str) -> IO[str]:
        fh = open(path, "w")
        self._opened.append(fh)
        return fh

    def _open_streams(self) -> None:
        cfg = self.config
        sink = self._data_sink
        if sink is None:
            sink = self._open(cfg.output_file) if cfg.output_file else sys.stdout
        self.writer = RowWriter(
            sink, cfg.output_module, with_port=self.template.probe_kind is ProbeKind.TCP_SYN, header=not cfg.dry_run
        )
        if cfg.quiet:
            status = None
        elif self._status_sink is not None:
            status = self._status_sink
        elif cfg.status_updates_file:
            status = self._open(cfg.status_updates_file)
        else:
            status = _LogSink()
        self.status = StatusChannel(status)

    def _close_streams(self) -> None:
        for fh in self._opened:
            try:
                fh.close()
            except OSError:
                pass
        self._opened.clear()

    # -- receive path ----------------------------------------------------

    def _handle_frame(self, frame: bytes) -> None:
        counts = self.counts
        counts.responses_received += 1
        record = probes.validate_response(frame, self.key, self.template, self.clock.wall())
        if isinstance(record, Rejected):
            counts.validation_rejects[record.reason.value] += 1
            return
        if not self.dedup.check_and_insert(record.target_ip, record.target_port):
            counts.duplicates_suppressed += 1
            return
        row = DataRow(
            saddr=str(ipaddress.IPv4Address(record.saddr)),
            sport=record.sport,
            classification=record.classification.value,
            ttl=record.ttl,
            timestamp=rfc3339(record.timestamp),
        )
        try:
            self.writer.write_row(row)
        except OSError as exc:
            raise ScanIOError(f"writing data row failed: {exc}") from exc
        counts.rows_output += 1

    def _receive_until(self, deadline: float) -> None:
        if self.medium is None or self.config.dry_run:
            self.clock.sleep(deadline - self.clock.now())
            self._tick_status()
            return
        while True:
            now = self.clock.now()
            limit = min(deadline, self._next_status)
            frame = self.medium.recv_frame(max(0.0, limit - now))
            if frame is not None:
                self._handle_frame(frame)
                continue
            self._tick_status()
            if self.clock.now() >= deadline:
                return

    # -- send path -------------------------------------------------------

    def _send_batch(self, worker: _SendWorker) -> None:
        counts = self.counts
        cursor = worker.cursor
        p = self.group.p
        sent = 0
        while sent < self.rate_plan.batch_size:
            if self.max_targets is not None and counts.targets_emitted >= self.max_targets:
                worker.finished = True
                break
            element = cursor.next()
            if element is None:
                worker.finished = True
                break
            target = decode_element(element, self.constraint, self.ports, p)
            if target is None:
                counts.skipped_elements += 1
                continue
            counts.targets_emitted += 1
            frame = probes.build_probe(self.template, target, self.key, worker.rng)
            if self.config.dry_run:
                try:
                    self.writer.write_raw(probes.describe_frame(frame))
                except OSError as exc:
                    raise ScanIOError(f"writing dry-run output failed: {exc}") from exc
            else:
                try:
                    self.medium.send_frame(frame)
                except OSError as exc:
                    counts.send_failures += 1
                    logger.debug("send failed: %s", exc)
                    continue
                counts.probes_sent += 1
                worker.sent += 1
            sent += 1
        worker.pacer.record(sent)

    # -- monitor ---------------------------------------------------------

    def _tick_status(self) -> None:
        now = self.clock.now()
        if now < self._next_status:
            return
        counts = self.counts
        elapsed = now - self._start
        interval = now - self._last_status[0]
        sent_rate = (counts.probes_sent - self._last_status[1]) / interval if interval > 0 else 0.0
        recv_rate = (counts.rows_output - self._last_status[2]) / interval if interval > 0 else 0.0
        remaining = self._targets_remaining()
        pace = self.rate_plan.target_pps or sent_rate
        self.status.emit_status(
            StatusUpdate(
                elapsed_s=round(elapsed, 3),
                sent=counts.probes_sent,
                sent_per_s=round(sent_rate, 1),
                recv=counts.rows_output,
                recv_per_s=round(recv_rate, 1),
                drops=counts.send_failures,
                hitrate_pct=round(100.0 * counts.rows_output / counts.probes_sent, 4) if counts.probes_sent else 0.0,
                targets_remaining=remaining,
                eta_s=round(remaining / pace, 1) if pace else 0.0,
            )
        )
        self._last_status = (now, counts.probes_sent, counts.rows_output)
        while self._next_status <= now:
            self._next_status += 1.0

    def _targets_remaining(self) -> int:
        elements = sum(w.cursor.remaining for w in self.workers)
        estimate = elements * self.total_targets // (self.group.p - 1)
        if self.max_targets is not None:
            estimate = min(estimate, max(0, self.max_targets - self.counts.targets_emitted))
        return estimate

    # -- lifecycle -------------------------------------------------------

    def _metadata(self) -> ScanMetadata:
        config = self.config.to_dict()
        config["seed"] = self.seed
        return ScanMetadata(
            tool_version=__version__,
            config=config,
            seed=self.seed,
            generator=self.permutation.generator,
            group_p=self.group.p,
            shard={"shard": self.config.shard, "shards": self.config.shards, "subshards": self.config.sender_threads},
            counts=self.counts,
            environment={
                "hostname": socket.gethostname(),
                "os": platform.platform(),
                "python": platform.python_version(),
                "interface": self.config.interface or "",
                "medium": type(self.medium).__name__ if self.medium is not None else "none",
            },
            allowed_addresses=self.constraint.allowed_count,
            excluded_addresses=ADDRESS_SPACE - self.constraint.allowed_count,
            ports=list(self.ports.ports),
        )

    def run(self) -> ScanMetadata:
        cfg = self.config
        meta = self._metadata()
        meta.start_time = rfc3339(self.clock.wall())
        self._start = self.clock.now()
        self._next_status = self._start + 1.0
        self._last_status = (self._start, 0, 0)
        worker_plan = self.rate_plan.split(cfg.sender_threads)
        self.workers = [
            _SendWorker(
                t,
                make_cursor(self.plan, cfg.shard, t),
                Pacer(worker_plan, self._start),
                random.Random(_derive(self.seed, f"worker-{t}")),
            )
            for t in range(cfg.sender_threads)
        ]
        logger.info(
            "scan starting: p=%d g=%d seed=%d targets=%d shard=%d/%d threads=%d",
            self.group.p, self.permutation.generator, self.seed, self.total_targets,
            cfg.shard, cfg.shards, cfg.sender_threads,
        )
        failure: BaseException | None = None
        try:
            self._open_streams()
            self._send_phase()
            if not cfg.dry_run:
                self._receive_until(self.clock.now() + cfg.cooldown_s)
        except (ScanIOError, OSError) as exc:
            failure = exc
            meta.error = str(exc)
            logger.error("scan aborted: %s", exc)
        except KeyboardInterrupt:
            self.handle.abort()
        meta.aborted = self.handle.abort_requested or failure is not None
        meta.end_time = rfc3339(self.clock.wall())
        meta.counts = self.counts
        try:
            finalize_metadata(meta, self._metadata_sink or cfg.metadata_file)
        except OSError as exc:
            logger.error("writing metadata failed: %s", exc)
            failure = failure or exc
        finally:
            self._close_streams()
            self.handle.result = meta
            self.handle._done.set()
        logger.info(
            "scan %s: sent=%d recv=%d rows=%d dups=%d",
            "aborted" if meta.aborted else "complete",
            self.counts.probes_sent, self.counts.responses_received,
            self.counts.rows_output, self.counts.duplicates_suppressed,
        )
        if failure is not None:
            raise ScanIOError(str(failure)) from failure
        return meta

    def _send_phase(self) -> None:
        cfg = self.config
        deadline = self._start + cfg.max_runtime if cfg.max_runtime is not None else None
        active = list(self.workers)
        while active and not self.handle.abort_requested:
            worker = min(active, key=lambda w: (w.pacer.next_send_time(), w.pacer.sent, w.index))
            due = worker.pacer.next_send_time()
            if deadline is not None and due >= deadline:
                self._receive_until(deadline)
                break
            self._receive_until(due)
            if self.handle.abort_requested:
                break
            self._send_batch(worker)
            if worker.finished:
                active.remove(worker)
                if self.max_targets is not None and self.counts.targets_emitted >= self.max_targets:
                    break


def run_scan(config: ScanConfig, **kwargs) -> ScanMetadata:
    """Run ``config`` to completion and return its metadata.

    Keyword arguments are passed to :class:`Scan` (``medium``, ``clock``,
    ``handle``, ``data_sink``, ``status_sink``, ``metadata_sink``).
    """
    return Scan(config, **kwargs).run()


def default_blocklist() -> str | None:
    return os.environ.get(BLOCKLIST_ENV) or None
