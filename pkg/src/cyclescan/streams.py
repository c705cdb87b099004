"""The four output streams: data rows, logs, status updates, scan metadata.

Data goes only to the data sink. Status lines and metadata go to their own
files or, by default, to the log channel, never to the data sink.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import IO, Any

logger = logging.getLogger("cyclescan")

TRACE = 5
logging.addLevelName(TRACE, "TRACE")
logging.addLevelName(logging.CRITICAL, "FATAL")
logging.addLevelName(logging.WARNING, "WARN")

LOG_LEVELS = {
    "fatal": logging.CRITICAL,
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
    "trace": TRACE,
}
VERBOSITY_LEVELS = ["fatal", "error", "warn", "info", "debug", "trace"]

DATA_FIELDS = ("saddr", "sport", "classification", "ttl", "timestamp")


class OutputFormat(str, Enum):
    TEXT = "text"
    CSV = "csv"
    JSON = "json"


def rfc3339(epoch: float) -> str:
    dt = datetime.fromtimestamp(epoch, tz=timezone.utc)
    return dt.isoformat(timespec="microseconds").replace("+00:00", "Z")


@dataclass(frozen=True)
class DataRow:
    saddr: str
    sport: int
    classification: str
    ttl: int
    timestamp: str


class RowWriter:
    """Writes one line per row, flushing after each; CSV gets a single header."""

    def __init__(
        self,
        sink: IO[str],
        fmt: OutputFormat | str = OutputFormat.CSV,
        with_port: bool = True,
        header: bool = True,
    ):
        self.sink = sink
        self.format = OutputFormat(fmt)
        self.with_port = with_port
        self.rows = 0
        self._csv = None
        if self.format is OutputFormat.CSV:
            self._csv = csv.writer(sink, lineterminator="\n")
            if header:
                self._csv.writerow(DATA_FIELDS)
                sink.flush()

    def write_row(self, row: DataRow) -> None:
        if self.format is OutputFormat.CSV:
            self._csv.writerow([row.saddr, row.sport, row.classification, row.ttl, row.timestamp])
        elif self.format is OutputFormat.JSON:
            self.sink.write(json.dumps(asdict(row), separators=(",", ":")) + "\n")
        elif self.with_port:
            self.sink.write(f"{row.saddr}:{row.sport}\n")
        else:
            self.sink.write(f"{row.saddr}\n")
        self.sink.flush()
        self.rows += 1

    def write_raw(self, text: str) -> None:
        self.sink.write(text if text.endswith("\n") else text + "\n")
        self.sink.flush()


def write_row(sink: IO[str], row: DataRow, fmt: OutputFormat | str, *, header: bool = False) -> None:
    """One-shot variant of :meth:`RowWriter.write_row` for a single record."""
    RowWriter(sink, fmt, header=header).write_row(row)


@dataclass(frozen=True)
class StatusUpdate:
    elapsed_s: float
    sent: int
    sent_per_s: float
    recv: int
    recv_per_s: float
    drops: int
    hitrate_pct: float
    targets_remaining: int
    eta_s: float

    def to_line(self) -> str:
        return json.dumps({"type": "status", **asdict(self)}, separators=(",", ":"))


class StatusChannel:
    """Status lines go to a dedicated file, or the log channel, or nowhere."""

    def __init__(self, sink: IO[str] | None):
        self.sink = sink
        self.failed = False

    def emit_status(self, update: StatusUpdate) -> None:
        if self.sink is None or self.failed:
            return
        try:
            self.sink.write(update.to_line() + "\n")
            self.sink.flush()
        except OSError as exc:
            self.failed = True
            logger.warning("status channel failed, disabling status updates: %s", exc)


def emit_status(channel: StatusChannel, update: StatusUpdate) -> None:
    channel.emit_status(update)


def _reject_counts() -> dict[str, int]:
    return {"malformed": 0, "wrong_dest": 0, "bad_validation": 0, "unknown_type": 0}


@dataclass
class ScanCounts:
    targets_emitted: int = 0
    skipped_elements: int = 0
    probes_sent: int = 0
    responses_received: int = 0
    validation_rejects: dict[str, int] = field(default_factory=_reject_counts)
    duplicates_suppressed: int = 0
    rows_output: int = 0
    send_failures: int = 0

    @property
    def rejects(self) -> int:
        return sum(self.validation_rejects.values())

    def identity_holds(self) -> bool:
        return self.rows_output == self.responses_received - self.rejects - self.duplicates_suppressed


@dataclass
class ScanMetadata:
    tool_version: str
    config: dict[str, Any]
    seed: int
    generator: int
    group_p: int
    shard: dict[str, int]
    start_time: str = ""
    end_time: str = ""
    aborted: bool = False
    counts: ScanCounts = field(default_factory=ScanCounts)
    environment: dict[str, str] = field(default_factory=dict)
    allowed_addresses: int = 0
    excluded_addresses: int = 0
    ports: list[int] = field(default_factory=list)
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["counts"]["validation_rejects"] = dict(self.counts.validation_rejects)
        return doc


def finalize_metadata(meta: ScanMetadata, sink: IO[str] | str | None) -> None:
    """Serialize ``meta`` as one JSON document to a path, stream, or the log."""
    text = json.dumps(meta.to_dict(), indent=2, sort_keys=True)
    if sink is None:
        logger.info("scan metadata: %s", json.dumps(meta.to_dict(), sort_keys=True))
    elif isinstance(sink, str):
        with open(sink, "w") as fh:
            fh.write(text + "\n")
    else:
        sink.write(text + "\n")
        sink.flush()


class _Formatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        ts = datetime.fromtimestamp(record.created, tz=timezone.utc).strftime("%b %d %H:%M:%S.%f")[:-3]
        return f"{ts} [{record.levelname}] {record.name}: {record.getMessage()}"


def configure_logging(level: str = "info", log_file: str | None = None, stream: IO[str] | None = None) -> logging.Handler:
    """Attach a single handler to the package logger; returns it for removal."""
    handler: logging.Handler
    if log_file:
        handler = logging.FileHandler(log_file)
    else:
        handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(_Formatter())
    logger.handlers[:] = [handler]
    logger.setLevel(LOG_LEVELS[level])
    logger.propagate = False
    return handler
