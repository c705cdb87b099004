"""Command-line wrapper around :func:`cyclescan.engine.run_scan`.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 130 aborted.
"""

from __future__ import annotations

import argparse
import signal
import sys

from cyclescan import __version__
from cyclescan.engine import ConfigError, Scan, ScanConfig, ScanHandle, ScanIOError, default_blocklist
from cyclescan.streams import VERBOSITY_LEVELS, configure_logging, logger

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_ABORTED = 130


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="cyclescan",
        description="Stateless single-packet scanner over a pseudorandom permutation of (IP, port) targets.",
    )
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("subnets", nargs="*", help="CIDR blocks or addresses to scan (default: all of IPv4)")

    g = p.add_argument_group("targets")
    g.add_argument("-p", "--target-ports", default="80", help='ports to probe, e.g. "80,443,8000-8100"')
    g.add_argument("-w", "--allowlist-file", help="file of CIDR blocks to scan")
    g.add_argument("-b", "--blocklist-file", help="file of CIDR blocks to exclude (default: $CYCLESCAN_BLOCKLIST)")
    g.add_argument("-n", "--max-targets", help='stop after N targets, absolute or percentage ("12.5%%")')

    g = p.add_argument_group("rate and topology")
    g.add_argument("-r", "--rate", type=float, help="send rate in packets per second (0 = unlimited)")
    g.add_argument("-B", "--bandwidth", help="send bandwidth in bits per second, K/M/G suffixes allowed")
    g.add_argument("--batch", type=int, default=64, dest="batch_size", help="probes sent between pacing checks")
    g.add_argument("--shards", type=int, default=1, help="total number of shards")
    g.add_argument("--shard", type=int, default=0, help="index of the shard this process scans")
    g.add_argument("-T", "--sender-threads", type=int, default=1, help="send workers (subshards) per shard")
    g.add_argument("--seed", type=int, help="permutation and validation seed (default: random, always recorded)")
    g.add_argument("-c", "--cooldown-time", type=float, default=8.0, dest="cooldown_s",
                   help="seconds to keep receiving after the last probe")
    g.add_argument("-t", "--max-runtime", type=float, help="stop sending after this many seconds")
    g.add_argument("--dedup-window", type=int, default=10**6, help="responses remembered for deduplication (0 disables)")

    g = p.add_argument_group("probes")
    g.add_argument("--probe-module", choices=["tcp_syn", "icmp_echo"], default="tcp_syn")
    g.add_argument("--tcp-options", choices=["none", "mss", "linux", "windows", "bsd"], default="mss",
                   help="TCP option layout of SYN probes")
    g.add_argument("--ip-id", default="random", help='"random" or "static:<0-65535>"')
    g.add_argument("-s", "--source-port", default="32768-61000", help="source port or range lo-hi")
    g.add_argument("-S", "--source-ip", help="source address of probes")
    g.add_argument("-G", "--gateway-mac", default="02:00:00:00:00:02", help="destination MAC of probe frames")
    g.add_argument("--source-mac", default="02:00:00:00:00:01", help="source MAC of probe frames")
    g.add_argument("-i", "--interface", help="network interface for live scans")
    g.add_argument("--dryrun", action="store_true", dest="dry_run", help="print probes instead of sending them")
    g.add_argument("--simulate", metavar="PROFILE.json", help="scan a simulated network described by a profile")

    g = p.add_argument_group("output")
    g.add_argument("-o", "--output-file", help="data output file (default: stdout)")
    g.add_argument("-O", "--output-module", choices=["text", "csv", "json"], default="csv")
    g.add_argument("--log-file", help="write logs here instead of stderr")
    g.add_argument("--log-level", choices=VERBOSITY_LEVELS, help="log level (default: info)")
    g.add_argument("--verbosity", type=int, choices=range(6), help="numeric log level, 0 (fatal) to 5 (trace)")
    g.add_argument("--status-updates-file", help="write one status line per second here")
    g.add_argument("--metadata-file", help="write end-of-scan metadata JSON here (default: log channel)")
    g.add_argument("-q", "--quiet", action="store_true", help="no status updates")
    return p


def config_from_args(args: argparse.Namespace) -> ScanConfig:
    level = args.log_level or (VERBOSITY_LEVELS[args.verbosity] if args.verbosity is not None else "info")
    return ScanConfig(
        targets=list(args.subnets),
        allowlist_file=args.allowlist_file,
        blocklist_file=args.blocklist_file or default_blocklist(),
        target_ports=args.target_ports,
        rate=args.rate,
        bandwidth=args.bandwidth,
        batch_size=args.batch_size,
        shards=args.shards,
        shard=args.shard,
        sender_threads=args.sender_threads,
        seed=args.seed,
        dedup_window=args.dedup_window,
        probe_module=args.probe_module,
        tcp_options=args.tcp_options,
        ip_id=args.ip_id,
        source_port=args.source_port,
        source_ip=args.source_ip,
        source_mac=args.source_mac,
        gateway_mac=args.gateway_mac,
        interface=args.interface,
        output_file=args.output_file,
        output_module=args.output_module,
        log_file=args.log_file,
        log_level=level,
        status_updates_file=args.status_updates_file,
        metadata_file=args.metadata_file,
        quiet=args.quiet,
        cooldown_s=args.cooldown_s,
        max_targets=args.max_targets,
        max_runtime=args.max_runtime,
        dry_run=args.dry_run,
        simulate=args.simulate,
    )


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    config = config_from_args(args)
    saved = (list(logger.handlers), logger.level, logger.propagate)
    handler = configure_logging(config.log_level, config.log_file)
    try:
        try:
            config.validate()
        except ConfigError as exc:
            parser.print_usage(sys.stderr)
            logger.error("%s", exc)
            return EXIT_USAGE
        handle = ScanHandle()
        try:
            scan = Scan(config, handle=handle)
        except ConfigError as exc:
            logger.error("%s", exc)
            return EXIT_USAGE
        except OSError as exc:
            logger.error("cannot start scan: %s", exc)
            return EXIT_ERROR
        previous = signal.signal(signal.SIGINT, lambda *_: handle.abort())
        try:
            meta = scan.run()
        except ScanIOError:
            return EXIT_ERROR
        finally:
            signal.signal(signal.SIGINT, previous)
        return EXIT_ABORTED if meta.aborted else EXIT_OK
    finally:
        handler.close()
        logger.handlers[:] = saved[0]
        logger.setLevel(saved[1])
        logger.propagate = saved[2]
