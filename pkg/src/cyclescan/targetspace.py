"""Mapping group elements onto (IPv4 address, port) targets.

An element's low ``b`` bits select the port, the remaining high bits select
the n-th allowed address of the constraint tree. Elements that land outside
``allowed_count x len(ports)`` are skipped.
"""

from __future__ import annotations

import ipaddress
import math
import os
from dataclasses import dataclass
from typing import Iterable, NamedTuple

ADDRESS_SPACE = 2**32


class ConstraintParseError(ValueError):
    def __init__(self, source: str, lineno: int, line: str, reason: str):
        self.source = source
        self.lineno = lineno
        self.line = line
        super().__init__(f"{source}:{lineno}: {reason}: {line!r}")


class _Node:
    __slots__ = ("zero", "one", "count")

    def __init__(self, count: int, zero: "_Node | None" = None, one: "_Node | None" = None):
        self.count = count
        self.zero = zero
        self.one = one

    @property
    def is_leaf(self) -> bool:
        return self.zero is None


def _assign(node: _Node, depth: int, network: int, prefixlen: int, allowed: bool) -> _Node:
    size = 1 << (32 - depth)
    if depth == prefixlen:
        return _Node(size if allowed else 0)
    if node.is_leaf:
        if (node.count == size) == allowed:
            return node
        half = node.count // 2
        node = _Node(node.count, _Node(half), _Node(half))
    if (network >> (31 - depth)) & 1:
        node.one = _assign(node.one, depth + 1, network, prefixlen, allowed)
    else:
        node.zero = _assign(node.zero, depth + 1, network, prefixlen, allowed)
    zero, one = node.zero, node.one
    if zero.is_leaf and one.is_leaf and zero.count == one.count:
        return _Node(zero.count * 2)
    node.count = zero.count + one.count
    return node


class AddressConstraint:
    """Binary prefix tree over IPv4 with allowed-address counts per subtree."""

    def __init__(self, default_allowed: bool = False):
        self.root = _Node(ADDRESS_SPACE if default_allowed else 0)

    def set(self, network: ipaddress.IPv4Network, allowed: bool) -> None:
        self.root = _assign(self.root, 0, int(network.network_address), network.prefixlen, allowed)

    @property
    def allowed_count(self) -> int:
        return self.root.count

    def is_allowed(self, address: int) -> bool:
        node, depth = self.root, 0
        while not node.is_leaf:
            node = node.one if (address >> (31 - depth)) & 1 else node.zero
            depth += 1
        return node.count > 0

    def nth_allowed(self, index: int) -> int:
        """The ``index``-th allowed address (0-based, ascending) as an integer."""
        if not 0 <= index < self.root.count:
            raise IndexError(f"index {index} outside [0, {self.root.count})")
        node, depth, address = self.root, 0, 0
        while not node.is_leaf:
            if index < node.zero.count:
                node = node.zero
            else:
                index -= node.zero.count
                address |= 1 << (31 - depth)
                node = node.one
            depth += 1
        return address + index

    def rank(self, address: int) -> int:
        """Number of allowed addresses strictly below ``address``."""
        node, depth, below = self.root, 0, 0
        while not node.is_leaf:
            if (address >> (31 - depth)) & 1:
                below += node.zero.count
                node = node.one
            else:
                node = node.zero
            depth += 1
        if node.count:
            below += address & ((1 << (32 - depth)) - 1)
        return below


def nth_allowed(constraint: AddressConstraint, index: int) -> ipaddress.IPv4Address:
    return ipaddress.IPv4Address(constraint.nth_allowed(index))


def parse_cidr_lines(lines: Iterable[str], source: str = "<input>") -> list[ipaddress.IPv4Network]:
    """Parse one CIDR block or bare address per line; ``#`` starts a comment."""
    networks = []
    for lineno, raw in enumerate(lines, 1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        try:
            networks.append(ipaddress.IPv4Network(text, strict=False))
        except ValueError as exc:
            raise ConstraintParseError(source, lineno, raw.rstrip("\n"), str(exc)) from None
    return networks


def load_constraints(
    allowlist: Iterable[str] | None = None,
    blocklist: Iterable[str] = (),
    *,
    allow_source: str = "<allowlist>",
    block_source: str = "<blocklist>",
) -> AddressConstraint:
    """Build the constraint tree; ``allowlist=None`` allows all of IPv4.

    Blocklist entries are applied last so they override the allowlist.
    """
    allowed = parse_cidr_lines(allowlist, allow_source) if allowlist is not None else None
    blocked = parse_cidr_lines(blocklist, block_source)
    constraint = AddressConstraint(default_allowed=allowed is None)
    for network in allowed or ():
        constraint.set(network, True)
    for network in blocked:
        constraint.set(network, False)
    if constraint.allowed_count == 0:
        raise ValueError("no addresses left to scan after applying allowlist and blocklist")
    return constraint


def load_constraint_files(
    allowlist_path: str | os.PathLike | None = None,
    blocklist_path: str | os.PathLike | None = None,
    extra_allow: Iterable[str] = (),
) -> AddressConstraint:
    allow_lines = None
    if allowlist_path is not None:
        with open(allowlist_path) as fh:
            allow_lines = fh.readlines()
    extra_allow = list(extra_allow)
    if extra_allow:
        allow_lines = (allow_lines or []) + extra_allow
    block_lines: list[str] = []
    if blocklist_path is not None:
        with open(blocklist_path) as fh:
            block_lines = fh.readlines()
    return load_constraints(
        allow_lines,
        block_lines,
        allow_source=str(allowlist_path or "<targets>"),
        block_source=str(blocklist_path or "<blocklist>"),
    )


@dataclass(frozen=True)
class PortSet:
    ports: tuple[int, ...]

    def __post_init__(self) -> None:
        ports = tuple(sorted(set(int(p) for p in self.ports)))
        if not ports:
            raise ValueError("at least one port is required")
        if ports[0] < 0 or ports[-1] > 65535:
            raise ValueError("ports must be within [0, 65535]")
        object.__setattr__(self, "ports", ports)

    @property
    def bit_width(self) -> int:
        return max(1, math.ceil(math.log2(len(self.ports))))

    def __len__(self) -> int:
        return len(self.ports)

    def __getitem__(self, index: int) -> int:
        return self.ports[index]

    @classmethod
    def parse(cls, text: str) -> "PortSet":
        """Parse ``"80,443,8000-8100"`` style port lists."""
        ports: list[int] = []
        for part in text.split(","):
            part = part.strip()
            if not part:
                raise ValueError(f"empty entry in port list {text!r}")
            lo, sep, hi = part.partition("-")
            if sep:
                a, b = int(lo), int(hi)
                if a > b:
                    raise ValueError(f"descending port range {part!r}")
                ports.extend(range(a, b + 1))
            else:
                ports.append(int(part))
        return cls(tuple(ports))


class Target(NamedTuple):
    ip: int
    port: int
    element: int

    @property
    def address(self) -> ipaddress.IPv4Address:
        return ipaddress.IPv4Address(self.ip)


def decode_element(
    e: int, constraint: AddressConstraint, ports: PortSet, modulus: int | None = None
) -> Target | None:
    """Split ``e`` into port and address indexes; ``None`` means skip.

    With ``modulus`` given, the element ``p - 1`` stands for index 0, so the
    ``p - 1`` group elements cover indexes ``[0, p - 1)`` exactly once.
    """
    index = e % (modulus - 1) if modulus is not None else e
    b = ports.bit_width
    port_index = index & ((1 << b) - 1)
    ip_index = index >> b
    if port_index >= len(ports.ports) or ip_index >= constraint.allowed_count:
        return None
    return Target(constraint.nth_allowed(ip_index), ports.ports[port_index], e)


def space_size(constraint: AddressConstraint, ports: PortSet) -> int:
    """Number of indexes the group must cover: ``allowed_count * 2**b``."""
    return constraint.allowed_count << ports.bit_width


def parse_max_targets(text: str, total_targets: int) -> int:
    """``"1000"`` or ``"12.5%"`` of ``total_targets``."""
    text = text.strip()
    if text.endswith("%"):
        fraction = float(text[:-1])
        if not 0 <= fraction <= 100:
            raise ValueError(f"percentage out of range: {text!r}")
        return int(total_targets * fraction / 100)
    value = int(text)
    if value < 0:
        raise ValueError("max targets must be non-negative")
    return value
