"""Probe frames and stateless response validation.

Every probe field that a reply echoes back (TCP sequence number and source
port, ICMP identifier/sequence/payload) is derived from a keyed MAC over
``(scanner ip, target ip, target port, probe kind)``. A reply is accepted only
when those echoed fields match the MAC recomputed from the reply itself, so no
per-probe state is kept.
"""

from __future__ import annotations

import hashlib
import ipaddress
import os
import random
import struct
from dataclasses import dataclass, field
from enum import Enum

ETH_HEADER_LEN = 14
IPV4_HEADER_LEN = 20
TCP_HEADER_LEN = 20
ICMP_HEADER_LEN = 8
ICMP_PAYLOAD_LEN = 8
MIN_ETH_FRAME = 60  # without FCS

ETHERTYPE_IPV4 = 0x0800
PROTO_ICMP = 1
PROTO_TCP = 6

TCP_FIN = 0x01
TCP_SYN = 0x02
TCP_RST = 0x04
TCP_ACK = 0x10

ICMP_ECHO_REPLY = 0
ICMP_UNREACH = 3
ICMP_ECHO_REQUEST = 8

MSS_VALUE = 1460
WINDOW_SCALE = 7
PROBE_TTL = 255
PROBE_WINDOW = 65535
DEFAULT_SOURCE_PORTS = (32768, 61000)


class ProbeKind(str, Enum):
    TCP_SYN = "tcp_syn"
    ICMP_ECHO = "icmp_echo"


_KIND_CODE = {ProbeKind.TCP_SYN: 6, ProbeKind.ICMP_ECHO: 1}


class OptionLayout(str, Enum):
    NONE = "none"
    MSS_ONLY = "mss"
    LINUX = "linux"
    WINDOWS = "windows"
    BSD = "bsd"


class RejectReason(str, Enum):
    MALFORMED = "malformed"
    WRONG_DEST = "wrong_dest"
    BAD_VALIDATION = "bad_validation"
    UNKNOWN_TYPE = "unknown_type"


@dataclass(frozen=True)
class IpIdPolicy:
    """``static=None`` draws a fresh IP ID per probe."""

    static: int | None = None

    def __post_init__(self) -> None:
        if self.static is not None and not 0 <= self.static <= 0xFFFF:
            raise ValueError("static IP ID must fit in 16 bits")

    @classmethod
    def parse(cls, text: str) -> "IpIdPolicy":
        if text == "random":
            return cls()
        kind, sep, value = text.partition(":")
        if kind != "static" or not sep:
            raise ValueError(f"expected 'random' or 'static:<0-65535>', got {text!r}")
        return cls(int(value))

    def __str__(self) -> str:
        return "random" if self.static is None else f"static:{self.static}"


def ipid_for_probe(policy: IpIdPolicy, rng: random.Random | None = None) -> int:
    if policy.static is not None:
        return policy.static
    return (rng or random).getrandbits(16)


def parse_mac(text: str) -> bytes:
    parts = text.replace("-", ":").split(":")
    if len(parts) != 6:
        raise ValueError(f"invalid MAC address {text!r}")
    return bytes(int(part, 16) for part in parts)


def format_mac(mac: bytes) -> str:
    return ":".join(f"{b:02x}" for b in mac)


@dataclass(frozen=True)
class ProbeTemplate:
    source_ip: int
    probe_kind: ProbeKind = ProbeKind.TCP_SYN
    source_mac: bytes = b"\x02\x00\x00\x00\x00\x01"
    gateway_mac: bytes = b"\x02\x00\x00\x00\x00\x02"
    source_port_range: tuple[int, int] = DEFAULT_SOURCE_PORTS
    option_layout: OptionLayout = OptionLayout.MSS_ONLY
    ip_id_policy: IpIdPolicy = field(default_factory=IpIdPolicy)

    def __post_init__(self) -> None:
        lo, hi = self.source_port_range
        if not 1024 <= lo <= hi <= 65535:
            raise ValueError(f"source port range {lo}-{hi} must lie within 1024-65535 with lo <= hi")
        if len(self.source_mac) != 6 or len(self.gateway_mac) != 6:
            raise ValueError("MAC addresses must be 6 bytes")
        object.__setattr__(self, "probe_kind", ProbeKind(self.probe_kind))
        object.__setattr__(self, "option_layout", OptionLayout(self.option_layout))


@dataclass(frozen=True)
class ValidationKey:
    secret: bytes

    def __post_init__(self) -> None:
        if len(self.secret) != 16:
            raise ValueError("validation key must be 16 bytes")

    @classmethod
    def from_seed(cls, seed: int) -> "ValidationKey":
        material = seed.to_bytes(16, "big", signed=False)
        return cls(hashlib.blake2b(material, digest_size=16, person=b"cyclescan-valid").digest())

    @classmethod
    def generate(cls) -> "ValidationKey":
        return cls(os.urandom(16))

    def __repr__(self) -> str:
        return "ValidationKey(<redacted>)"


def probe_mac(key: ValidationKey, src_ip: int, dst_ip: int, dst_port: int, kind: ProbeKind) -> bytes:
    msg = struct.pack("!IIHB", src_ip, dst_ip, dst_port, _KIND_CODE[kind])
    return hashlib.blake2b(msg, key=key.secret, digest_size=16).digest()


@dataclass(frozen=True)
class ProbeFields:
    """Values a probe to one target carries, derived from the MAC."""

    seq: int
    source_port: int
    tsval: int
    icmp_id: int
    icmp_seq: int
    icmp_payload: bytes


def probe_fields(
    template: ProbeTemplate, key: ValidationKey, dst_ip: int, dst_port: int
) -> ProbeFields:
    kind = template.probe_kind
    if kind is ProbeKind.ICMP_ECHO:
        dst_port = 0
    m = probe_mac(key, template.source_ip, dst_ip, dst_port, kind)
    lo, hi = template.source_port_range
    return ProbeFields(
        seq=int.from_bytes(m[0:4], "big"),
        source_port=lo + int.from_bytes(m[4:8], "big") % (hi - lo + 1),
        tsval=int.from_bytes(m[8:12], "big"),
        icmp_id=int.from_bytes(m[0:2], "big"),
        icmp_seq=int.from_bytes(m[2:4], "big"),
        icmp_payload=m[4:12],
    )


def tcp_option_bytes(layout: OptionLayout, tsval: int = 0) -> bytes:
    layout = OptionLayout(layout)
    mss = struct.pack("!BBH", 2, 4, MSS_VALUE)
    sack_ok = b"\x04\x02"
    timestamp = struct.pack("!BBII", 8, 10, tsval, 0)
    nop = b"\x01"
    wscale = struct.pack("!BBB", 3, 3, WINDOW_SCALE)
    if layout is OptionLayout.NONE:
        return b""
    if layout is OptionLayout.MSS_ONLY:
        return mss
    if layout is OptionLayout.LINUX:
        return mss + sack_ok + timestamp + nop + wscale
    if layout is OptionLayout.WINDOWS:
        return mss + nop + wscale + nop + nop + sack_ok
    return mss + nop + nop + timestamp


def internet_checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _ipv4_header(src: int, dst: int, proto: int, payload_len: int, ident: int, ttl: int) -> bytes:
    header = struct.pack(
        "!BBHHHBBHII", 0x45, 0, IPV4_HEADER_LEN + payload_len, ident, 0, ttl, proto, 0, src, dst
    )
    return header[:10] + struct.pack("!H", internet_checksum(header)) + header[12:]


def _tcp_segment(
    src: int, dst: int, sport: int, dport: int, seq: int, ack: int, flags: int, window: int, options: bytes
) -> bytes:
    offset = (TCP_HEADER_LEN + len(options)) // 4
    segment = struct.pack("!HHIIBBHHH", sport, dport, seq, ack, offset << 4, flags, window, 0, 0) + options
    pseudo = struct.pack("!IIBBH", src, dst, 0, PROTO_TCP, len(segment))
    checksum = internet_checksum(pseudo + segment)
    return segment[:16] + struct.pack("!H", checksum) + segment[18:]


def _icmp_message(icmp_type: int, code: int, rest: bytes, payload: bytes) -> bytes:
    message = struct.pack("!BBH", icmp_type, code, 0) + rest + payload
    return message[:2] + struct.pack("!H", internet_checksum(message)) + message[4:]


def _ethernet(dst_mac: bytes, src_mac: bytes) -> bytes:
    return dst_mac + src_mac + struct.pack("!H", ETHERTYPE_IPV4)


def build_probe(
    template: ProbeTemplate,
    target,
    key: ValidationKey,
    rng: random.Random | None = None,
) -> bytes:
    """Complete, unpadded Ethernet frame probing ``target.ip:target.port``."""
    fields = probe_fields(template, key, target.ip, target.port)
    ident = ipid_for_probe(template.ip_id_policy, rng)
    eth = _ethernet(template.gateway_mac, template.source_mac)
    if template.probe_kind is ProbeKind.ICMP_ECHO:
        payload = _icmp_message(
            ICMP_ECHO_REQUEST, 0, struct.pack("!HH", fields.icmp_id, fields.icmp_seq), fields.icmp_payload
        )
        proto = PROTO_ICMP
    else:
        payload = _tcp_segment(
            template.source_ip,
            target.ip,
            fields.source_port,
            target.port,
            fields.seq,
            0,
            TCP_SYN,
            PROBE_WINDOW,
            tcp_option_bytes(template.option_layout, fields.tsval),
        )
        proto = PROTO_TCP
    ip = _ipv4_header(template.source_ip, target.ip, proto, len(payload), ident, PROBE_TTL)
    return eth + ip + payload


def pad_frame(frame: bytes) -> bytes:
    if len(frame) < MIN_ETH_FRAME:
        return frame + bytes(MIN_ETH_FRAME - len(frame))
    return frame


# -- parsing ---------------------------------------------------------------


class MalformedFrame(ValueError):
    pass


@dataclass(frozen=True)
class IPv4Packet:
    src: int
    dst: int
    proto: int
    ttl: int
    ident: int
    header: bytes
    payload: bytes


def parse_ipv4(frame: bytes) -> IPv4Packet:
    """Parse Ethernet + IPv4; bounds-checked against truncation and bad lengths."""
    if len(frame) < ETH_HEADER_LEN + IPV4_HEADER_LEN:
        raise MalformedFrame("truncated frame")
    if frame[12:14] != b"\x08\x00":
        raise MalformedFrame("not IPv4")
    return _parse_ip_at(frame, ETH_HEADER_LEN, truncated_ok=False)


def _parse_ip_at(buf: bytes, off: int, truncated_ok: bool) -> IPv4Packet:
    if len(buf) - off < IPV4_HEADER_LEN:
        raise MalformedFrame("truncated IPv4 header")
    ver_ihl = buf[off]
    if ver_ihl >> 4 != 4:
        raise MalformedFrame("IP version is not 4")
    ihl = (ver_ihl & 0x0F) * 4
    total_len = int.from_bytes(buf[off + 2 : off + 4], "big")
    if ihl < IPV4_HEADER_LEN or total_len < ihl or len(buf) - off < ihl:
        raise MalformedFrame("bad IPv4 lengths")
    end = off + total_len
    if end > len(buf):
        if not truncated_ok:
            raise MalformedFrame("IPv4 total length exceeds frame")
        end = len(buf)
    ttl, proto = buf[off + 8], buf[off + 9]
    ident = int.from_bytes(buf[off + 4 : off + 6], "big")
    src = int.from_bytes(buf[off + 12 : off + 16], "big")
    dst = int.from_bytes(buf[off + 16 : off + 20], "big")
    return IPv4Packet(src, dst, proto, ttl, ident, buf[off : off + ihl], buf[off + ihl : end])


@dataclass(frozen=True)
class TcpHeader:
    sport: int
    dport: int
    seq: int
    ack: int
    flags: int
    window: int
    options: bytes


def parse_tcp(segment: bytes) -> TcpHeader:
    if len(segment) < TCP_HEADER_LEN:
        raise MalformedFrame("truncated TCP header")
    sport, dport, seq, ack, offset, flags, window = struct.unpack_from("!HHIIBBH", segment)
    hlen = (offset >> 4) * 4
    if hlen < TCP_HEADER_LEN or hlen > len(segment):
        raise MalformedFrame("bad TCP data offset")
    return TcpHeader(sport, dport, seq, ack, flags, window, segment[TCP_HEADER_LEN:hlen])


@dataclass(frozen=True)
class ProbeInfo:
    """A parsed probe, as seen by the network medium."""

    kind: ProbeKind
    src_mac: bytes
    dst_mac: bytes
    src_ip: int
    dst_ip: int
    sport: int
    dport: int
    seq: int
    icmp_id: int
    icmp_seq: int
    icmp_payload: bytes
    ip_packet: bytes


def parse_probe(frame: bytes) -> ProbeInfo:
    ip = parse_ipv4(frame)
    packet = frame[ETH_HEADER_LEN : ETH_HEADER_LEN + len(ip.header) + len(ip.payload)]
    dst_mac, src_mac = frame[0:6], frame[6:12]
    if ip.proto == PROTO_TCP:
        tcp = parse_tcp(ip.payload)
        if tcp.flags & (TCP_SYN | TCP_ACK) != TCP_SYN:
            raise MalformedFrame("TCP probe is not a bare SYN")
        return ProbeInfo(
            ProbeKind.TCP_SYN, src_mac, dst_mac, ip.src, ip.dst, tcp.sport, tcp.dport, tcp.seq, 0, 0, b"", packet
        )
    if ip.proto == PROTO_ICMP:
        if len(ip.payload) < ICMP_HEADER_LEN or ip.payload[0] != ICMP_ECHO_REQUEST:
            raise MalformedFrame("ICMP probe is not an echo request")
        icmp_id, icmp_seq = struct.unpack_from("!HH", ip.payload, 4)
        return ProbeInfo(
            ProbeKind.ICMP_ECHO, src_mac, dst_mac, ip.src, ip.dst, 0, 0, 0,
            icmp_id, icmp_seq, ip.payload[ICMP_HEADER_LEN:], packet,
        )
    raise MalformedFrame(f"unsupported probe protocol {ip.proto}")


# -- reply construction (the inverse of parse_probe) -------------------------


def build_tcp_reply(
    probe: ProbeInfo, flags: int, ttl: int = 64, isn: int = 0, ack: int | None = None, ident: int = 0
) -> bytes:
    if ack is None:
        ack = (probe.seq + 1) & 0xFFFFFFFF
    options = struct.pack("!BBH", 2, 4, MSS_VALUE) if flags & TCP_SYN else b""
    window = 65535 if flags & TCP_SYN else 0
    segment = _tcp_segment(probe.dst_ip, probe.src_ip, probe.dport, probe.sport, isn, ack, flags, window, options)
    ip = _ipv4_header(probe.dst_ip, probe.src_ip, PROTO_TCP, len(segment), ident, ttl)
    return _ethernet(probe.src_mac, probe.dst_mac) + ip + segment


def build_synack(probe: ProbeInfo, ttl: int = 64, isn: int = 0) -> bytes:
    return build_tcp_reply(probe, TCP_SYN | TCP_ACK, ttl, isn)


def build_rst(probe: ProbeInfo, ttl: int = 64) -> bytes:
    return build_tcp_reply(probe, TCP_RST | TCP_ACK, ttl)


def build_echo_reply(probe: ProbeInfo, ttl: int = 64) -> bytes:
    message = _icmp_message(ICMP_ECHO_REPLY, 0, struct.pack("!HH", probe.icmp_id, probe.icmp_seq), probe.icmp_payload)
    ip = _ipv4_header(probe.dst_ip, probe.src_ip, PROTO_ICMP, len(message), 0, ttl)
    return _ethernet(probe.src_mac, probe.dst_mac) + ip + message


def build_unreachable(probe: ProbeInfo, router_ip: int, code: int = 1, ttl: int = 64) -> bytes:
    quoted = probe.ip_packet[: IPV4_HEADER_LEN + 8]
    message = _icmp_message(ICMP_UNREACH, code, b"\x00\x00\x00\x00", quoted)
    ip = _ipv4_header(router_ip, probe.src_ip, PROTO_ICMP, len(message), 0, ttl)
    return _ethernet(probe.src_mac, probe.dst_mac) + ip + message


# -- validation --------------------------------------------------------------


class Classification(str, Enum):
    SYNACK = "synack"
    RST = "rst"
    ICMP_UNREACH = "icmp_unreach"
    ECHO_REPLY = "echoreply"
    OTHER = "other"


@dataclass(frozen=True)
class ResponseRecord:
    saddr: int
    sport: int
    target_ip: int
    target_port: int
    classification: Classification
    ttl: int
    timestamp: float = 0.0

    @property
    def success(self) -> bool:
        return self.classification in (Classification.SYNACK, Classification.ECHO_REPLY)


@dataclass(frozen=True)
class Rejected:
    reason: RejectReason


_REJECT = {reason: Rejected(reason) for reason in RejectReason}


def validate_response(
    frame: bytes, key: ValidationKey, template: ProbeTemplate, timestamp: float = 0.0
) -> ResponseRecord | Rejected:
    """Parse an arbitrary received frame and authenticate it against ``key``.

    Never raises on malformed input; the result is either a record or a
    :class:`Rejected` carrying the reason.
    """
    try:
        ip = parse_ipv4(frame)
    except MalformedFrame:
        if len(frame) >= ETH_HEADER_LEN and frame[12:14] != b"\x08\x00":
            return _REJECT[RejectReason.UNKNOWN_TYPE]
        return _REJECT[RejectReason.MALFORMED]
    if ip.dst != template.source_ip:
        return _REJECT[RejectReason.WRONG_DEST]
    try:
        if ip.proto == PROTO_TCP and template.probe_kind is ProbeKind.TCP_SYN:
            return _validate_tcp(ip, key, template, timestamp)
        if ip.proto == PROTO_ICMP:
            return _validate_icmp(ip, key, template, timestamp)
    except MalformedFrame:
        return _REJECT[RejectReason.MALFORMED]
    return _REJECT[RejectReason.UNKNOWN_TYPE]


def _validate_tcp(ip: IPv4Packet, key, template, timestamp) -> ResponseRecord | Rejected:
    tcp = parse_tcp(ip.payload)
    fields = probe_fields(template, key, ip.src, tcp.sport)
    if tcp.dport != fields.source_port:
        return _REJECT[RejectReason.BAD_VALIDATION]
    expected_ack = (fields.seq + 1) & 0xFFFFFFFF
    flags = tcp.flags
    if flags & TCP_RST:
        # stacks answer a SYN with ack = seq + 1; some leave ack = seq
        if tcp.ack != expected_ack and tcp.ack != fields.seq:
            return _REJECT[RejectReason.BAD_VALIDATION]
        classification = Classification.RST
    elif tcp.ack != expected_ack:
        return _REJECT[RejectReason.BAD_VALIDATION]
    elif flags & (TCP_SYN | TCP_ACK) == TCP_SYN | TCP_ACK:
        classification = Classification.SYNACK
    else:
        classification = Classification.OTHER
    return ResponseRecord(ip.src, tcp.sport, ip.src, tcp.sport, classification, ip.ttl, timestamp)


def _validate_icmp(ip: IPv4Packet, key, template, timestamp) -> ResponseRecord | Rejected:
    icmp = ip.payload
    if len(icmp) < ICMP_HEADER_LEN:
        raise MalformedFrame("truncated ICMP header")
    icmp_type = icmp[0]
    if icmp_type == ICMP_ECHO_REPLY and template.probe_kind is ProbeKind.ICMP_ECHO:
        fields = probe_fields(template, key, ip.src, 0)
        icmp_id, icmp_seq = struct.unpack_from("!HH", icmp, 4)
        payload = icmp[ICMP_HEADER_LEN : ICMP_HEADER_LEN + ICMP_PAYLOAD_LEN]
        if (icmp_id, icmp_seq, payload) != (fields.icmp_id, fields.icmp_seq, fields.icmp_payload):
            return _REJECT[RejectReason.BAD_VALIDATION]
        return ResponseRecord(ip.src, 0, ip.src, 0, Classification.ECHO_REPLY, ip.ttl, timestamp)
    if icmp_type != ICMP_UNREACH:
        return _REJECT[RejectReason.UNKNOWN_TYPE]
    inner = _parse_ip_at(icmp, ICMP_HEADER_LEN, truncated_ok=True)
    if inner.src != template.source_ip:
        return _REJECT[RejectReason.BAD_VALIDATION]
    quoted = inner.payload
    if len(quoted) < 8:
        raise MalformedFrame("ICMP quote shorter than 8 bytes")
    if template.probe_kind is ProbeKind.TCP_SYN:
        if inner.proto != PROTO_TCP:
            return _REJECT[RejectReason.BAD_VALIDATION]
        sport, dport, seq = struct.unpack_from("!HHI", quoted)
        fields = probe_fields(template, key, inner.dst, dport)
        if sport != fields.source_port or seq != fields.seq:
            return _REJECT[RejectReason.BAD_VALIDATION]
        target_port = dport
    else:
        if inner.proto != PROTO_ICMP or quoted[0] != ICMP_ECHO_REQUEST:
            return _REJECT[RejectReason.BAD_VALIDATION]
        icmp_id, icmp_seq = struct.unpack_from("!HH", quoted, 4)
        fields = probe_fields(template, key, inner.dst, 0)
        if (icmp_id, icmp_seq) != (fields.icmp_id, fields.icmp_seq):
            return _REJECT[RejectReason.BAD_VALIDATION]
        target_port = 0
    return ResponseRecord(ip.src, target_port, inner.dst, target_port, Classification.ICMP_UNREACH, ip.ttl, timestamp)


def describe_frame(frame: bytes) -> str:
    """Hex dump plus a field breakdown, used by dry runs."""
    lines = [frame.hex()]
    try:
        ip = parse_ipv4(frame)
    except MalformedFrame as exc:
        lines.append(f"  <unparseable: {exc}>")
        return "\n".join(lines)
    lines.append(
        f"  eth  dst={format_mac(frame[0:6])} src={format_mac(frame[6:12])} type=0x0800"
    )
    lines.append(
        f"  ip   src={ipaddress.IPv4Address(ip.src)} dst={ipaddress.IPv4Address(ip.dst)} "
        f"ttl={ip.ttl} id={ip.ident} proto={ip.proto} checksum=0x{int.from_bytes(ip.header[10:12], 'big'):04x}"
    )
    if ip.proto == PROTO_TCP:
        tcp = parse_tcp(ip.payload)
        lines.append(
            f"  tcp  sport={tcp.sport} dport={tcp.dport} seq={tcp.seq} ack={tcp.ack} "
            f"flags=0x{tcp.flags:02x} window={tcp.window} options={tcp.options.hex() or '-'}"
        )
    elif ip.proto == PROTO_ICMP and len(ip.payload) >= ICMP_HEADER_LEN:
        icmp_type, code, _, ident, seq = struct.unpack_from("!BBHHH", ip.payload)
        lines.append(f"  icmp type={icmp_type} code={code} id={ident} seq={seq} payload={ip.payload[8:].hex()}")
    return "\n".join(lines)
