import ipaddress
import random
import struct
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from cyclescan import probes
from cyclescan.probes import (
    Classification,
    IpIdPolicy,
    OptionLayout,
    ProbeKind,
    ProbeTemplate,
    Rejected,
    RejectReason,
    ResponseRecord,
    ValidationKey,
    build_probe,
    internet_checksum,
    ipid_for_probe,
    parse_probe,
    tcp_option_bytes,
    validate_response,
)
from cyclescan.targetspace import Target
from oracles import checksum_oracle, strict_parse_tcp_frame

GOLDEN = Path(__file__).parent / "golden"
KEY = ValidationKey.from_seed(42)
SRC = int(ipaddress.IPv4Address("192.0.2.1"))
FRAME_LENGTHS = {"none": 54, "mss": 58, "windows": 66, "bsd": 70, "linux": 74}


def template(**kw):
    kw.setdefault("source_ip", SRC)
    return ProbeTemplate(**kw)


def target(ip="198.51.100.7", port=443):
    return Target(int(ipaddress.IPv4Address(ip)), port, 0)


# -- checksum ------------------------------------------------------------------


def test_checksum_examples():
    assert internet_checksum(bytes(20)) == 0xFFFF
    assert internet_checksum(bytes([0x00, 0x01, 0xF2, 0x03])) == 0x0DFB
    assert checksum_oracle(bytes([0x00, 0x01, 0xF2, 0x03])) == 0x0DFB


def test_checksum_self_verifies():
    header = bytearray.fromhex("45000073000040004011" "0000" "c0a80001c0a800c7")
    header[10:12] = internet_checksum(bytes(header)).to_bytes(2, "big")
    assert header[10:12] == b"\xb8\x61"  # widely published example header
    assert internet_checksum(bytes(header)) == 0


@given(st.binary(max_size=200))
def test_checksum_matches_oracle(data):
    assert internet_checksum(data) == checksum_oracle(data)


# -- options and layouts ---------------------------------------------------------


def test_option_bytes():
    assert tcp_option_bytes(OptionLayout.NONE) == b""
    assert tcp_option_bytes(OptionLayout.MSS_ONLY) == bytes([0x02, 0x04, 0x05, 0xB4])
    assert len(tcp_option_bytes(OptionLayout.LINUX)) == 20
    assert len(tcp_option_bytes(OptionLayout.WINDOWS)) == 12
    assert len(tcp_option_bytes(OptionLayout.BSD)) == 16
    for layout in OptionLayout:
        assert len(tcp_option_bytes(layout)) % 4 == 0


def test_option_orderings():
    linux = tcp_option_bytes(OptionLayout.LINUX, tsval=0x11223344)
    assert linux == bytes.fromhex("020405b4" "0402" "080a1122334400000000" "01" "030307")
    assert tcp_option_bytes(OptionLayout.WINDOWS) == bytes.fromhex("020405b4" "01" "030307" "0101" "0402")
    assert tcp_option_bytes(OptionLayout.BSD, 5) == bytes.fromhex("020405b4" "0101" "080a0000000500000000")


@pytest.mark.parametrize("layout", list(OptionLayout))
def test_frame_lengths(layout):
    frame = build_probe(template(option_layout=layout), target(), KEY, random.Random(1))
    assert len(frame) == FRAME_LENGTHS[layout.value]


def test_mss_frame_pads_to_minimum():
    frame = build_probe(template(option_layout=OptionLayout.MSS_ONLY), target(), KEY)
    assert len(frame) == 58
    assert len(probes.pad_frame(frame)) == 60
    assert len(probes.pad_frame(bytes(74))) == 74


# -- golden vectors --------------------------------------------------------------


def _golden_template(kind=ProbeKind.TCP_SYN, layout=OptionLayout.MSS_ONLY):
    return ProbeTemplate(
        source_ip=SRC,
        probe_kind=kind,
        source_mac=bytes.fromhex("020000000001"),
        gateway_mac=bytes.fromhex("020000000002"),
        source_port_range=(40000, 40999),
        option_layout=layout,
        ip_id_policy=IpIdPolicy(54321),
    )


@pytest.mark.parametrize("layout", list(OptionLayout))
def test_golden_tcp_frames(layout):
    expected = bytes.fromhex((GOLDEN / f"tcp_syn_{layout.value}.hex").read_text().strip())
    frame = build_probe(_golden_template(layout=layout), target(), KEY)
    assert frame == expected
    fields = strict_parse_tcp_frame(frame)
    assert fields["ip_checksum_ok"] and fields["tcp_checksum_ok"]
    assert fields["src"] == "192.0.2.1" and fields["dst"] == "198.51.100.7"
    assert fields["dport"] == 443 and 40000 <= fields["sport"] <= 40999
    assert fields["ip_id"] == 54321 and fields["ttl"] == 255 and fields["proto"] == 6
    assert fields["flags"] == 0x02 and fields["ack"] == 0
    assert fields["dst_mac"] == bytes.fromhex("020000000002")
    assert fields["options"][:4] == bytes.fromhex("020405b4") or layout is OptionLayout.NONE


def test_golden_icmp_frame():
    expected = bytes.fromhex((GOLDEN / "icmp_echo.hex").read_text().strip())
    frame = build_probe(_golden_template(kind=ProbeKind.ICMP_ECHO), target(), KEY)
    assert frame == expected
    assert len(frame) == 50
    assert checksum_oracle(frame[14:34]) == 0
    assert checksum_oracle(frame[34:]) == 0
    assert frame[34] == 8 and frame[23] == 1


# -- round trip ------------------------------------------------------------------


@settings(max_examples=300, deadline=None)
@given(
    st.integers(1, 2**32 - 1),
    st.integers(0, 65535),
    st.sampled_from(list(OptionLayout)),
    st.integers(0, 65535),
)
def test_round_trip_strict_parser(ip, port, layout, ipid):
    t = template(option_layout=layout, ip_id_policy=IpIdPolicy(ipid))
    frame = build_probe(t, Target(ip, port, 0), KEY)
    f = strict_parse_tcp_frame(frame)
    fields = probes.probe_fields(t, KEY, ip, port)
    assert f["dst"] == str(ipaddress.IPv4Address(ip)) and f["dport"] == port
    assert f["seq"] == fields.seq and f["sport"] == fields.source_port
    assert f["ip_id"] == ipid
    assert f["ip_checksum_ok"] and f["tcp_checksum_ok"]
    assert f["options"] == tcp_option_bytes(layout, fields.tsval)


def test_round_trip_many_targets():
    rng = random.Random(7)
    for layout in OptionLayout:
        t = template(option_layout=layout)
        for _ in range(2000):
            tgt = Target(rng.getrandbits(32), rng.getrandbits(16), 0)
            f = strict_parse_tcp_frame(build_probe(t, tgt, KEY, rng))
            assert f["ip_checksum_ok"] and f["tcp_checksum_ok"]
            assert (f["dport"], f["dst"]) == (tgt.port, str(ipaddress.IPv4Address(tgt.ip)))


def test_source_port_in_range_and_seq_keyed():
    t = template(source_port_range=(50000, 50003))
    ports = {probes.probe_fields(t, KEY, i, 80).source_port for i in range(200)}
    assert ports == {50000, 50001, 50002, 50003}
    other = ValidationKey.from_seed(43)
    assert probes.probe_fields(t, KEY, 5, 80).seq != probes.probe_fields(t, other, 5, 80).seq


def test_template_validation():
    with pytest.raises(ValueError):
        template(source_port_range=(1000, 2000))
    with pytest.raises(ValueError):
        template(source_port_range=(3000, 2000))
    with pytest.raises(ValueError):
        ValidationKey(b"short")
    assert "redacted" in repr(KEY)


# -- IP ID -------------------------------------------------------------------


def test_ipid_policies():
    assert ipid_for_probe(IpIdPolicy(54321)) == 54321
    assert IpIdPolicy() == ProbeTemplate(source_ip=1).ip_id_policy
    assert ProbeTemplate(source_ip=1).ip_id_policy.static is None
    rng = random.Random(0)
    draws = [ipid_for_probe(IpIdPolicy(), rng) for _ in range(10**4)]
    assert len(set(draws)) > 10**3
    assert IpIdPolicy.parse("static:54321") == IpIdPolicy(54321)
    assert IpIdPolicy.parse("random") == IpIdPolicy()
    assert str(IpIdPolicy(7)) == "static:7"
    for bad in ("static", "static:70000", "fixed:1"):
        with pytest.raises(ValueError):
            IpIdPolicy.parse(bad)


# -- validation ----------------------------------------------------------------


def _probe_and_info(t=None, tgt=None):
    t = t or template()
    frame = build_probe(t, tgt or target(), KEY)
    return t, parse_probe(frame)


def test_synack_round_trip():
    t, info = _probe_and_info()
    rec = validate_response(probes.pad_frame(probes.build_synack(info, ttl=55)), KEY, t, 12.5)
    assert isinstance(rec, ResponseRecord)
    assert rec.classification is Classification.SYNACK
    assert (rec.saddr, rec.sport, rec.ttl, rec.timestamp) == (target().ip, 443, 55, 12.5)
    assert rec.success


def test_rst_accepts_seq_and_seq_plus_one():
    t, info = _probe_and_info()
    assert validate_response(probes.build_rst(info), KEY, t).classification is Classification.RST
    bare = probes.build_tcp_reply(info, probes.TCP_RST, ack=info.seq)
    assert validate_response(bare, KEY, t).classification is Classification.RST
    off = probes.build_tcp_reply(info, probes.TCP_RST, ack=info.seq + 2)
    assert validate_response(off, KEY, t) == Rejected(RejectReason.BAD_VALIDATION)


def test_ack_only_is_other():
    t, info = _probe_and_info()
    frame = probes.build_tcp_reply(info, probes.TCP_ACK)
    assert validate_response(frame, KEY, t).classification is Classification.OTHER


def test_every_ack_bit_flip_rejected():
    t, info = _probe_and_info()
    frame = bytearray(probes.build_synack(info))
    ack_off = 14 + 20 + 8
    for bit in range(32):
        forged = bytearray(frame)
        forged[ack_off + bit // 8] ^= 0x80 >> (bit % 8)
        assert validate_response(bytes(forged), KEY, t) == Rejected(RejectReason.BAD_VALIDATION)


def test_wrong_dest_port_and_dest_ip():
    t, info = _probe_and_info()
    frame = bytearray(probes.build_synack(info))
    frame[36] ^= 1  # tcp dport
    assert validate_response(bytes(frame), KEY, t).reason is RejectReason.BAD_VALIDATION
    frame = bytearray(probes.build_synack(info))
    frame[33] ^= 1  # ip dst
    assert validate_response(bytes(frame), KEY, t).reason is RejectReason.WRONG_DEST


def test_wrong_key_rejected():
    t, info = _probe_and_info()
    rec = validate_response(probes.build_synack(info), ValidationKey.from_seed(1), t)
    assert rec == Rejected(RejectReason.BAD_VALIDATION)


def test_truncated_and_odd_frames():
    t, info = _probe_and_info()
    good = probes.build_synack(info)
    assert validate_response(good[:13], KEY, t).reason is RejectReason.MALFORMED
    assert validate_response(good[:40], KEY, t).reason is RejectReason.MALFORMED
    assert validate_response(b"", KEY, t).reason is RejectReason.MALFORMED
    arp = bytearray(good)
    arp[12:14] = b"\x08\x06"
    assert validate_response(bytes(arp), KEY, t).reason is RejectReason.UNKNOWN_TYPE
    udp = bytearray(good)
    udp[23] = 17
    assert validate_response(bytes(udp), KEY, t).reason is RejectReason.UNKNOWN_TYPE
    bad_off = bytearray(good)
    bad_off[14 + 20 + 12] = 0xF0  # data offset beyond segment
    assert validate_response(bytes(bad_off), KEY, t).reason is RejectReason.MALFORMED


def test_icmp_unreachable_for_tcp_probe():
    t, info = _probe_and_info()
    router = int(ipaddress.IPv4Address("203.0.113.1"))
    rec = validate_response(probes.build_unreachable(info, router), KEY, t)
    assert rec.classification is Classification.ICMP_UNREACH
    assert (rec.saddr, rec.target_ip, rec.target_port) == (router, target().ip, 443)
    frame = bytearray(probes.build_unreachable(info, router))
    frame[14 + 20 + 8 + 20 + 4] ^= 0xFF  # quoted sequence number
    assert validate_response(bytes(frame), KEY, t).reason is RejectReason.BAD_VALIDATION


def test_icmp_echo_round_trip():
    t = template(probe_kind=ProbeKind.ICMP_ECHO)
    _, info = _probe_and_info(t)
    rec = validate_response(probes.pad_frame(probes.build_echo_reply(info, 60)), KEY, t)
    assert rec.classification is Classification.ECHO_REPLY and rec.ttl == 60
    frame = bytearray(probes.build_echo_reply(info))
    frame[-1] ^= 1
    assert validate_response(bytes(frame), KEY, t).reason is RejectReason.BAD_VALIDATION
    rec = validate_response(probes.build_unreachable(info, 99), KEY, t)
    assert rec.classification is Classification.ICMP_UNREACH


@settings(max_examples=2000, deadline=None)
@given(st.binary(max_size=120))
def test_validate_total_on_random_bytes(data):
    result = validate_response(data, KEY, template())
    assert isinstance(result, (Rejected, ResponseRecord))


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 59), st.integers(0, 255), st.integers(0, 80))
def test_validate_total_on_mutated_replies(pos, value, cut):
    t, info = _probe_and_info()
    frame = bytearray(probes.pad_frame(probes.build_synack(info)))
    frame[pos] = value
    result = validate_response(bytes(frame[: len(frame) - cut]), KEY, t)
    assert isinstance(result, (Rejected, ResponseRecord))


def test_describe_frame():
    frame = build_probe(_golden_template(), target(), KEY)
    text = probes.describe_frame(frame)
    assert text.splitlines()[0] == frame.hex()
    assert "dport=443" in text and "id=54321" in text
    assert "unparseable" in probes.describe_frame(b"\x00" * 10)


def test_parse_probe_rejects_non_syn():
    t, info = _probe_and_info()
    with pytest.raises(probes.MalformedFrame):
        parse_probe(probes.build_synack(info))
    with pytest.raises(probes.MalformedFrame):
        parse_probe(b"\x00" * 30)


def test_mac_helpers():
    assert probes.parse_mac("aa:bb:cc:dd:ee:ff") == bytes.fromhex("aabbccddeeff")
    assert probes.format_mac(bytes.fromhex("aabbccddeeff")) == "aa:bb:cc:dd:ee:ff"
    with pytest.raises(ValueError):
        probes.parse_mac("aa:bb")
    assert struct.calcsize("!HHIIBBHHH") == 20
