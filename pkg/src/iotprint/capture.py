"""Classic pcap parsing and bidirectional TCP session grouping.

Captures are read directly with ``struct``; only the classic pcap
container (24-byte global header, 16-byte record headers) over an
Ethernet link layer is supported, in either byte order. IPv4/TCP packets
come out as :class:`RawPacket`; everything else (UDP, ICMP, IPv6, ARP,
truncated frames) is skipped and tallied, never an error. 802.1Q VLAN
tags are unwrapped transparently.

Session grouping is bidirectional: both directions of a connection fall
into one :class:`SessionRecord`, keyed by the canonically ordered
(ip, port) endpoint pair. Packets are consumed in capture order with no
TCP reassembly, which mirrors how per-session splitter tools behave.
"""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import BinaryIO, ClassVar, Iterable, Iterator, Mapping

from .errors import IoFailure, MalformedGlobalHeader, TruncatedRecordHeader

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16
LINKTYPE_ETHERNET = 1

_MAGIC_USEC = 0xA1B2C3D4
_MAGIC_NSEC = 0xA1B23C4D  # nanosecond-resolution variant written by newer tcpdump

_ETHERTYPE_IPV4 = 0x0800
_ETHERTYPE_IPV6 = 0x86DD
_ETHERTYPE_VLAN = 0x8100
_ETHERTYPE_QINQ = 0x88A8

IPPROTO_TCP = 6
_SKIP_BY_PROTO = {17: "udp", 1: "icmp"}


@dataclass(frozen=True)
class RawPacket:
    """One IPv4/TCP packet as captured, header fields already decoded."""

    capture_index: int          # ordinal position among all records in the file
    timestamp: float            # seconds since epoch
    src_mac: str
    dst_mac: str
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    tcp_payload: bytes
    ip_protocol: int = IPPROTO_TCP


@dataclass(frozen=True, order=True)
class SessionKey:
    """Canonical bidirectional connection identity.

    The two (ip, port) endpoints are stored with the lexicographically
    smaller pair first, so both directions of a connection map to the
    same key.
    """

    endpoint_a: tuple[str, int]
    endpoint_b: tuple[str, int]

    protocol: ClassVar[str] = "tcp"

    @classmethod
    def of(cls, ip1: str, port1: int, ip2: str, port2: int) -> "SessionKey":
        a, b = (ip1, port1), (ip2, port2)
        if b < a:
            a, b = b, a
        return cls(a, b)

    @classmethod
    def from_packet(cls, pkt: RawPacket) -> "SessionKey":
        return cls.of(pkt.src_ip, pkt.src_port, pkt.dst_ip, pkt.dst_port)

    def __str__(self) -> str:
        return (f"{self.endpoint_a[0]}:{self.endpoint_a[1]}"
                f"<->{self.endpoint_b[0]}:{self.endpoint_b[1]}")


@dataclass
class SessionRecord:
    """All packets of one bidirectional TCP session, in capture order."""

    key: SessionKey
    initiator_mac: str
    packets: list[RawPacket] = field(default_factory=list)

    @property
    def initiator_endpoint(self) -> tuple[str, int]:
        first = self.packets[0]
        return (first.src_ip, first.src_port)

    @property
    def first_index(self) -> int:
        return self.packets[0].capture_index

    def __len__(self) -> int:
        return len(self.packets)


def _format_mac(raw: bytes) -> str:
    return ":".join(f"{b:02x}" for b in raw)


def _format_ipv4(raw: bytes) -> str:
    return ".".join(str(b) for b in raw)


def _be16(data: bytes, pos: int) -> int:
    return (data[pos] << 8) | data[pos + 1]


def _decode_frame(data: bytes):
    """Decode one Ethernet frame down to the TCP payload.

    Returns the decoded field tuple, or a short skip-reason string for
    anything that is not a whole IPv4/TCP packet.
    """
    if len(data) < 14:
        return "truncated"
    pos = 12  # offset of the ethertype field
    ethertype = _be16(data, pos)
    while ethertype in (_ETHERTYPE_VLAN, _ETHERTYPE_QINQ):
        pos += 4
        if len(data) < pos + 2:
            return "truncated"
        ethertype = _be16(data, pos)
    l3 = pos + 2

    if ethertype == _ETHERTYPE_IPV6:
        return "ipv6"
    if ethertype != _ETHERTYPE_IPV4:
        return "non_ip"

    if len(data) < l3 + 20:
        return "truncated"
    version_ihl = data[l3]
    if version_ihl >> 4 != 4:
        return "malformed"
    ihl = (version_ihl & 0x0F) * 4
    if ihl < 20:
        return "malformed"
    if len(data) < l3 + ihl:
        return "truncated"
    total_len = _be16(data, l3 + 2)
    if total_len < ihl:
        return "malformed"
    proto = data[l3 + 9]
    if proto != IPPROTO_TCP:
        return _SKIP_BY_PROTO.get(proto, "non_tcp")
    if _be16(data, l3 + 6) & 0x1FFF:
        return "fragment"  # non-first fragment carries no TCP header

    l4 = l3 + ihl
    if len(data) < l4 + 20:
        return "truncated"
    sport = _be16(data, l4)
    dport = _be16(data, l4 + 2)
    data_offset = (data[l4 + 12] >> 4) * 4
    if data_offset < 20:
        return "malformed"
    payload_len = total_len - ihl - data_offset
    if payload_len < 0:
        return "malformed"
    payload_start = l4 + data_offset
    if len(data) < payload_start + payload_len:
        return "truncated"  # snaplen cut the payload short
    # slice exactly payload_len: short frames are padded to 60 bytes on the wire
    payload = data[payload_start:payload_start + payload_len]
    return (data[6:12], data[0:6], data[l3 + 12:l3 + 16], data[l3 + 16:l3 + 20],
            sport, dport, payload)


def parse_pcap(stream: BinaryIO, skip_counts: Counter | None = None) -> Iterator[RawPacket]:
    """Yield one RawPacket per IPv4/TCP packet in a classic pcap stream.

    Skipped packets are tallied by reason into *skip_counts* when the
    caller supplies a Counter. Raises MalformedGlobalHeader when the
    stream is not a readable pcap file and TruncatedRecordHeader when it
    ends mid-record; both diagnostics name the byte offset.
    """
    head = stream.read(GLOBAL_HEADER_LEN)
    if len(head) < GLOBAL_HEADER_LEN:
        raise MalformedGlobalHeader(
            f"file ends after {len(head)} bytes at offset 0; "
            f"expected a {GLOBAL_HEADER_LEN}-byte pcap global header")
    magic_be = struct.unpack(">I", head[:4])[0]
    magic_le = struct.unpack("<I", head[:4])[0]
    if magic_be in (_MAGIC_USEC, _MAGIC_NSEC):
        endian, magic = ">", magic_be
    elif magic_le in (_MAGIC_USEC, _MAGIC_NSEC):
        endian, magic = "<", magic_le
    else:
        raise MalformedGlobalHeader(
            f"bad magic 0x{magic_be:08X} at offset 0; not a classic pcap file")
    _, _, _, _, _, network = struct.unpack(endian + "HHiIII", head[4:])
    if network != LINKTYPE_ETHERNET:
        raise MalformedGlobalHeader(
            f"unsupported link type {network} at offset 20; only Ethernet (1) is readable")
    frac_divisor = 1e9 if magic == _MAGIC_NSEC else 1e6

    record = struct.Struct(endian + "IIII")
    offset = GLOBAL_HEADER_LEN
    index = 0
    while True:
        header = stream.read(RECORD_HEADER_LEN)
        if not header:
            return
        if len(header) < RECORD_HEADER_LEN:
            raise TruncatedRecordHeader(
                f"record header at offset {offset} is {len(header)} bytes, "
                f"need {RECORD_HEADER_LEN}")
        ts_sec, ts_frac, incl_len, _orig_len = record.unpack(header)
        data = stream.read(incl_len)
        if len(data) < incl_len:
            raise TruncatedRecordHeader(
                f"record data at offset {offset + RECORD_HEADER_LEN} is "
                f"{len(data)} bytes, header promised {incl_len}")
        decoded = _decode_frame(data)
        if isinstance(decoded, str):
            if skip_counts is not None:
                skip_counts[decoded] += 1
        else:
            src_mac, dst_mac, src_ip, dst_ip, sport, dport, payload = decoded
            yield RawPacket(
                capture_index=index,
                timestamp=ts_sec + ts_frac / frac_divisor,
                src_mac=_format_mac(src_mac),
                dst_mac=_format_mac(dst_mac),
                src_ip=_format_ipv4(src_ip),
                dst_ip=_format_ipv4(dst_ip),
                src_port=sport,
                dst_port=dport,
                tcp_payload=payload,
            )
        offset += RECORD_HEADER_LEN + incl_len
        index += 1


def read_pcap(path) -> tuple[list[RawPacket], Counter]:
    """Parse a pcap file from disk; returns (packets, skip counters)."""
    counts: Counter = Counter()
    try:
        with open(path, "rb") as fh:
            packets = list(parse_pcap(fh, counts))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return packets, counts


def split_sessions(packets: Iterable[RawPacket]) -> dict[SessionKey, SessionRecord]:
    """Group TCP packets into bidirectional sessions.

    Every packet lands in exactly one SessionRecord; the record's
    initiator MAC is the source MAC of the session's earliest packet.
    The returned mapping preserves first-seen session order.
    """
    sessions: dict[SessionKey, SessionRecord] = {}
    for pkt in packets:
        key = SessionKey.from_packet(pkt)
        record = sessions.get(key)
        if record is None:
            record = SessionRecord(key=key, initiator_mac=pkt.src_mac)
            sessions[key] = record
        record.packets.append(pkt)
    return sessions


def group_by_mac(
    sessions: Iterable[SessionRecord] | Mapping[SessionKey, SessionRecord],
) -> dict[str, list[SessionRecord]]:
    """Partition sessions by initiator MAC, keeping first-packet order."""
    if isinstance(sessions, Mapping):
        sessions = sessions.values()
    buckets: dict[str, list[SessionRecord]] = {}
    for record in sessions:
        buckets.setdefault(record.initiator_mac, []).append(record)
    return buckets
