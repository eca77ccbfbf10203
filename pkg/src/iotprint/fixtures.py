"""Synthetic pcap corpora for desk-scale testing.

Generates valid Ethernet/IPv4/TCP captures for a set of fake devices.
Each device stamps a fixed signature block at a device-specific byte
offset of every session payload and fills the rest with seeded random
bytes, so devices are separable by construction while sessions within a
device stay distinct (dedupe keeps them all). Same seed, same bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IoFailure

SIGNATURE_LEN = 48
SERVER_MAC = "02:ff:00:00:00:01"
SERVER_IP = "10.9.9.9"
SERVER_PORT = 443
_BASE_TIME = 1_700_000_000


@dataclass(frozen=True)
class FixtureDevice:
    """Recipe for one fake device: identity plus payload template."""

    name: str
    mac: str
    kind: str               # "iot" | "non-iot"
    sessions: int
    signature: bytes        # constant block present in every session
    signature_offset: int   # byte position of the block within the payload
    ip: str


def device_signature(index: int, length: int = SIGNATURE_LEN) -> bytes:
    """Deterministic, pairwise-distinct byte pattern for device *index*."""
    return bytes(((index + 1) * 73 + j * 37) % 256 for j in range(length))


def default_devices(count: int, sessions: int, iot: int) -> list[FixtureDevice]:
    """Build *count* fake devices, the last *iot* of them flagged IoT."""
    if not 0 <= iot <= count:
        raise ValueError(f"iot count {iot} out of range for {count} devices")
    devices = []
    non_iot = count - iot
    for i in range(count):
        if i < non_iot:
            name = f"workstation-{i + 1:02d}"
            kind = "non-iot"
        else:
            name = f"sensor-{i - non_iot + 1:02d}"
            kind = "iot"
        devices.append(FixtureDevice(
            name=name,
            mac=f"02:00:00:00:00:{i + 1:02x}",
            kind=kind,
            sessions=sessions,
            signature=device_signature(i),
            signature_offset=i * SIGNATURE_LEN,
            ip=f"10.1.{i + 1}.2",
        ))
    return devices


def load_device_spec(path) -> list[FixtureDevice]:
    """Read a device list from a JSON file.

    Each entry needs name/kind/sessions; mac, ip, pattern (hex string)
    and offset are optional and default to generated values.
    """
    try:
        entries = json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read fixture spec {path}: {exc}") from exc
    devices = []
    for i, entry in enumerate(entries):
        signature = (bytes.fromhex(entry["pattern"]) if "pattern" in entry
                     else device_signature(i))
        devices.append(FixtureDevice(
            name=entry["name"],
            mac=entry.get("mac", f"02:00:00:00:00:{i + 1:02x}"),
            kind=entry["kind"],
            sessions=int(entry["sessions"]),
            signature=signature,
            signature_offset=int(entry.get("offset", i * SIGNATURE_LEN)),
            ip=entry.get("ip", f"10.1.{i + 1}.2"),
        ))
    return devices


# frame building


def _mac_bytes(mac: str) -> bytes:
    return bytes(int(part, 16) for part in mac.split(":"))


def _ip_bytes(ip: str) -> bytes:
    return bytes(int(part) for part in ip.split("."))


def _ip_checksum(header: bytes) -> int:
    total = 0
    for i in range(0, len(header), 2):
        total += (header[i] << 8) | header[i + 1]
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def tcp_frame(src_mac: str, dst_mac: str, src_ip: str, dst_ip: str,
              src_port: int, dst_port: int, payload: bytes,
              seq: int = 1, ack: int = 1, vlan: int | None = None) -> bytes:
    """Assemble one Ethernet/IPv4/TCP frame (PSH+ACK, no TCP options)."""
    tcp = struct.pack(">HHIIBBHHH", src_port, dst_port, seq, ack,
                      5 << 4, 0x18, 0xFFFF, 0, 0) + payload
    total_len = 20 + len(tcp)
    ip_head = struct.pack(">BBHHHBBH4s4s", 0x45, 0, total_len, 0, 0, 64,
                          6, 0, _ip_bytes(src_ip), _ip_bytes(dst_ip))
    checksum = _ip_checksum(ip_head)
    ip = ip_head[:10] + struct.pack(">H", checksum) + ip_head[12:] + tcp
    if vlan is None:
        ether = _mac_bytes(dst_mac) + _mac_bytes(src_mac) + struct.pack(">H", 0x0800)
    else:
        ether = (_mac_bytes(dst_mac) + _mac_bytes(src_mac)
                 + struct.pack(">HHH", 0x8100, vlan & 0x0FFF, 0x0800))
    return ether + ip


def write_pcap(path, frames, byte_order: str = "<", nanosecond: bool = False) -> None:
    """Write (timestamp, frame) pairs as a classic pcap file.

    *byte_order* is a struct prefix ("<" or ">") selecting the header
    endianness; *nanosecond* selects the nanosecond-resolution magic.
    """
    magic = 0xA1B23C4D if nanosecond else 0xA1B2C3D4
    scale = 1_000_000_000 if nanosecond else 1_000_000
    try:
        with open(path, "wb") as fh:
            fh.write(struct.pack(byte_order + "IHHiIII", magic, 2, 4, 0, 0, 262144, 1))
            for ts, frame in frames:
                sec = int(ts)
                frac = int(round((ts - sec) * scale))
                if frac >= scale:
                    sec, frac = sec + 1, frac - scale
                fh.write(struct.pack(byte_order + "IIII", sec, frac,
                                     len(frame), len(frame)))
                fh.write(frame)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def session_payload(device: FixtureDevice, rng: np.random.Generator) -> bytes:
    """Client-side payload: zeros up to the offset, signature, random tail."""
    tail_len = int(rng.integers(64, 257))
    tail = rng.integers(0, 256, size=tail_len, dtype=np.uint8).tobytes()
    return bytes(device.signature_offset) + device.signature + tail


def device_session_frames(device: FixtureDevice, session_index: int,
                          rng: np.random.Generator) -> list[tuple[float, bytes]]:
    """Frames of one client/server exchange for *device*.

    The client speaks first so the signature block lands at a stable
    offset of the concatenated session payload; the server reply is
    random filler.
    """
    client_payload = session_payload(device, rng)
    reply = rng.integers(0, 256, size=32, dtype=np.uint8).tobytes()
    sport = 1024 + session_index
    base = _BASE_TIME + session_index * 1.0
    frames = []
    cut = len(client_payload) // 2
    seq = 1
    for chunk_no, chunk in enumerate((client_payload[:cut], client_payload[cut:])):
        frames.append((base + chunk_no * 0.001, tcp_frame(
            device.mac, SERVER_MAC, device.ip, SERVER_IP,
            sport, SERVER_PORT, chunk, seq=seq)))
        seq += len(chunk)
    frames.append((base + 0.002, tcp_frame(
        SERVER_MAC, device.mac, SERVER_IP, device.ip,
        SERVER_PORT, sport, reply, seq=1, ack=seq)))
    return frames


def slugify(name: str) -> str:
    slug = "".join(ch if ch.isalnum() else "-" for ch in name.lower())
    while "--" in slug:
        slug = slug.replace("--", "-")
    return slug.strip("-") or "device"


def write_fixture_corpus(out_dir, devices: list[FixtureDevice], seed: int) -> Path:
    """Write one pcap per device plus the MAC map; returns the map path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for dev_no, device in enumerate(devices):
        rng = np.random.default_rng([seed, dev_no])
        frames = []
        for s in range(device.sessions):
            frames.extend(device_session_frames(device, s, rng))
        write_pcap(out_dir / f"{slugify(device.name)}.pcap", frames)
    map_path = out_dir / "macs.tsv"
    lines = [f"{d.mac}\t{d.name}\t{d.kind}" for d in devices]
    map_path.write_text("\n".join(lines) + "\n")
    return map_path
