"""Tests for the synthetic pcap corpus generator.

The generator must produce structurally valid captures (checked against
an independent struct-level parse of the frames), stay byte-for-byte
deterministic for a given seed, and yield per-device payloads that are
separable by construction (distinct signature blocks at distinct offsets).
"""

import struct
from pathlib import Path

import numpy as np
import pytest

from iotprint.capture import group_by_mac, read_pcap, split_sessions
from iotprint.fixtures import (
    SERVER_IP,
    SERVER_MAC,
    SERVER_PORT,
    SIGNATURE_LEN,
    FixtureDevice,
    default_devices,
    device_session_frames,
    device_signature,
    load_device_spec,
    session_payload,
    slugify,
    tcp_frame,
    write_fixture_corpus,
    write_pcap,
)
from iotprint.transform import VECTOR_LEN, dedupe_and_filter, extract_payload, fix_length


def make_device(index: int = 0, sessions: int = 5, kind: str = "iot") -> FixtureDevice:
    return FixtureDevice(name=f"dev-{index}", mac=f"02:00:00:00:00:{index + 1:02x}",
                         kind=kind, sessions=sessions,
                         signature=device_signature(index),
                         signature_offset=index * SIGNATURE_LEN,
                         ip=f"10.1.{index + 1}.2")


class TestSignatures:
    def test_length_and_determinism(self):
        assert len(device_signature(0)) == SIGNATURE_LEN
        assert device_signature(3) == device_signature(3)
        assert len(device_signature(2, length=16)) == 16

    def test_pairwise_distinct(self):
        sigs = [device_signature(i) for i in range(16)]
        assert len(set(sigs)) == 16


class TestDefaultDevices:
    def test_kinds_and_names(self):
        devices = default_devices(4, 100, iot=3)
        assert [d.kind for d in devices] == ["non-iot", "iot", "iot", "iot"]
        assert devices[0].name == "workstation-01"
        assert [d.name for d in devices[1:]] == ["sensor-01", "sensor-02", "sensor-03"]
        assert all(d.sessions == 100 for d in devices)

    def test_identities_unique(self):
        devices = default_devices(6, 10, iot=4)
        assert len({d.mac for d in devices}) == 6
        assert len({d.ip for d in devices}) == 6
        assert len({d.signature for d in devices}) == 6
        assert len({d.signature_offset for d in devices}) == 6

    def test_iot_count_out_of_range(self):
        with pytest.raises(ValueError):
            default_devices(3, 10, iot=4)
        with pytest.raises(ValueError):
            default_devices(3, 10, iot=-1)


class TestTcpFrame:
    """Structural oracle: unpack the produced frame field by field."""

    def test_layout(self):
        payload = b"hello payload"
        frame = tcp_frame("02:00:00:00:00:01", "02:ff:00:00:00:01",
                          "10.1.1.2", "10.9.9.9", 40000, 443, payload,
                          seq=7, ack=9)
        assert frame[0:6] == bytes.fromhex("02ff00000001")      # dst MAC
        assert frame[6:12] == bytes.fromhex("020000000001")     # src MAC
        assert frame[12:14] == b"\x08\x00"                      # IPv4
        ip = frame[14:34]
        version_ihl, _, total_len = struct.unpack(">BBH", ip[:4])
        assert version_ihl == 0x45
        assert total_len == 20 + 20 + len(payload)
        assert ip[9] == 6                                       # TCP
        assert ip[12:16] == bytes([10, 1, 1, 2])
        assert ip[16:20] == bytes([10, 9, 9, 9])
        sport, dport, seq, ack = struct.unpack(">HHII", frame[34:46])
        assert (sport, dport, seq, ack) == (40000, 443, 7, 9)
        data_offset = frame[46] >> 4
        assert data_offset == 5                                 # no TCP options
        assert frame[34 + data_offset * 4:] == payload

    def test_ip_checksum_validates(self):
        frame = tcp_frame("02:00:00:00:00:01", "02:ff:00:00:00:01",
                          "10.1.1.2", "10.9.9.9", 40000, 443, b"x" * 50)
        header = frame[14:34]
        total = 0
        for i in range(0, 20, 2):
            total += (header[i] << 8) | header[i + 1]
        while total >> 16:
            total = (total & 0xFFFF) + (total >> 16)
        assert total == 0xFFFF  # one's-complement sum over a valid header

    def test_vlan_tag(self):
        frame = tcp_frame("02:00:00:00:00:01", "02:ff:00:00:00:01",
                          "10.1.1.2", "10.9.9.9", 40000, 443, b"p", vlan=42)
        assert frame[12:14] == b"\x81\x00"
        assert struct.unpack(">H", frame[14:16])[0] & 0x0FFF == 42
        assert frame[16:18] == b"\x08\x00"


class TestWritePcap:
    def test_round_trip_through_parser(self, tmp_path):
        device = make_device(0)
        frames = device_session_frames(device, 0, np.random.default_rng(3))
        path = tmp_path / "one.pcap"
        write_pcap(path, frames)
        packets, skips = read_pcap(path)
        assert len(packets) == 3
        assert sum(skips.values()) == 0
        assert packets[0].src_mac == device.mac
        assert packets[0].dst_mac == SERVER_MAC

    @pytest.mark.parametrize("byte_order,nanosecond",
                             [("<", False), (">", False), ("<", True), (">", True)])
    def test_header_variants_parse_identically(self, tmp_path, byte_order, nanosecond):
        frames = device_session_frames(make_device(1), 0, np.random.default_rng(3))
        base = tmp_path / "base.pcap"
        variant = tmp_path / "variant.pcap"
        write_pcap(base, frames)
        write_pcap(variant, frames, byte_order=byte_order, nanosecond=nanosecond)
        base_packets, _ = read_pcap(base)
        var_packets, _ = read_pcap(variant)
        assert [p.tcp_payload for p in var_packets] == \
            [p.tcp_payload for p in base_packets]
        assert [p.timestamp for p in var_packets] == \
            pytest.approx([p.timestamp for p in base_packets], abs=1e-6)


class TestSessionPayload:
    def test_signature_at_offset(self):
        device = make_device(3)
        payload = session_payload(device, np.random.default_rng(0))
        offset = device.signature_offset
        assert payload[:offset] == bytes(offset)
        assert payload[offset:offset + SIGNATURE_LEN] == device.signature

    def test_tail_length_bounds(self):
        device = make_device(0)
        rng = np.random.default_rng(5)
        for _ in range(200):
            tail = len(session_payload(device, rng)) - SIGNATURE_LEN
            assert 64 <= tail <= 256

    def test_sessions_distinct_within_device(self):
        device = make_device(2)
        rng = np.random.default_rng(9)
        payloads = [session_payload(device, rng) for _ in range(50)]
        assert len(set(payloads)) == 50


class TestDeviceSessionFrames:
    def test_concatenated_payload_recovers_signature(self):
        device = make_device(2, sessions=1)
        frames = device_session_frames(device, 0, np.random.default_rng(11))
        path_frames = [(ts, frame) for ts, frame in frames]
        assert len(path_frames) == 3
        # client chunks come first, then the 32-byte server reply
        record_payloads = [frame[54:] for _, frame in frames]
        client = record_payloads[0] + record_payloads[1]
        offset = device.signature_offset
        assert client[offset:offset + SIGNATURE_LEN] == device.signature
        assert len(record_payloads[2]) == 32

    def test_distinct_source_ports(self):
        device = make_device(0)
        rng = np.random.default_rng(1)
        sports = set()
        for s in range(10):
            frame = device_session_frames(device, s, rng)[0][1]
            sports.add(struct.unpack(">H", frame[34:36])[0])
        assert len(sports) == 10


class TestSlugify:
    @pytest.mark.parametrize("name,expected", [
        ("Amazon Echo", "amazon-echo"),
        ("Pix-Star photo frame", "pix-star-photo-frame"),
        ("a  b", "a-b"),
        ("--x--", "x"),
        ("***", "device"),
    ])
    def test_cases(self, name, expected):
        assert slugify(name) == expected


class TestWriteFixtureCorpus:
    def test_files_and_map(self, tmp_path):
        devices = default_devices(3, 4, iot=2)
        map_path = write_fixture_corpus(tmp_path / "corpus", devices, seed=5)
        assert map_path.name == "macs.tsv"
        lines = map_path.read_text().splitlines()
        assert lines[0] == "02:00:00:00:00:01\tworkstation-01\tnon-iot"
        assert lines[2] == "02:00:00:00:00:03\tsensor-02\tiot"
        for device in devices:
            assert (tmp_path / "corpus" / f"{slugify(device.name)}.pcap").exists()

    def test_byte_identical_for_same_seed(self, tmp_path):
        devices = default_devices(3, 6, iot=2)
        write_fixture_corpus(tmp_path / "a", devices, seed=21)
        write_fixture_corpus(tmp_path / "b", devices, seed=21)
        write_fixture_corpus(tmp_path / "c", devices, seed=22)
        for device in devices:
            name = f"{slugify(device.name)}.pcap"
            a = (tmp_path / "a" / name).read_bytes()
            b = (tmp_path / "b" / name).read_bytes()
            c = (tmp_path / "c" / name).read_bytes()
            assert a == b
            assert a != c

    def test_full_chain_to_separable_vectors(self, tmp_path):
        """pcap -> sessions -> payload vectors keeps devices distinguishable."""
        devices = default_devices(3, 10, iot=2)
        write_fixture_corpus(tmp_path, devices, seed=8)
        by_mac = {}
        for device in devices:
            packets, skips = read_pcap(tmp_path / f"{slugify(device.name)}.pcap")
            assert sum(skips.values()) == 0
            by_mac.update(group_by_mac(split_sessions(packets)))
        for index, device in enumerate(devices):
            records = by_mac[device.mac]
            assert len(records) == 10
            payloads = dedupe_and_filter([extract_payload(r) for r in records])
            assert len(payloads) == 10  # no duplicates by construction
            vectors = [fix_length(p) for p in payloads]
            lo = device.signature_offset
            hi = lo + SIGNATURE_LEN
            assert hi <= VECTOR_LEN
            for vector in vectors:
                assert vector[lo:hi] == device_signature(index)

    def test_initiator_mac_is_client(self, tmp_path):
        devices = default_devices(2, 3, iot=1)
        write_fixture_corpus(tmp_path, devices, seed=4)
        packets, _ = read_pcap(tmp_path / "sensor-01.pcap")
        grouped = group_by_mac(split_sessions(packets))
        assert set(grouped) == {devices[1].mac}  # server MAC never initiates


class TestLoadDeviceSpec:
    def test_explicit_and_defaulted_fields(self, tmp_path):
        spec = tmp_path / "devices.json"
        spec.write_text("""[
            {"name": "cam", "kind": "iot", "sessions": 7,
             "mac": "aa:bb:cc:dd:ee:ff", "ip": "192.168.0.9",
             "pattern": "deadbeef", "offset": 100},
            {"name": "hub", "kind": "non-iot", "sessions": 3}
        ]""")
        devices = load_device_spec(spec)
        assert len(devices) == 2
        cam, hub = devices
        assert cam.mac == "aa:bb:cc:dd:ee:ff"
        assert cam.ip == "192.168.0.9"
        assert cam.signature == b"\xde\xad\xbe\xef"
        assert cam.signature_offset == 100
        assert cam.sessions == 7
        assert hub.mac == "02:00:00:00:00:02"
        assert hub.signature == device_signature(1)
        assert hub.signature_offset == SIGNATURE_LEN

    def test_missing_file(self, tmp_path):
        from iotprint.errors import IoFailure
        with pytest.raises(IoFailure):
            load_device_spec(tmp_path / "absent.json")
