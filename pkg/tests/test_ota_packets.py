import binascii

import pytest
from hypothesis import given
from hypothesis import strategies as st

from iotphy.ota.packets import Kind, Manifest, Packet, PacketError, crc16, encoded_length


def ref_crc16_ccitt(data: bytes) -> int:
    reg = 0xFFFF
    for byte in data:
        reg ^= byte << 8
        for _ in range(8):
            reg = ((reg << 1) ^ 0x1021) if reg & 0x8000 else reg << 1
            reg &= 0xFFFF
    return reg


def test_crc16_matches_bitwise_reference():
    for data in (b"", b"123456789", bytes(range(256))):
        assert crc16(data) == ref_crc16_ccitt(data)
    assert crc16(b"123456789") == 0x29B1  # CRC-16/CCITT-FALSE check value


SAMPLES = [
    Packet(Kind.REQUEST, device_ids=(1, 7, 300), wake_time_ms=100),
    Packet(Kind.READY, device_ids=(7,)),
    Packet(Kind.DATA, seq=1649, payload=bytes(range(60))),
    Packet(Kind.DATA, seq=0, payload=b""),
    Packet(Kind.ACK, seq=12),
    Packet(Kind.END, seq=20, manifest=Manifest(579_000, (100, 200, 300), 0)),
]


@pytest.mark.parametrize("pkt", SAMPLES, ids=lambda p: p.kind.name)
def test_roundtrip(pkt):
    wire = pkt.encode()
    assert Packet.decode(wire) == pkt
    n_blocks = len(pkt.manifest.block_lengths) if pkt.manifest else 0
    assert len(wire) == encoded_length(pkt.kind, len(pkt.payload), len(pkt.device_ids), n_blocks)


def test_sizes():
    assert len(Packet(Kind.DATA, seq=3, payload=bytes(60)).encode()) == 65
    assert len(Packet(Kind.ACK, seq=3).encode()) == 5


@given(st.binary(max_size=60), st.integers(0, 0xFFFF))
def test_data_roundtrip(payload, seq):
    p = Packet(Kind.DATA, seq=seq, payload=payload)
    assert Packet.decode(p.encode()) == p


def test_payload_limit():
    with pytest.raises(PacketError):
        Packet(Kind.DATA, payload=bytes(61)).encode()


def test_crc_detects_corruption():
    wire = bytearray(Packet(Kind.DATA, seq=5, payload=b"abc").encode())
    wire[3] ^= 0x01
    with pytest.raises(PacketError, match="CRC"):
        Packet.decode(bytes(wire))


def test_unknown_kind_and_truncation():
    frame = b"\x09\x00"
    with pytest.raises(PacketError):
        Packet.decode(frame + binascii.crc_hqx(frame, 0xFFFF).to_bytes(2, "big"))
    with pytest.raises(PacketError):
        Packet.decode(b"\x01")


def test_malformed_body():
    frame = bytes([Kind.ACK]) + b"\x01"
    with pytest.raises(PacketError):
        Packet.decode(frame + crc16(frame).to_bytes(2, "big"))


def test_manifest():
    m = Manifest(1234, (10, 20))
    assert Manifest.from_bytes(m.to_bytes()) == m
    assert m.compressed_size == 30
    with pytest.raises(PacketError):
        Manifest.from_bytes(m.to_bytes()[:-1])
