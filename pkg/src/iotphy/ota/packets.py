"""OTA wire format.

Every packet is ``kind (1 B) | fields | crc16 (2 B, big-endian)`` where the CRC
is CRC-16/CCITT (poly 0x1021, init 0xFFFF) over everything before it.
"""

from __future__ import annotations

import binascii
import struct
from dataclasses import dataclass, field
from enum import IntEnum

MAX_DATA_PAYLOAD = 60
MAX_LORA_PAYLOAD = 255


class Kind(IntEnum):
    REQUEST = 1
    READY = 2
    DATA = 3
    ACK = 4
    END = 5


class PacketError(ValueError):
    pass


def crc16(data: bytes) -> int:
    return binascii.crc_hqx(bytes(data), 0xFFFF)


@dataclass(frozen=True)
class Manifest:
    """Reassembly plan: original image size and each block's compressed length.

    ``block_lengths`` is empty when the payload is an opaque pre-compressed
    stream that the node stores without decoding.
    """

    image_size: int
    block_lengths: tuple[int, ...] = ()
    kind: int = 0  # 0 = fpga_bitstream, 1 = mcu_program

    def to_bytes(self) -> bytes:
        head = struct.pack("<IBH", self.image_size, self.kind, len(self.block_lengths))
        return head + b"".join(struct.pack("<H", n) for n in self.block_lengths)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Manifest":
        if len(data) < 7:
            raise PacketError("manifest truncated")
        size, kind, count = struct.unpack_from("<IBH", data)
        if len(data) != 7 + 2 * count:
            raise PacketError("manifest length does not match its block count")
        lengths = struct.unpack_from(f"<{count}H", data, 7)
        return cls(size, tuple(lengths), kind)

    @property
    def compressed_size(self) -> int:
        return sum(self.block_lengths)


@dataclass(frozen=True)
class Packet:
    kind: Kind
    seq: int = 0
    payload: bytes = b""
    device_ids: tuple[int, ...] = ()
    wake_time_ms: int = 0
    manifest: Manifest | None = field(default=None, compare=True)

    def encode(self) -> bytes:
        k = self.kind
        if k is Kind.REQUEST:
            body = struct.pack("<BI", len(self.device_ids), self.wake_time_ms)
            body += b"".join(struct.pack("<H", d) for d in self.device_ids)
        elif k is Kind.READY:
            body = struct.pack("<H", self.device_ids[0] if self.device_ids else 0)
        elif k is Kind.DATA:
            if len(self.payload) > MAX_DATA_PAYLOAD:
                raise PacketError(f"DATA payload of {len(self.payload)} bytes exceeds {MAX_DATA_PAYLOAD}")
            body = struct.pack("<H", self.seq) + bytes(self.payload)
        elif k is Kind.ACK:
            body = struct.pack("<H", self.seq)
        elif k is Kind.END:
            body = struct.pack("<H", self.seq) + (self.manifest or Manifest(0)).to_bytes()
        else:  # pragma: no cover - IntEnum guards this
            raise PacketError(f"unknown kind {k}")
        frame = bytes([int(k)]) + body
        out = frame + crc16(frame).to_bytes(2, "big")
        if len(out) > MAX_LORA_PAYLOAD:
            raise PacketError(f"{k.name} packet of {len(out)} bytes exceeds a LoRa frame")
        return out

    @classmethod
    def decode(cls, data: bytes) -> "Packet":
        data = bytes(data)
        if len(data) < 3:
            raise PacketError("packet truncated")
        frame, crc = data[:-2], int.from_bytes(data[-2:], "big")
        if crc16(frame) != crc:
            raise PacketError("CRC mismatch")
        try:
            k = Kind(frame[0])
        except ValueError:
            raise PacketError(f"unknown kind {frame[0]}") from None
        body = frame[1:]
        try:
            if k is Kind.REQUEST:
                count, wake = struct.unpack_from("<BI", body)
                ids = struct.unpack_from(f"<{count}H", body, 5)
                if len(body) != 5 + 2 * count:
                    raise PacketError("REQUEST length mismatch")
                return cls(k, device_ids=tuple(ids), wake_time_ms=wake)
            if k is Kind.READY:
                (dev,) = struct.unpack("<H", body)
                return cls(k, device_ids=(dev,))
            if k is Kind.DATA:
                (seq,) = struct.unpack_from("<H", body)
                if len(body) - 2 > MAX_DATA_PAYLOAD:
                    raise PacketError("DATA payload too long")
                return cls(k, seq=seq, payload=body[2:])
            if k is Kind.ACK:
                (seq,) = struct.unpack("<H", body)
                return cls(k, seq=seq)
            (seq,) = struct.unpack_from("<H", body)
            return cls(k, seq=seq, manifest=Manifest.from_bytes(body[2:]))
        except struct.error as exc:
            raise PacketError(f"{k.name} body malformed: {exc}") from None


def encoded_length(kind: Kind, payload_len: int = 0, n_ids: int = 1, n_blocks: int = 0) -> int:
    """On-air byte count without building the packet."""
    base = 1 + 2
    if kind is Kind.REQUEST:
        return base + 5 + 2 * n_ids
    if kind is Kind.READY:
        return base + 2
    if kind is Kind.DATA:
        return base + 2 + payload_len
    if kind is Kind.ACK:
        return base + 2
    return base + 2 + 7 + 2 * n_blocks
