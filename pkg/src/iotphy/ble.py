"""BLE non-connectable advertising: packet assembly and GFSK baseband.

Bit order on air is LSB first within every byte.  The CRC register is
24 bits wide with register position ``i`` held in bit ``i`` of an int; input
bits are XORed with position 23 and fed back into the tap positions of
x^24 + x^10 + x^9 + x^6 + x^4 + x^3 + x + 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .iq import SampleBuffer

PREAMBLE = 0xAA
ACCESS_ADDRESS = 0x8E89BED6
ADV_NONCONN_IND = 0x2
ADV_CHANNELS = (37, 38, 39)

CRC_INIT = 0x555555
CRC_TAPS = 0x00065B  # x^10 + x^9 + x^6 + x^4 + x^3 + x + 1 (x^24 implicit)
CRC_MASK = 0xFFFFFF

WHITEN_TAPS = 0x10  # x^4; x^7 feeds back into position 0
MIN_ADV_INTERVAL_MS = 20
HOP_GAP_US = 220


def bytes_to_bits(data: bytes) -> np.ndarray:
    """LSB-first bit array."""
    return np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8), bitorder="little")


def bits_to_bytes(bits) -> bytes:
    bits = np.asarray(bits, dtype=np.uint8)
    if len(bits) % 8:
        raise ValueError("bit count is not a multiple of 8")
    return np.packbits(bits, bitorder="little").tobytes()


def _crc_byte_table() -> list[int]:
    table = []
    for byte in range(256):
        state = 0
        for i in range(8):
            fb = ((state >> 23) & 1) ^ ((byte >> i) & 1)
            state = (state << 1) & CRC_MASK
            if fb:
                state ^= CRC_TAPS
        table.append(state)
    return table


_CRC_TABLE = _crc_byte_table()


def crc24_state(data: bytes, init: int = CRC_INIT) -> int:
    """Final 24-bit register value after shifting in ``data`` LSB first."""
    state = init
    for byte in bytes(data):
        # eight steps are linear in (state, byte): split into the high-byte/input part and a plain shift
        top = (state >> 16) & 0xFF
        mixed = 0
        for i in range(8):
            mixed |= (((top >> (7 - i)) & 1) ^ ((byte >> i) & 1)) << i
        state = ((state << 8) & CRC_MASK) ^ _CRC_TABLE[mixed]
    return state


def crc24(data: bytes, init: int = CRC_INIT) -> bytes:
    """CRC register value as 3 big-endian bytes (``crc24(b"") == bytes.fromhex("555555")``)."""
    return crc24_state(data, init).to_bytes(3, "big")


def crc_air_bytes(state: int) -> bytes:
    """CRC bytes in transmission order: register position 23 goes on air first."""
    rev = int(f"{state:024b}"[::-1], 2)
    return rev.to_bytes(3, "little")


def crc_state_from_air(data: bytes) -> int:
    rev = int.from_bytes(bytes(data), "little")
    return int(f"{rev:024b}"[::-1], 2)


def whiten_seed(channel: int) -> int:
    """Register seed from the lower 7 bits of the channel number, bit i to position i."""
    return channel & 0x7F


def whitening_keystream(channel: int, n_bits: int) -> np.ndarray:
    if not 0 <= channel <= 39:
        raise ValueError(f"channel {channel} outside 0..39")
    state = whiten_seed(channel)
    out = np.empty(n_bits, dtype=np.uint8)
    for k in range(n_bits):
        bit = (state >> 6) & 1
        out[k] = bit
        state = ((state << 1) & 0x7F) | bit
        if bit:
            state ^= WHITEN_TAPS
    return out


def whiten(data: bytes, channel: int) -> bytes:
    """XOR with the channel's 7-bit LFSR keystream; applying it twice is the identity."""
    bits = bytes_to_bits(data)
    return bits_to_bytes(bits ^ whitening_keystream(channel, len(bits)))


@dataclass(frozen=True)
class BleAdvPdu:
    """Advertising PDU: 2-byte header (type/flags, length), address and data."""

    adv_address: bytes
    adv_data: bytes = b""
    pdu_type: int = ADV_NONCONN_IND
    flags: int = 0

    def __post_init__(self):
        object.__setattr__(self, "adv_address", bytes(self.adv_address))
        object.__setattr__(self, "adv_data", bytes(self.adv_data))
        if len(self.adv_address) != 6:
            raise ValueError("adv_address must be 6 bytes")
        if len(self.adv_data) > 31:
            raise ValueError(f"adv_data is {len(self.adv_data)} bytes; at most 31 allowed")
        if not 0 <= self.pdu_type <= 0xF:
            raise ValueError("pdu_type is a 4-bit field")

    @property
    def length(self) -> int:
        return len(self.adv_address) + len(self.adv_data)

    def to_bytes(self) -> bytes:
        header = (self.pdu_type & 0xF) | ((self.flags & 0xF) << 4)
        return bytes([header, self.length]) + self.adv_address + self.adv_data

    @classmethod
    def from_bytes(cls, data: bytes) -> "BleAdvPdu":
        data = bytes(data)
        if len(data) < 8:
            raise ValueError("PDU shorter than header plus address")
        length = data[1]
        if len(data) != 2 + length:
            raise ValueError(f"length field says {length}, PDU carries {len(data) - 2}")
        return cls(data[2:8], data[8:], data[0] & 0xF, data[0] >> 4)

    @classmethod
    def from_json(cls, text: str) -> tuple["BleAdvPdu", int | None]:
        """Parse ``{adv_address, adv_data, channel}``; returns the PDU and optional channel."""
        d = json.loads(text)
        pdu = cls(bytes.fromhex(d["adv_address"]), bytes.fromhex(d.get("adv_data", "")))
        return pdu, d.get("channel")


@dataclass(frozen=True)
class BleAdvPacket:
    pdu: BleAdvPdu
    channel: int
    crc: bytes
    whitened: bytes  # PDU and CRC after whitening, as transmitted

    def bits(self) -> np.ndarray:
        head = bytes([PREAMBLE]) + ACCESS_ADDRESS.to_bytes(4, "little")
        return bytes_to_bits(head + self.whitened)


def assemble_packet(pdu: BleAdvPdu, channel: int) -> BleAdvPacket:
    if channel not in ADV_CHANNELS:
        raise ValueError(f"channel {channel} is not an advertising channel")
    body = pdu.to_bytes()
    state = crc24_state(body)
    whitened = whiten(body + crc_air_bytes(state), channel)
    return BleAdvPacket(pdu, channel, state.to_bytes(3, "big"), whitened)


def disassemble_bits(bits, channel: int) -> BleAdvPdu:
    """Strip preamble and access address, de-whiten and check the CRC."""
    bits = np.asarray(bits, dtype=np.uint8)
    head = bits_to_bytes(bits[:40])
    if head[0] != PREAMBLE or int.from_bytes(head[1:5], "little") != ACCESS_ADDRESS:
        raise ValueError("preamble or access address mismatch")
    body = whiten(bits_to_bytes(bits[40:]), channel)
    pdu_bytes, crc = body[:-3], body[-3:]
    if crc24_state(pdu_bytes) != crc_state_from_air(crc):
        raise ValueError("CRC mismatch")
    return BleAdvPdu.from_bytes(pdu_bytes)


@dataclass(frozen=True)
class GfskConfig:
    bit_rate_bps: float = 1e6
    modulation_index: float = 0.5
    gaussian_bt: float = 0.5
    osr: int = 8
    span_bits: int = 4

    def __post_init__(self):
        if not 0.45 <= self.modulation_index <= 0.55:
            raise ValueError("modulation_index must lie in [0.45, 0.55]")
        if self.osr < 2:
            raise ValueError("osr must be at least 2")
        if self.gaussian_bt <= 0:
            raise ValueError("gaussian_bt must be positive")

    @property
    def sample_rate_hz(self) -> float:
        return self.bit_rate_bps * self.osr


def gaussian_pulse(cfg: GfskConfig) -> np.ndarray:
    """Gaussian taps spanning ``span_bits`` bit periods, summing to one."""
    t = (np.arange(cfg.span_bits * cfg.osr) - (cfg.span_bits * cfg.osr - 1) / 2) / cfg.osr
    sigma = math.sqrt(math.log(2)) / (2 * math.pi * cfg.gaussian_bt)
    g = np.exp(-(t**2) / (2 * sigma**2))
    return g / g.sum()


def gfsk_frequency(bits, cfg: GfskConfig) -> np.ndarray:
    """Instantaneous frequency in Hz per sample."""
    nrz = 2.0 * np.asarray(bits, dtype=np.float64) - 1.0
    held = np.repeat(nrz, cfg.osr)
    if len(held) == 0:
        return held
    g = gaussian_pulse(cfg)
    front = (len(g) - 1) // 2
    padded = np.pad(held, (front, len(g) - 1 - front), mode="edge")
    shaped = np.convolve(padded, g, mode="valid")
    return cfg.modulation_index * cfg.bit_rate_bps / 2 * shaped


def gfsk_modulate(bits, cfg: GfskConfig = GfskConfig()) -> SampleBuffer:
    freq = gfsk_frequency(bits, cfg)
    phase = np.cumsum(2 * np.pi * freq / cfg.sample_rate_hz)
    return SampleBuffer(np.exp(1j * phase), cfg.sample_rate_hz)


def gfsk_demodulate(buf: SampleBuffer, cfg: GfskConfig = GfskConfig()) -> np.ndarray:
    """Phase discriminator, integrate-and-dump over each bit, sign decision."""
    x = buf.samples
    n_bits = len(x) // cfg.osr
    if n_bits == 0:
        return np.zeros(0, dtype=np.uint8)
    prev = np.concatenate([[1.0 + 0j], x[:-1]])
    dphi = np.angle(x * np.conj(prev))
    per_bit = dphi[: n_bits * cfg.osr].reshape(n_bits, cfg.osr).sum(axis=1)
    return (per_bit > 0).astype(np.uint8)


@dataclass(frozen=True)
class AdvEvent:
    channel: int
    start_us: int

    @property
    def start_s(self) -> float:
        return self.start_us * 1e-6

    def start_sample(self, sample_rate_hz: float) -> int:
        return round(self.start_us * sample_rate_hz / 1_000_000)


def advertising_schedule(
    interval_ms: float, start_us: int = 0, n_bursts: int = 1, hop_gap_us: int = HOP_GAP_US
) -> list[AdvEvent]:
    """Three advertising events per interval, ``hop_gap_us`` apart, on channels 37, 38, 39.

    Times are integer microseconds so gaps are exact.
    """
    if interval_ms < MIN_ADV_INTERVAL_MS:
        raise ValueError(f"advertising interval {interval_ms} ms is below {MIN_ADV_INTERVAL_MS} ms")
    interval_us = interval_ms * 1000
    if interval_us != int(interval_us):
        raise ValueError("interval must be a whole number of microseconds")
    interval_us = int(interval_us)
    if 2 * hop_gap_us >= interval_us:
        raise ValueError("hop gaps do not fit inside the interval")
    events = []
    for burst in range(n_bursts):
        base = start_us + burst * interval_us
        for k, ch in enumerate(ADV_CHANNELS):
            events.append(AdvEvent(ch, base + k * hop_gap_us))
    return events
