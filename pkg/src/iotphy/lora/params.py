from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

SF_MIN, SF_MAX = 6, 12
BW_BASE_HZ = 7812.5
BW_GRID_HZ = tuple(BW_BASE_HZ * 2**k for k in range(7))  # 7.8125 kHz .. 500 kHz
CODING_RATES = (4, 5, 6, 7, 8)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LoraParams:
    """LoRa modem configuration.

    ``coding_rate_denominator`` is the ``cr`` in a code rate of ``4/cr``;
    ``cr=4`` means uncoded.  It only affects airtime and data rate because
    payload symbols are carried without forward error correction.
    """

    sf: int = 8
    bw_hz: float = 125_000.0
    osr: int = 1
    coding_rate_denominator: int = 4
    preamble_len: int = 10
    sync_symbols: tuple[int, int] = (0, 0)
    sfd_len_symbols: float = 2.25

    def __post_init__(self):
        object.__setattr__(self, "sync_symbols", tuple(int(v) for v in self.sync_symbols))
        if not (isinstance(self.sf, int) and SF_MIN <= self.sf <= SF_MAX):
            raise ConfigError(f"sf must be an integer in [{SF_MIN}, {SF_MAX}], got {self.sf!r}")
        if float(self.bw_hz) not in BW_GRID_HZ:
            raise ConfigError(f"bw_hz {self.bw_hz} is not on the 7812.5 Hz x 2^k grid")
        object.__setattr__(self, "bw_hz", float(self.bw_hz))
        if not (isinstance(self.osr, int) and self.osr >= 1):
            raise ConfigError(f"osr must be a positive integer, got {self.osr!r}")
        if self.coding_rate_denominator not in CODING_RATES:
            raise ConfigError(f"coding_rate_denominator must be one of {CODING_RATES}")
        if self.preamble_len < 1:
            raise ConfigError("preamble_len must be at least 1")
        if len(self.sync_symbols) != 2:
            raise ConfigError("sync_symbols must hold exactly two values")
        for v in self.sync_symbols:
            if not 0 <= v < self.n_chips:
                raise ConfigError(f"sync symbol {v} out of range for sf={self.sf}")
        if self.sfd_len_symbols < 0:
            raise ConfigError("sfd_len_symbols must be non-negative")

    @property
    def n_chips(self) -> int:
        return 1 << self.sf

    @property
    def sample_rate_hz(self) -> float:
        return self.bw_hz * self.osr

    @property
    def samples_per_symbol(self) -> int:
        return self.n_chips * self.osr

    @property
    def symbol_time_s(self) -> float:
        return self.n_chips / self.bw_hz

    @property
    def slope_hz_per_s(self) -> float:
        return self.bw_hz**2 / self.n_chips

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sync_symbols"] = list(self.sync_symbols)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "LoraParams":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown LoRa config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "LoraParams":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ChirpSlope:
    slope_hz_per_s: float

    @classmethod
    def of(cls, params: LoraParams) -> "ChirpSlope":
        return cls(params.slope_hz_per_s)


def data_rate(params: LoraParams) -> float:
    """Payload bit rate: ``sf * bw / 2**sf`` scaled by the code rate ``4/cr``."""
    return params.sf * params.bw_hz / params.n_chips * (4 / params.coding_rate_denominator)


def payload_symbol_count(params: LoraParams, payload_bytes: int) -> int:
    coded_bits = 8 * payload_bytes * params.coding_rate_denominator / 4
    # round before ceil so that exact products such as 90.0 stay exact
    return math.ceil(round(coded_bits / params.sf, 9))


def overhead_symbols(params: LoraParams) -> float:
    return params.preamble_len + 2 + params.sfd_len_symbols


def airtime(params: LoraParams, payload_bytes: int) -> float:
    """Time on air in seconds for a frame carrying ``payload_bytes``."""
    if payload_bytes < 0:
        raise ValueError("payload_bytes must be non-negative")
    n_sym = overhead_symbols(params) + payload_symbol_count(params, payload_bytes)
    return n_sym * params.symbol_time_s


def overhead_airtime(params: LoraParams) -> float:
    return overhead_symbols(params) * params.symbol_time_s
