"""Baseband impairments, multi-transmitter combining and a packet erasure channel."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .iq import SampleBuffer, check_finite


@dataclass(frozen=True)
class ChannelConfig:
    """Per-source gains and delays plus the receiver noise level.

    ``snr_db`` may be ``math.inf`` for a noiseless channel.
    """

    snr_db: float
    seed: int
    gains_db: tuple[float, ...] = field(default_factory=tuple)
    delays_samples: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("seed is mandatory")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ValueError("snr_db must be a number or +inf")
        object.__setattr__(self, "gains_db", tuple(float(g) for g in self.gains_db))
        object.__setattr__(self, "delays_samples", tuple(int(d) for d in self.delays_samples))
        if len(self.gains_db) != len(self.delays_samples):
            raise ValueError("gains_db and delays_samples must have equal length")
        if not all(math.isfinite(g) for g in self.gains_db):
            raise ValueError("gains must be finite")
        if any(d < 0 for d in self.delays_samples):
            raise ValueError("delays must be non-negative")

    def apply(self, buffers) -> SampleBuffer:
        buffers = list(buffers)
        if len(buffers) != len(self.gains_db):
            raise ValueError(f"config describes {len(self.gains_db)} sources, got {len(buffers)}")
        mixed = combine(list(zip(buffers, self.gains_db, self.delays_samples)))
        return awgn(mixed, self.snr_db, self.seed)


def noise_std(signal_power: float, snr_db: float) -> float:
    """Per-component standard deviation for a complex noise of the given SNR."""
    return math.sqrt(signal_power / 10 ** (snr_db / 10) / 2)


def awgn(buf: SampleBuffer, snr_db: float, seed: int) -> SampleBuffer:
    """Add circular Gaussian noise with variance ``mean|x|^2 / 10**(snr/10)``."""
    if len(buf) == 0:
        raise ValueError("buffer is empty")
    check_finite(buf.samples)
    if snr_db == math.inf:
        return buf
    rng = np.random.default_rng(seed)
    sigma = noise_std(buf.power(), snr_db)
    n = len(buf)
    noise = sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return SampleBuffer(buf.samples + noise, buf.sample_rate_hz)


def combine(sources) -> SampleBuffer:
    """Sum ``(buffer, gain_db, delay_samples)`` sources into one buffer.

    The output is long enough to hold every delayed source.
    """
    sources = list(sources)
    if not sources:
        raise ValueError("no sources to combine")
    rate = sources[0][0].sample_rate_hz
    for buf, _, delay in sources:
        if buf.sample_rate_hz != rate:
            raise ValueError(f"sample rates differ: {buf.sample_rate_hz} vs {rate}")
        if int(delay) < 0:
            raise ValueError("delay must be non-negative")
    length = max(int(d) + len(b) for b, _, d in sources)
    out = np.zeros(length, dtype=np.complex128)
    for buf, gain_db, delay in sources:
        d = int(delay)
        out[d : d + len(buf)] += 10 ** (gain_db / 20) * buf.samples
    return SampleBuffer(out, rate)


def packet_erasure(n_packets: int, loss_prob: float, seed: int) -> np.ndarray:
    """Boolean delivery mask: True where the packet gets through."""
    if not 0.0 <= loss_prob <= 1.0:
        raise ValueError("loss_prob must lie in [0, 1]")
    if n_packets < 0:
        raise ValueError("n_packets must be non-negative")
    rng = np.random.default_rng(seed)
    return rng.random(n_packets) >= loss_prob


class ErasureChannel:
    """Stateful view of an erasure process for event-driven simulation.

    Draws one Bernoulli outcome per transmission, in order, from a seeded
    stream; a scripted list of outcomes overrides the random draw.
    """

    def __init__(self, loss_prob: float, seed: int, script=None):
        if not 0.0 <= loss_prob <= 1.0:
            raise ValueError("loss_prob must lie in [0, 1]")
        self.loss_prob = loss_prob
        self._rng = np.random.default_rng(seed)
        self._script = list(script) if script is not None else None
        self.count = 0

    def deliver(self) -> bool:
        i = self.count
        self.count += 1
        if self._script is not None:
            return bool(self._script[i]) if i < len(self._script) else True
        return bool(self._rng.random() >= self.loss_prob)
