"""Independent reference implementations used as test oracles.

These are written from the definitions, bit by bit and sample by sample, and
share no code with the package beyond its public types.
"""

import numpy as np
import pytest


def ref_upchirp(n_chips, osr, shift):
    """Upchirp from the instantaneous-frequency definition, one sample at a time."""
    out = np.empty(n_chips * osr, dtype=complex)
    phase = 0.0
    for j in range(n_chips * osr):
        out[j] = np.exp(1j * phase)
        chip = j // osr
        f = ((chip + shift) % n_chips) / n_chips - 0.5  # fraction of bw
        phase += 2 * np.pi * f / osr
    return out


def brute_force_demod(window, n_chips, osr=1):
    """argmax over all shifts of |<window, chirp_s>|, lowest shift wins ties."""
    scores = np.array([abs(np.vdot(ref_upchirp(n_chips, osr, s), window)) for s in range(n_chips)])
    return int(np.argmax(scores)), scores


def ref_crc24(data: bytes, init=0x555555):
    """Bit-serial LFSR over a list of 24 register cells.

    Cell 0 is the input end; polynomial x^24 + x^10 + x^9 + x^6 + x^4 + x^3 + x + 1.
    """
    reg = [(init >> i) & 1 for i in range(24)]
    taps = [1, 3, 4, 6, 9, 10]
    for byte in data:
        for k in range(8):
            bit = (byte >> k) & 1
            fb = reg[23] ^ bit
            reg = [fb] + reg[:23]
            for t in taps:
                reg[t] ^= fb
    return sum(b << i for i, b in enumerate(reg))


def ref_whitening_bits(channel, n):
    """7-cell LFSR for x^7 + x^4 + 1, cell i seeded from bit i of the channel."""
    reg = [(channel >> i) & 1 for i in range(7)]
    out = []
    for _ in range(n):
        o = reg[6]
        out.append(o)
        reg = [o] + reg[:6]
        reg[4] ^= o
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
