"""Chirp synthesis, frame modulation and symbol-level demodulation."""

from __future__ import annotations

from enum import Enum
from functools import lru_cache

import numpy as np

from ..iq import SampleBuffer, check_finite
from .params import LoraParams

FIR_TAPS = 14


class Direction(str, Enum):
    UP = "up"
    DOWN = "down"


def _as_direction(direction) -> Direction:
    return direction if isinstance(direction, Direction) else Direction(direction)


def _chirp_samples(n_chips: int, osr: int, symbol: int, down: bool) -> np.ndarray:
    chip = np.arange(n_chips * osr) // osr
    # instantaneous frequency in cycles per sample, f / sample_rate
    freq = (((chip + symbol) % n_chips) / n_chips - 0.5) / osr
    if down:
        freq = -freq
    phase = np.empty(len(freq))
    phase[0] = 0.0
    np.cumsum(2 * np.pi * freq[:-1], out=phase[1:])
    return np.exp(1j * phase)


@lru_cache(maxsize=64)
def _cached_chirp(n_chips: int, osr: int, symbol: int, down: bool) -> np.ndarray:
    out = _chirp_samples(n_chips, osr, symbol, down)
    out.setflags(write=False)
    return out


def chirp_gen(params: LoraParams, symbol: int, direction="up") -> SampleBuffer:
    """One chirp of ``2**sf * osr`` unit-amplitude samples, cyclically shifted by ``symbol``."""
    direction = _as_direction(direction)
    if not 0 <= symbol < params.n_chips:
        raise ValueError(f"symbol {symbol} out of range [0, {params.n_chips})")
    samples = _cached_chirp(params.n_chips, params.osr, int(symbol), direction is Direction.DOWN)
    return SampleBuffer(samples, params.sample_rate_hz)


def chirp_matrix(params: LoraParams, symbols) -> np.ndarray:
    """Upchirps for a batch of symbols, one row each."""
    base = _cached_chirp(params.n_chips, params.osr, 0, False)
    symbols = np.asarray(symbols, dtype=np.int64)
    n, osr = params.n_chips, params.osr
    # an upchirp with shift s is the base chirp times a two-segment tone whose
    # phase is known in closed form, which avoids a per-row cumsum
    j = np.arange(n * osr)
    s = symbols[:, None]
    wrapped = np.maximum(0, j[None, :] - (n - s) * osr)
    phase = 2 * np.pi * (s * j[None, :] / (n * osr) - wrapped / osr)
    return base[None, :] * np.exp(1j * phase)


def pack_bits(payload: bytes, sf: int) -> list[int]:
    """Group the payload bits MSB-first into ``sf``-bit symbols, zero-padding the tail."""
    bits = np.unpackbits(np.frombuffer(bytes(payload), dtype=np.uint8))
    pad = (-len(bits)) % sf
    bits = np.concatenate([bits, np.zeros(pad, dtype=np.uint8)]).reshape(-1, sf)
    weights = 1 << np.arange(sf - 1, -1, -1)
    return [int(v) for v in bits.astype(np.int64) @ weights]


def unpack_bits(symbols, sf: int, n_bytes: int | None = None) -> bytes:
    symbols = [int(s) for s in symbols]
    total_bits = len(symbols) * sf
    if n_bytes is None:
        n_bytes = total_bits // 8
    needed = -(-8 * n_bytes // sf)
    if needed != len(symbols):
        raise ValueError(f"{n_bytes} bytes need {needed} symbols at sf={sf}, got {len(symbols)}")
    if any(not 0 <= s < (1 << sf) for s in symbols):
        raise ValueError("symbol out of range")
    if not symbols:
        return b""
    shifts = np.arange(sf - 1, -1, -1)
    bits = ((np.asarray(symbols)[:, None] >> shifts) & 1).astype(np.uint8).reshape(-1)
    return np.packbits(bits[: 8 * n_bytes]).tobytes()


def sfd_quarter_len(params: LoraParams) -> int:
    frac = params.sfd_len_symbols - int(params.sfd_len_symbols)
    return int(round(frac * params.samples_per_symbol))


def modulate_frame(symbols, params: LoraParams) -> SampleBuffer:
    """Preamble, two sync upchirps, the SFD downchirps, then one upchirp per payload symbol."""
    symbols = [int(s) for s in symbols]
    for s in symbols:
        if not 0 <= s < params.n_chips:
            raise ValueError(f"payload symbol {s} out of range for sf={params.sf}")
    up0 = _cached_chirp(params.n_chips, params.osr, 0, False)
    down0 = _cached_chirp(params.n_chips, params.osr, 0, True)
    parts = [up0] * params.preamble_len
    parts += [chirp_gen(params, v).samples for v in params.sync_symbols]
    parts += [down0] * int(params.sfd_len_symbols)
    parts.append(down0[: sfd_quarter_len(params)])
    if symbols:
        parts.append(chirp_matrix(params, symbols).reshape(-1))
    return SampleBuffer(np.concatenate(parts), params.sample_rate_hz)


def fir_taps(cutoff_hz: float, sample_rate_hz: float, n_taps: int = FIR_TAPS) -> np.ndarray:
    """Hamming-windowed sinc low-pass, normalized to unity DC gain."""
    if not 0 < cutoff_hz < sample_rate_hz / 2:
        raise ValueError("cutoff must lie strictly between 0 and half the sample rate")
    fc = cutoff_hz / sample_rate_hz
    n = np.arange(n_taps) - (n_taps - 1) / 2
    h = 2 * fc * np.sinc(2 * fc * n) * np.hamming(n_taps)
    return h / h.sum()


def fir_lowpass(buf: SampleBuffer, cutoff_hz: float, n_taps: int = FIR_TAPS) -> SampleBuffer:
    """Filter with the 14-tap low-pass; output is the same length as the input.

    The input is edge-padded by ``n_taps//2 - 1`` samples in front and
    ``n_taps//2`` behind so the output lines up with the input to within the
    half-sample group delay of an even-length filter.
    """
    h = fir_taps(cutoff_hz, buf.sample_rate_hz, n_taps)
    x = buf.samples
    if len(x) == 0:
        return buf
    front = (n_taps - 1) // 2
    back = n_taps - 1 - front
    padded = np.pad(x, (front, back), mode="edge")
    return SampleBuffer(np.convolve(padded, h, mode="valid"), buf.sample_rate_hz)


def default_cutoff(params: LoraParams) -> float:
    return 0.5 * params.bw_hz


def bin_magnitudes(rows: np.ndarray, params: LoraParams, direction="up") -> np.ndarray:
    """Dechirp each row and return the per-symbol spectral magnitude, shape ``(..., 2**sf)``.

    At ``osr > 1`` the dechirped tone of symbol ``s`` is split between FFT bin
    ``s`` (chips before the frequency wrap) and bin ``s - 2**sf`` (chips after
    it).  For a clean chirp both bins carry the same phase and every other
    candidate's pair cancels exactly, so the pair is summed as complex values
    and a clean chirp scores ``2**sf * osr``.
    """
    direction = _as_direction(direction)
    n, osr = params.n_chips, params.osr
    rows = np.asarray(rows)
    if rows.shape[-1] != n * osr:
        raise ValueError(f"expected {n * osr} samples per symbol, got {rows.shape[-1]}")
    if direction is Direction.DOWN:
        # conj maps a downchirp of shift s onto the upchirp of shift s
        rows = np.conj(rows)
    ref = np.conj(_cached_chirp(n, osr, 0, False))
    spec = np.fft.fft(rows * ref, axis=-1)
    if osr == 1:
        return np.abs(spec)
    return np.abs(spec[..., :n] + spec[..., n * osr - n :])


def demod_symbols(rows: np.ndarray, params: LoraParams, direction="up"):
    """Vectorized :func:`demod_symbol` over a batch of symbol windows."""
    mags = bin_magnitudes(rows, params, direction)
    values = np.argmax(mags, axis=-1)
    peaks = np.take_along_axis(mags, values[..., None], axis=-1)[..., 0]
    return values, peaks


def demod_symbol(buf: SampleBuffer, params: LoraParams, reference="up") -> tuple[int, float]:
    """Symbol value (lowest bin wins ties) and its peak magnitude."""
    if len(buf) != params.samples_per_symbol:
        raise ValueError(f"buffer holds {len(buf)} samples, expected {params.samples_per_symbol}")
    check_finite(buf.samples)
    values, peaks = demod_symbols(buf.samples[None, :], params, reference)
    return int(values[0]), float(peaks[0])


def detect_chirp_direction(buf: SampleBuffer, params: LoraParams) -> Direction:
    """Compare up- and down-reference peaks; an exact tie counts as up."""
    _, up_peak = demod_symbol(buf, params, Direction.UP)
    _, down_peak = demod_symbol(buf, params, Direction.DOWN)
    return Direction.DOWN if down_peak > up_peak else Direction.UP


def detect_directions(rows: np.ndarray, params: LoraParams) -> np.ndarray:
    """Boolean array, True where a window is a downchirp."""
    _, up_peak = demod_symbols(rows, params, Direction.UP)
    _, down_peak = demod_symbols(rows, params, Direction.DOWN)
    return down_peak > up_peak
