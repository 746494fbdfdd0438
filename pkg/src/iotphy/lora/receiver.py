"""Frame-level receive path: preamble search, SFD lock and payload demodulation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..iq import SampleBuffer, check_finite
from .modem import (
    Direction,
    bin_magnitudes,
    default_cutoff,
    demod_symbols,
    detect_directions,
    fir_lowpass,
    sfd_quarter_len,
    unpack_bits,
)
from .params import LoraParams

PEAK_TO_MEDIAN = 4.0
MIN_PREAMBLE_WINDOWS = 4


class SyncNotFound(LookupError):
    """No preamble/SFD could be located in the buffer."""


class NonOrthogonalWarning(UserWarning):
    pass


@dataclass
class SyncResult:
    start_offset_samples: int
    sync_values: tuple[int, int]
    preamble_start: int


@dataclass
class DemodResult:
    symbols: list[int]
    fft_peak_magnitudes: list[float]
    chirp_directions: list[str]
    start_offset_samples: int
    sync_values: tuple[int, int] = (0, 0)
    dropped_samples: int = 0
    payload: bytes = b""

    def to_dict(self) -> dict:
        return {
            "symbols": self.symbols,
            "fft_peak_magnitudes": self.fft_peak_magnitudes,
            "chirp_directions": self.chirp_directions,
            "start_offset_samples": self.start_offset_samples,
            "sync_values": list(self.sync_values),
            "dropped_samples": self.dropped_samples,
            "payload_hex": self.payload.hex(),
        }


def _windows(x: np.ndarray, starts, length: int) -> np.ndarray:
    starts = np.asarray(starts, dtype=np.int64)
    return x[starts[:, None] + np.arange(length)]


def _circ_dist(a, b, n):
    d = np.abs(np.asarray(a) - np.asarray(b)) % n
    return np.minimum(d, n - d)


def packet_sync(buf: SampleBuffer, params: LoraParams, *, prefiltered: bool = False) -> SyncResult:
    """Locate the first payload sample of a frame.

    Symbol-spaced windows are dechirped against the base upchirp.  A preamble
    is declared on ``MIN_PREAMBLE_WINDOWS`` consecutive windows whose peaks
    clear ``PEAK_TO_MEDIAN`` times the median bin and agree on a bin (within
    one, to tolerate noise at fractional misalignment).  That bin is the
    window's misalignment in chips; a sample-level search then maximizes the
    bin-zero energy, and the SFD is taken as the first pair of windows that
    read as downchirps.
    """
    x = buf.samples
    check_finite(x)
    if not prefiltered and params.osr > 1:
        x = fir_lowpass(buf, default_cutoff(params)).samples
    n, osr = params.n_chips, params.osr
    L = params.samples_per_symbol
    n_win = len(x) // L
    if n_win < MIN_PREAMBLE_WINDOWS + 2:
        raise SyncNotFound("buffer shorter than a preamble")

    rows = x[: n_win * L].reshape(n_win, L)
    mags = bin_magnitudes(rows, params, Direction.UP)
    values = np.argmax(mags, axis=1)
    peaks = mags[np.arange(n_win), values]
    strong = peaks > PEAK_TO_MEDIAN * np.median(mags, axis=1)

    run_start = None
    for k in range(n_win - MIN_PREAMBLE_WINDOWS + 1):
        span = slice(k, k + MIN_PREAMBLE_WINDOWS)
        if strong[span].all() and (_circ_dist(values[span], values[k], n) <= 1).all():
            run_start = k
            break
    if run_start is None:
        raise SyncNotFound("no preamble found")

    # cyclic shift seen by a window that starts tau samples after a chirp boundary is tau/osr
    run_vals = values[run_start : run_start + MIN_PREAMBLE_WINDOWS]
    v = int(np.bincount(run_vals, minlength=n).argmax())
    coarse = run_start * L - v * osr
    probe = [run_start + 1, run_start + 2]
    best, best_score = coarse, -1.0
    for delta in range(-osr, osr + 1):
        starts = [k * L + coarse - run_start * L + delta for k in probe]
        if min(starts) < 0 or max(starts) + L > len(x):
            continue
        score = bin_magnitudes(_windows(x, starts, L), params)[:, 0].sum()
        if score > best_score:
            best, best_score = coarse + delta, score
    boundary = best % L

    first = (run_start * L - boundary) // L
    first_boundary = boundary + first * L
    sym_starts = np.arange(first_boundary, len(x) - L + 1, L)
    if len(sym_starts) < 2:
        raise SyncNotFound("preamble runs off the end of the buffer")
    is_down = detect_directions(_windows(x, sym_starts, L), params)
    hits = np.flatnonzero(is_down[:-1] & is_down[1:])
    if len(hits) == 0:
        raise SyncNotFound("preamble found but no SFD")
    j = int(hits[0])
    sfd_start = int(sym_starts[j])
    sync = []
    for back in (2, 1):
        if j - back >= 0:
            vals, _ = demod_symbols(_windows(x, [sym_starts[j - back]], L), params)
            sync.append(int(vals[0]))
        else:
            sync.append(-1)
    start = sfd_start + int(params.sfd_len_symbols) * L + sfd_quarter_len(params)
    preamble_start = max(0, int(first_boundary))
    return SyncResult(start, (sync[0], sync[1]), preamble_start)


def demodulate_frame(
    buf: SampleBuffer,
    params: LoraParams,
    *,
    n_symbols: int | None = None,
    n_bytes: int | None = None,
    use_fir: bool = True,
) -> DemodResult:
    """Sync, then demodulate every whole symbol after the SFD.

    ``n_symbols`` caps the payload length; without it all complete symbols up
    to the end of the buffer are read and a trailing partial symbol is
    reported in ``dropped_samples``.
    """
    check_finite(buf.samples)
    if abs(buf.sample_rate_hz - params.sample_rate_hz) > 1e-9:
        raise ValueError(
            f"buffer rate {buf.sample_rate_hz} Hz does not match bw*osr = {params.sample_rate_hz} Hz"
        )
    if use_fir and params.osr > 1:
        buf = fir_lowpass(buf, default_cutoff(params))
    sync = packet_sync(buf, params, prefiltered=True)
    L = params.samples_per_symbol
    x = buf.samples
    available = max(0, (len(x) - sync.start_offset_samples) // L)
    count = available if n_symbols is None else min(n_symbols, available)
    dropped = len(x) - sync.start_offset_samples - count * L if n_symbols is None else 0
    if n_symbols is not None and n_symbols > available:
        warnings.warn(f"buffer holds {available} of {n_symbols} requested symbols")
    if count == 0:
        return DemodResult([], [], [], sync.start_offset_samples, sync.sync_values, max(dropped, 0))
    starts = sync.start_offset_samples + L * np.arange(count)
    rows = _windows(x, starts, L)
    values, peaks = demod_symbols(rows, params, Direction.UP)
    downs = detect_directions(rows, params)
    symbols = [int(v) for v in values]
    if n_bytes is None:
        payload = unpack_bits(symbols, params.sf)
    else:
        payload = unpack_bits(symbols[: -(-8 * n_bytes // params.sf)], params.sf, n_bytes)
    return DemodResult(
        symbols=symbols,
        fft_peak_magnitudes=[float(p) for p in peaks],
        chirp_directions=["down" if d else "up" for d in downs],
        start_offset_samples=sync.start_offset_samples,
        sync_values=sync.sync_values,
        dropped_samples=max(dropped, 0),
        payload=payload,
    )


@dataclass
class ConcurrentResult:
    params: LoraParams
    result: DemodResult | None
    error: str | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def found(self) -> bool:
        return self.result is not None


def concurrent_decode(buf: SampleBuffer, params_list, **kwargs) -> list[ConcurrentResult]:
    """Run an independent receive chain per configuration over the same samples."""
    params_list = list(params_list)
    for p in params_list:
        if abs(p.sample_rate_hz - buf.sample_rate_hz) > 1e-9:
            raise ValueError(f"config sf={p.sf} bw={p.bw_hz} does not share the buffer sample rate")
    slopes = [p.slope_hz_per_s for p in params_list]
    notes: list[list[str]] = [[] for _ in params_list]
    for a in range(len(params_list)):
        for b in range(a + 1, len(params_list)):
            if slopes[a] == slopes[b]:
                msg = f"configs {a} and {b} share chirp slope {slopes[a]:.6g} Hz/s; not orthogonal"
                warnings.warn(msg, NonOrthogonalWarning)
                notes[a].append(msg)
                notes[b].append(msg)
    out = []
    for p, note in zip(params_list, notes):
        try:
            res = demodulate_frame(buf, p, **kwargs)
            out.append(ConcurrentResult(p, res, None, note))
        except SyncNotFound as exc:
            out.append(ConcurrentResult(p, None, str(exc), note))
    return out
