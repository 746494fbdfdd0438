"""Monte-Carlo symbol-error-rate measurement for aligned LoRa symbol streams.

SNR is signal power over noise power across the full sampled band, with the
noise power fixed at 1.  Every SNR point of one experiment reuses the same
symbols, interferer streams and unit-variance noise (common random numbers),
so curves are monotone up to genuine statistical effects and thresholds
interpolate cleanly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .modem import chirp_matrix, default_cutoff, demod_symbols, fir_taps
from .params import LoraParams

TARGET_SER = 0.01


@dataclass(frozen=True)
class Interferer:
    """A second LoRa stream sharing the band.

    ``level_db`` is relative to the desired signal power when
    ``relative_to == "signal"`` and relative to the noise power otherwise.
    """

    params: LoraParams
    level_db: float = 0.0
    relative_to: str = "signal"

    def __post_init__(self):
        if self.relative_to not in ("signal", "noise"):
            raise ValueError("relative_to must be 'signal' or 'noise'")


@dataclass
class SerPoint:
    snr_db: float
    symbol_errors: int
    trials: int

    @property
    def ser(self) -> float:
        return self.symbol_errors / self.trials


def _stream(params: LoraParams, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    L = params.samples_per_symbol
    count = n_samples // L + 2
    symbols = rng.integers(0, params.n_chips, count)
    x = chirp_matrix(params, symbols).reshape(-1)
    offset = int(rng.integers(0, L))
    return x[offset : offset + n_samples]


class SerExperiment:
    """Symbol error counts for one desired configuration over a set of SNRs."""

    def __init__(
        self,
        params: LoraParams,
        n_symbols: int,
        seed: int,
        interferers: tuple[Interferer, ...] = (),
        use_fir: bool = False,
        batch: int | None = None,
    ):
        self.params = params
        self.n_symbols = int(n_symbols)
        self.seed = int(seed)
        self.interferers = tuple(interferers)
        for it in self.interferers:
            if abs(it.params.sample_rate_hz - params.sample_rate_hz) > 1e-9:
                raise ValueError("interferer must share the desired stream's sample rate")
        self.use_fir = use_fir and params.osr > 1
        L = params.samples_per_symbol
        self.batch = batch or max(1, min(self.n_symbols, 2_000_000 // L))

    def _batches(self):
        done = 0
        index = 0
        while done < self.n_symbols:
            count = min(self.batch, self.n_symbols - done)
            yield index, count
            done += count
            index += 1

    def _batch_parts(self, index: int, count: int):
        p = self.params
        L = p.samples_per_symbol
        rng = np.random.default_rng([self.seed, index])
        symbols = rng.integers(0, p.n_chips, count)
        signal = chirp_matrix(p, symbols).reshape(-1)
        noise = (rng.standard_normal(count * L) + 1j * rng.standard_normal(count * L)) / math.sqrt(2)
        others = [(_stream(it.params, count * L, rng), it) for it in self.interferers]
        return symbols, signal, noise, others

    def run(self, snrs_db) -> list[SerPoint]:
        snrs_db = [float(s) for s in snrs_db]
        errors = np.zeros(len(snrs_db), dtype=np.int64)
        p = self.params
        L = p.samples_per_symbol
        taps = fir_taps(default_cutoff(p), p.sample_rate_hz) if self.use_fir else None
        for index, count in self._batches():
            symbols, signal, noise, others = self._batch_parts(index, count)
            for k, snr in enumerate(snrs_db):
                amp = 10 ** (snr / 20)
                x = amp * signal + noise
                for stream, it in others:
                    base = amp if it.relative_to == "signal" else 1.0
                    x = x + base * 10 ** (it.level_db / 20) * stream
                if taps is not None:
                    x = np.convolve(np.pad(x, (6, 7), mode="edge"), taps, mode="valid")
                values, _ = demod_symbols(x.reshape(count, L), p)
                errors[k] += int(np.count_nonzero(values != symbols))
        return [SerPoint(s, int(e), self.n_symbols) for s, e in zip(snrs_db, errors)]


def crossing(points: list[SerPoint], target: float = TARGET_SER) -> float | None:
    """SNR where the SER curve crosses ``target``, interpolating log10(SER) linearly."""
    pts = sorted(points, key=lambda pt: pt.snr_db)
    for a, b in zip(pts, pts[1:]):
        if a.ser >= target > b.ser:
            if b.ser == 0:
                floor = 0.5 / b.trials
                lb = math.log10(floor)
            else:
                lb = math.log10(b.ser)
            la = math.log10(a.ser)
            lt = math.log10(target)
            if la == lb:
                return a.snr_db
            return a.snr_db + (la - lt) / (la - lb) * (b.snr_db - a.snr_db)
    return None


def nominal_threshold_guess(params: LoraParams) -> float:
    # empirical fit of the 1% SER threshold at osr=1, shifted by the oversampling gain
    return 9.9 - 2.72 * params.sf - 10 * math.log10(params.osr)


def threshold_snr(
    exp: SerExperiment,
    target: float = TARGET_SER,
    start_db: float | None = None,
    coarse_step: float = 1.0,
    fine_step: float = 0.25,
    span_db: float = 4.0,
) -> tuple[float, list[SerPoint]]:
    """Find the SNR at which SER falls through ``target``.

    A coarse grid of ``coarse_step`` around the starting guess is evaluated in
    one pass (and widened until it brackets the crossing), then the bracket is
    filled at ``fine_step`` and interpolated.
    """
    centre = nominal_threshold_guess(exp.params) if start_db is None else start_db
    points: dict[float, SerPoint] = {}

    def evaluate(values):
        todo = sorted({round(v, 6) for v in values} - set(points))
        if todo:
            for pt in exp.run(todo):
                points[round(pt.snr_db, 6)] = pt

    lo_edge, hi_edge = centre - span_db, centre + span_db
    for _ in range(20):
        k = int(round((hi_edge - lo_edge) / coarse_step))
        evaluate([lo_edge + i * coarse_step for i in range(k + 1)])
        grid = sorted(points.values(), key=lambda pt: pt.snr_db)
        if grid[0].ser < target:
            lo_edge -= 2 * span_db
        elif grid[-1].ser >= target:
            hi_edge += 2 * span_db
        else:
            break
    else:
        raise RuntimeError("SER never crossed the target within the search range")
    grid = sorted(points.values(), key=lambda pt: pt.snr_db)
    # last coarse point at or above target, and the next one below it
    above = [pt.snr_db for pt in grid if pt.ser >= target]
    lo = max(above)
    hi = min(pt.snr_db for pt in grid if pt.snr_db > lo)
    n_fine = int(round((hi - lo) / fine_step))
    evaluate([lo + i * fine_step for i in range(n_fine + 1)])
    ordered = sorted(points.values(), key=lambda pt: pt.snr_db)
    window = [pt for pt in ordered if lo - 1e-9 <= pt.snr_db <= hi + 1e-9]
    value = crossing(window, target)
    if value is None:
        value = crossing(ordered, target)
    return value, ordered


@dataclass
class StreamSer:
    params: LoraParams
    snr_db: float
    symbol_errors: int
    trials: int

    @property
    def ser(self) -> float:
        return self.symbol_errors / self.trials


def concurrent_ser(
    params_list, snrs_db, n_symbols: int, seed: int, use_fir: bool = False
) -> list[StreamSer]:
    """Sum several independent symbol streams plus unit-power noise and decode each.

    Each stream starts at its own random sample offset; its receiver knows
    that offset.  SNRs are per stream, relative to the noise power.
    """
    params_list = list(params_list)
    snrs_db = [float(s) for s in snrs_db]
    if len(params_list) != len(snrs_db):
        raise ValueError("one SNR per stream is required")
    rate = params_list[0].sample_rate_hz
    if any(abs(p.sample_rate_hz - rate) > 1e-9 for p in params_list):
        raise ValueError("all streams must share one sample rate")
    rng = np.random.default_rng(seed)
    plans = []
    length = 0
    for p in params_list:
        L = p.samples_per_symbol
        offset = int(rng.integers(0, L))
        symbols = rng.integers(0, p.n_chips, n_symbols)
        plans.append((p, offset, symbols))
        length = max(length, offset + n_symbols * L)
    x = (rng.standard_normal(length) + 1j * rng.standard_normal(length)) / math.sqrt(2)
    for (p, offset, symbols), snr in zip(plans, snrs_db):
        wave = chirp_matrix(p, symbols).reshape(-1)
        x[offset : offset + len(wave)] += 10 ** (snr / 20) * wave
    out = []
    for (p, offset, symbols), snr in zip(plans, snrs_db):
        y = x
        if use_fir and p.osr > 1:
            taps = fir_taps(default_cutoff(p), p.sample_rate_hz)
            y = np.convolve(np.pad(x, (6, 7), mode="edge"), taps, mode="valid")
        L = p.samples_per_symbol
        rows = y[offset : offset + n_symbols * L].reshape(n_symbols, L)
        values, _ = demod_symbols(rows, p)
        out.append(StreamSer(p, snr, int(np.count_nonzero(values != symbols)), n_symbols))
    return out
