"""Complex baseband buffers, 13-bit quantization and the serial I/Q word codec.

The radio exchanges one 32-bit word per complex sample::

    | I_SYNC(2) | I_DATA(13) | I_CTRL(1) | Q_SYNC(2) | Q_DATA(13) | Q_CTRL(1) |

sent most significant bit first.  Bitstreams are handled as ``uint8`` arrays
holding one bit per element.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

Q13_MIN = -4096
Q13_MAX = 4095
Q13_SCALE = 4095
WORD_BITS = 32

I_SYNC_DEFAULT = 0b10
Q_SYNC_DEFAULT = 0b01

# candidate alignments must match sync on this many consecutive words
RESYNC_LOOKAHEAD = 8


@dataclass(frozen=True)
class SampleBuffer:
    """Complex baseband samples plus their sample rate.

    The rate is kept as an ``int`` whenever it is integral; sub-hertz rates
    only arise for the narrowest LoRa bandwidths at ``osr=1``.
    """

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        arr = np.asarray(self.samples, dtype=np.complex128)
        if arr.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        rate = float(self.sample_rate_hz)
        object.__setattr__(self, "sample_rate_hz", int(rate) if rate.is_integer() else rate)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def power(self) -> float:
        if len(self.samples) == 0:
            return 0.0
        return float(np.mean(np.abs(self.samples) ** 2))


def check_finite(samples: np.ndarray) -> None:
    bad = np.flatnonzero(~np.isfinite(samples))
    if bad.size:
        raise ValueError(f"non-finite sample at index {int(bad[0])}")


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(buf: SampleBuffer, full_scale: float = 1.0) -> np.ndarray:
    """Map samples to 13-bit integers.

    Returns an ``(n, 2)`` int16 array of ``(i, q)`` pairs.
    """
    if not full_scale > 0:
        raise ValueError("full_scale must be positive")
    check_finite(buf.samples)
    parts = np.stack([buf.samples.real, buf.samples.imag], axis=1) / full_scale * Q13_SCALE
    q = np.clip(_round_half_away(parts), Q13_MIN, Q13_MAX)
    return q.astype(np.int16)


def dequantize(qs, full_scale: float = 1.0, sample_rate_hz: int = 1) -> SampleBuffer:
    qs = np.asarray(qs, dtype=np.int64).reshape(-1, 2)
    if qs.size and (qs.min() < Q13_MIN or qs.max() > Q13_MAX):
        bad = int(np.flatnonzero((qs < Q13_MIN) | (qs > Q13_MAX))[0] // 2)
        raise ValueError(f"quantized sample {bad} outside the 13-bit range")
    scaled = qs.astype(np.float64) / Q13_SCALE * full_scale
    return SampleBuffer(scaled[:, 0] + 1j * scaled[:, 1], sample_rate_hz)


@dataclass(frozen=True)
class WordFormat:
    i_sync: int = I_SYNC_DEFAULT
    q_sync: int = Q_SYNC_DEFAULT
    i_ctrl: int = 0
    q_ctrl: int = 0

    def __post_init__(self):
        for name in ("i_sync", "q_sync"):
            if not 0 <= getattr(self, name) <= 3:
                raise ValueError(f"{name} must be a 2-bit pattern")
        for name in ("i_ctrl", "q_ctrl"):
            if getattr(self, name) not in (0, 1):
                raise ValueError(f"{name} must be 0 or 1")


def _to_bits(values: np.ndarray, width: int) -> np.ndarray:
    """MSB-first bit matrix of shape ``(len(values), width)``."""
    values = np.asarray(values, dtype=np.int64) & ((1 << width) - 1)
    shifts = np.arange(width - 1, -1, -1)
    return ((values[:, None] >> shifts) & 1).astype(np.uint8)


def _from_bits(bits: np.ndarray) -> np.ndarray:
    width = bits.shape[-1]
    weights = 1 << np.arange(width - 1, -1, -1, dtype=np.int64)
    return bits.astype(np.int64) @ weights


def _signed13(u: np.ndarray) -> np.ndarray:
    return np.where(u >= 4096, u - 8192, u)


def frame_words(qs, fmt: WordFormat = WordFormat()) -> np.ndarray:
    """Serialize quantized samples into a flat MSB-first bitstream."""
    qs = np.asarray(qs, dtype=np.int64).reshape(-1, 2)
    n = len(qs)
    if n == 0:
        return np.zeros(0, dtype=np.uint8)
    cols = [
        np.tile(_to_bits(np.array([fmt.i_sync]), 2), (n, 1)),
        _to_bits(qs[:, 0], 13),
        np.full((n, 1), fmt.i_ctrl, dtype=np.uint8),
        np.tile(_to_bits(np.array([fmt.q_sync]), 2), (n, 1)),
        _to_bits(qs[:, 1], 13),
        np.full((n, 1), fmt.q_ctrl, dtype=np.uint8),
    ]
    return np.concatenate(cols, axis=1).reshape(-1)


@dataclass
class DeframeReport:
    """Bit ranges skipped while (re)acquiring word alignment."""

    discarded: list[tuple[int, int]] = field(default_factory=list)
    resync_offsets: list[int] = field(default_factory=list)
    word_starts: list[int] = field(default_factory=list)

    @property
    def discarded_bits(self) -> int:
        return sum(stop - start for start, stop in self.discarded)


def _sync_match(bits: np.ndarray, fmt: WordFormat) -> np.ndarray:
    """Boolean per start position: both sync fields match at their offsets."""
    n = len(bits) - WORD_BITS + 1
    if n <= 0:
        return np.zeros(0, dtype=bool)
    b = bits.astype(np.int8)
    i_hi, i_lo = fmt.i_sync >> 1, fmt.i_sync & 1
    q_hi, q_lo = fmt.q_sync >> 1, fmt.q_sync & 1
    return (
        (b[0:n] == i_hi)
        & (b[1 : n + 1] == i_lo)
        & (b[16 : n + 16] == q_hi)
        & (b[17 : n + 17] == q_lo)
    )


def _run_lengths(match: np.ndarray, cap: int) -> np.ndarray:
    """Consecutive word-spaced sync matches starting at each position, capped."""
    run = np.zeros(len(match), dtype=np.int64)
    for r in range(min(WORD_BITS, len(match))):
        lane = match[r::WORD_BITS]
        k = np.arange(len(lane))
        # index of the first False at or after k
        nxt = np.where(lane, len(lane), k)
        nxt = np.minimum.accumulate(nxt[::-1])[::-1]
        run[r::WORD_BITS] = np.minimum(nxt - k, cap)
    return run


def _pick_candidate(acceptable, idx, search_from, n_bits, last) -> int:
    """Choose among sync candidates close to where the search began.

    After a loss of lock the phase nearest the old alignment is preferred, since a slipped bit moves the boundary by
    one position while chance matches (common near the end of a stream, where
    the lookahead is short) land at arbitrary phases.  Remaining ties go to a
    position that tiles the rest of the stream with whole words, then to the
    earliest.
    """
    if last is None:
        stop = np.searchsorted(acceptable, acceptable[idx] + 2 * WORD_BITS)
    else:
        stop = np.searchsorted(acceptable, search_from + 3 * WORD_BITS)
    window = acceptable[idx:max(stop, idx + 1)]
    if last is None:
        dist = np.zeros(len(window), dtype=np.int64)
    else:
        d = (window - last) % WORD_BITS
        dist = np.minimum(d, WORD_BITS - d)
    ragged = ((n_bits - window) % WORD_BITS != 0).astype(np.int64)
    order = np.lexsort((window, ragged, dist))
    return int(window[order[0]])


def deframe_words(bits, fmt: WordFormat = WordFormat()) -> tuple[np.ndarray, DeframeReport]:
    """Recover quantized samples from a bitstream that may contain slips.

    Alignment is acquired where the sync fields match on ``RESYNC_LOOKAHEAD``
    consecutive words (or every remaining word near the end of the stream),
    normally the earliest such position.  While locked, each word's sync is
    checked; a mismatch triggers a new search starting one bit after the last
    accepted word.
    """
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    report = DeframeReport()
    match = _sync_match(bits, fmt)
    if len(match) == 0:
        if len(bits):
            report.discarded.append((0, len(bits)))
        return np.zeros((0, 2), dtype=np.int16), report

    run = _run_lengths(match, RESYNC_LOOKAHEAD)
    n_pos = len(match)
    # words that fit after a position; the lookahead requirement shrinks near the end
    words_left = (len(bits) - np.arange(n_pos)) // WORD_BITS
    need = np.minimum(words_left, RESYNC_LOOKAHEAD)
    acceptable = np.flatnonzero(run >= need)

    starts: list[int] = []
    pos = 0
    search_from = 0
    locked = False
    covered = 0  # end of the last bit range accounted for
    while True:
        if not locked:
            idx = np.searchsorted(acceptable, search_from)
            if idx >= len(acceptable):
                break
            p = _pick_candidate(acceptable, idx, search_from, len(bits), starts[-1] if starts else None)
            if p > covered:
                report.discarded.append((covered, p))
            report.resync_offsets.append(p)
            pos = p
            locked = True
        if pos >= n_pos:
            break
        if match[pos]:
            starts.append(pos)
            covered = pos + WORD_BITS
            pos += WORD_BITS
        else:
            locked = False
            search_from = (starts[-1] + 1) if starts else pos + 1
    if covered < len(bits):
        report.discarded.append((covered, len(bits)))

    report.word_starts = starts
    if not starts:
        return np.zeros((0, 2), dtype=np.int16), report
    idx = np.asarray(starts)[:, None] + np.arange(WORD_BITS)
    words = bits[idx]
    i_val = _signed13(_from_bits(words[:, 2:15]))
    q_val = _signed13(_from_bits(words[:, 18:31]))
    return np.stack([i_val, q_val], axis=1).astype(np.int16), report


def bits_to_words(bits) -> np.ndarray:
    """Pack a bitstream (multiple of 32) into big-endian uint32 words."""
    bits = np.asarray(bits, dtype=np.uint8)
    if len(bits) % WORD_BITS:
        raise ValueError("bitstream length is not a multiple of 32")
    return np.packbits(bits).view(">u4").astype(np.uint32)


def words_to_bits(words) -> np.ndarray:
    words = np.asarray(words, dtype=">u4")
    return np.unpackbits(words.view(np.uint8))


def write_word_file(path, bits) -> None:
    bits = np.asarray(bits, dtype=np.uint8)
    pad = (-len(bits)) % 8
    Path(path).write_bytes(np.packbits(np.concatenate([bits, np.zeros(pad, np.uint8)])).tobytes())


def read_word_file(path) -> np.ndarray:
    """Read a framed-word file as a bitstream (MSB first within each byte)."""
    raw = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
    return np.unpackbits(raw)


def _meta_path(path) -> Path:
    return Path(str(path) + ".meta.json")


def write_iq_file(path, buf: SampleBuffer, description: str = "") -> None:
    """Write interleaved little-endian float32 I/Q plus a ``.meta.json`` sidecar."""
    check_finite(buf.samples)
    if not isinstance(buf.sample_rate_hz, int):
        raise ValueError("raw I/Q files require an integer sample rate")
    inter = np.empty(2 * len(buf), dtype="<f4")
    inter[0::2] = buf.samples.real
    inter[1::2] = buf.samples.imag
    Path(path).write_bytes(inter.tobytes())
    meta = {"sample_rate_hz": int(buf.sample_rate_hz), "description": description}
    _meta_path(path).write_text(json.dumps(meta, indent=2) + "\n")


def read_iq_meta(path) -> dict:
    meta_file = _meta_path(path)
    if not meta_file.exists():
        raise FileNotFoundError(f"missing metadata sidecar {meta_file}")
    meta = json.loads(meta_file.read_text())
    rate = meta.get("sample_rate_hz")
    if not isinstance(rate, int) or rate <= 0:
        raise ValueError(f"{meta_file}: sample_rate_hz must be a positive integer")
    return meta


def read_iq_file(path) -> SampleBuffer:
    meta = read_iq_meta(path)
    raw = Path(path).read_bytes()
    if len(raw) % 4:
        raise ValueError(f"{path}: size {len(raw)} is not a whole number of float32 values")
    values = np.frombuffer(raw, dtype="<f4")
    if len(values) % 2:
        raise ValueError(f"{path}: odd number of sample components ({len(values)})")
    samples = values[0::2].astype(np.float64) + 1j * values[1::2].astype(np.float64)
    return SampleBuffer(samples, meta["sample_rate_hz"])


__all__ = [
    "SampleBuffer",
    "WordFormat",
    "DeframeReport",
    "quantize",
    "dequantize",
    "frame_words",
    "deframe_words",
    "bits_to_words",
    "words_to_bits",
    "read_iq_file",
    "write_iq_file",
    "read_iq_meta",
    "read_word_file",
    "write_word_file",
    "check_finite",
]
