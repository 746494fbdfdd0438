"""Block-oriented LZ77 codec sized for a small microcontroller.

Stream layout::

    header   3 bytes, little-endian uncompressed length
    sequence token | [literal length ext] | literals | offset (2 B LE) | [match length ext]

The token's high nibble is the literal count and its low nibble the match
length minus ``MIN_MATCH``; a nibble of 15 is extended by bytes of 255 plus a
final byte below 255.  A trailing literal-only sequence covers any
bytes after the last match; decoding stops once the declared length is
reached.

Decoding writes into a single buffer of the declared length and copies
back-references in bounded chunks, so working memory is the output block
plus a small constant.
"""

from __future__ import annotations

BLOCK_SIZE = 30_000
MIN_MATCH = 4
MAX_OFFSET = 0xFFFF
HEADER_LEN = 3
COPY_CHUNK = 256


class DecodeError(ValueError):
    """Malformed compressed stream; ``offset`` is the byte position in the input."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at input offset {offset}")
        self.offset = offset


class BlockTooLarge(ValueError):
    pass


class MemoryMeter:
    """Records the largest working allocation made while decoding."""

    def __init__(self):
        self.high_water = 0

    def observe(self, n_bytes: int) -> None:
        self.high_water = max(self.high_water, n_bytes)


def _put_length(out: bytearray, n: int) -> None:
    while n >= 255:
        out.append(255)
        n -= 255
    out.append(n)


def _emit(out: bytearray, literals: bytes, match_len: int, offset: int) -> None:
    lit = len(literals)
    ml = match_len - MIN_MATCH if match_len else 0
    token = (min(lit, 15) << 4) | min(ml, 15)
    out.append(token)
    if lit >= 15:
        _put_length(out, lit - 15)
    out += literals
    if match_len:
        out += offset.to_bytes(2, "little")
        if ml >= 15:
            _put_length(out, ml - 15)


def compress_block(block: bytes, max_block: int = BLOCK_SIZE) -> bytes:
    """Greedy single-probe hash matcher."""
    data = bytes(block)
    n = len(data)
    if n > max_block:
        raise BlockTooLarge(f"block of {n} bytes exceeds {max_block}")
    out = bytearray(n.to_bytes(HEADER_LEN, "little"))
    if n == 0:
        return bytes(out)
    table: dict[bytes, int] = {}
    anchor = 0
    i = 0
    limit = n - MIN_MATCH
    while i <= limit:
        key = data[i : i + MIN_MATCH]
        cand = table.get(key)
        table[key] = i
        if cand is None or i - cand > MAX_OFFSET:
            i += 1
            continue
        length = MIN_MATCH
        while i + length < n and data[cand + length] == data[i + length]:
            length += 1
        _emit(out, data[anchor:i], length, i - cand)
        # index a few positions inside the match so later repeats can find it
        end = i + length
        for k in range(max(i + 1, end - 2), min(end, limit + 1)):
            table[data[k : k + MIN_MATCH]] = k
        i = anchor = end
    if anchor < n:
        _emit(out, data[anchor:], 0, 0)
    return bytes(out)


def decompressed_length(stream: bytes) -> int:
    if len(stream) < HEADER_LEN:
        raise DecodeError("stream shorter than its header", len(stream))
    return int.from_bytes(stream[:HEADER_LEN], "little")


def decompress_block(
    stream: bytes, max_block: int = BLOCK_SIZE, meter: MemoryMeter | None = None
) -> bytearray:
    """Decode one block.  The returned buffer is the decoder's only allocation."""
    stream = bytes(stream)
    total = decompressed_length(stream)
    if total > max_block:
        raise DecodeError(f"declared length {total} exceeds block size {max_block}", 0)
    out = bytearray(total)
    if meter is not None:
        meter.observe(total + COPY_CHUNK)
    pos = 0
    ip = HEADER_LEN
    end = len(stream)

    def read_ext(ip: int, base: int) -> tuple[int, int]:
        n = base
        while True:
            if ip >= end:
                raise DecodeError("truncated length extension", ip)
            b = stream[ip]
            ip += 1
            n += b
            if b != 255:
                return n, ip

    while pos < total:
        if ip >= end:
            raise DecodeError("stream ends before the declared length", ip)
        token = stream[ip]
        ip += 1
        lit = token >> 4
        if lit == 15:
            lit, ip = read_ext(ip, 15)
        if ip + lit > end:
            raise DecodeError("literal run overruns the stream", ip)
        if pos + lit > total:
            raise DecodeError("literal run overruns the declared length", ip)
        out[pos : pos + lit] = stream[ip : ip + lit]
        ip += lit
        pos += lit
        if pos == total:
            if token & 0xF:
                raise DecodeError("match after the final literal run", ip)
            break
        if ip + 2 > end:
            raise DecodeError("truncated match offset", ip)
        offset = int.from_bytes(stream[ip : ip + 2], "little")
        if offset == 0 or offset > pos:
            raise DecodeError(f"match offset {offset} outside the {pos} bytes decoded", ip)
        ip += 2
        ml = token & 0xF
        if ml == 15:
            ml, ip = read_ext(ip, 15)
        ml += MIN_MATCH
        if pos + ml > total:
            raise DecodeError("match overruns the declared length", ip)
        src = pos - offset
        while ml:
            # overlapping copies may only move one period of the repeat at a time
            k = min(ml, offset, COPY_CHUNK)
            out[pos : pos + k] = out[src : src + k]
            pos += k
            src += k
            ml -= k
    if ip != end:
        raise DecodeError("trailing bytes after the block", ip)
    return out
