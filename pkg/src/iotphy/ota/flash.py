"""External flash holding the received stream and two image slots."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .codec import BLOCK_SIZE, DecodeError, MemoryMeter, decompress_block
from .packets import Manifest

MB = 1 << 20
DEFAULT_CAPACITY = 8 * MB
STAGING_OFFSET = 0
SLOT_OFFSETS = (2 * MB, 4 * MB)
SLOT_SIZE = 2 * MB


class ImageKind(str, Enum):
    FPGA_BITSTREAM = "fpga_bitstream"
    MCU_PROGRAM = "mcu_program"


KIND_CODES = {ImageKind.FPGA_BITSTREAM: 0, ImageKind.MCU_PROGRAM: 1}


@dataclass(frozen=True)
class FirmwareImage:
    kind: ImageKind
    data: bytes

    def __post_init__(self):
        object.__setattr__(self, "kind", ImageKind(self.kind))
        object.__setattr__(self, "data", bytes(self.data))
        if not self.data:
            raise ValueError("firmware image is empty")


class FlashError(ValueError):
    pass


class ProgrammingAborted(RuntimeError):
    def __init__(self, reason: str, block_index: int | None = None):
        where = f" (block {block_index})" if block_index is not None else ""
        super().__init__(f"programming aborted{where}: {reason}")
        self.block_index = block_index


@dataclass
class FlashModel:
    capacity_bytes: int = DEFAULT_CAPACITY
    contents: bytearray = field(init=False)
    write_log: list[tuple[int, bytes]] = field(default_factory=list, init=False)
    active_slot: int | None = field(default=None, init=False)
    slot_images: dict[int, FirmwareImage] = field(default_factory=dict, init=False)

    def __post_init__(self):
        if self.capacity_bytes < SLOT_OFFSETS[-1] + SLOT_SIZE:
            raise FlashError("capacity too small for the staging area and two slots")
        self.contents = bytearray(b"\xff" * self.capacity_bytes)

    def write(self, offset: int, data: bytes) -> None:
        data = bytes(data)
        if offset < 0 or offset + len(data) > self.capacity_bytes:
            raise FlashError(f"write of {len(data)} bytes at {offset} exceeds capacity")
        self.contents[offset : offset + len(data)] = data
        self.write_log.append((offset, data))

    def read(self, offset: int, length: int) -> bytes:
        if offset < 0 or offset + length > self.capacity_bytes:
            raise FlashError("read outside capacity")
        return bytes(self.contents[offset : offset + length])

    def replay(self) -> bytearray:
        """Contents rebuilt from the write log alone."""
        out = bytearray(b"\xff" * self.capacity_bytes)
        for offset, data in self.write_log:
            out[offset : offset + len(data)] = data
        return out

    @property
    def active_image(self) -> FirmwareImage | None:
        return None if self.active_slot is None else self.slot_images[self.active_slot]

    def install(self, image: FirmwareImage) -> int:
        """Write an image to the inactive slot and make it active."""
        if len(image.data) > SLOT_SIZE:
            raise FlashError("image larger than a slot")
        slot = 0 if self.active_slot is None else 1 - self.active_slot
        self.write(SLOT_OFFSETS[slot], image.data)
        self.slot_images[slot] = image
        self.active_slot = slot
        return slot


def reassemble_and_program(
    flash: FlashModel,
    manifest: Manifest,
    meter: MemoryMeter | None = None,
) -> FirmwareImage:
    """Decode the staged stream block by block and install it.

    Any missing or undecodable block aborts before the active slot changes,
    so the previously installed image stays in place.
    """
    kind = ImageKind.MCU_PROGRAM if manifest.kind == 1 else ImageKind.FPGA_BITSTREAM
    cursor = STAGING_OFFSET
    written = flash.contents
    # staging data never written reads back as erased flash; refuse to decode it
    staged_end = max((o + len(d) for o, d in flash.write_log if o < SLOT_OFFSETS[0]), default=0)
    if cursor + manifest.compressed_size > staged_end:
        raise ProgrammingAborted(
            f"staged stream holds {staged_end - cursor} of {manifest.compressed_size} bytes",
            _first_missing_block(manifest, staged_end - cursor),
        )
    parts = []
    for index, length in enumerate(manifest.block_lengths):
        chunk = bytes(written[cursor : cursor + length])
        cursor += length
        try:
            parts.append(bytes(decompress_block(chunk, BLOCK_SIZE, meter)))
        except DecodeError as exc:
            raise ProgrammingAborted(str(exc), index) from exc
    data = b"".join(parts)
    if len(data) != manifest.image_size:
        raise ProgrammingAborted(f"decoded {len(data)} bytes, manifest says {manifest.image_size}")
    image = FirmwareImage(kind, data)
    flash.install(image)
    return image


def _first_missing_block(manifest: Manifest, available: int) -> int:
    total = 0
    for index, length in enumerate(manifest.block_lengths):
        total += length
        if total > available:
            return index
    return len(manifest.block_lengths)
