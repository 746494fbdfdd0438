import numpy as np
import pytest

from iotphy.ota.codec import BLOCK_SIZE, MemoryMeter
from iotphy.ota.flash import (
    STAGING_OFFSET,
    FirmwareImage,
    FlashError,
    FlashModel,
    ImageKind,
    ProgrammingAborted,
    reassemble_and_program,
)
from iotphy.ota.session import chunk_firmware, split_payloads


def stage(flash, plan):
    for seq, payload in enumerate(plan.payloads):
        flash.write(STAGING_OFFSET + 60 * seq, payload)


def test_image_must_be_non_empty():
    with pytest.raises(ValueError):
        FirmwareImage(ImageKind.MCU_PROGRAM, b"")


class TestFlashModel:
    def test_too_small_for_layout(self):
        with pytest.raises(FlashError):
            FlashModel(capacity_bytes=4096)

    def test_capacity(self):
        f = FlashModel()
        assert f.capacity_bytes == 8 * 1024 * 1024
        with pytest.raises(FlashError):
            f.write(f.capacity_bytes - 2, b"abc")
        with pytest.raises(FlashError):
            f.write(-1, b"a")

    def test_contents_match_replay(self, rng):
        f = FlashModel()
        for _ in range(50):
            off = int(rng.integers(0, f.capacity_bytes - 100))
            f.write(off, rng.bytes(int(rng.integers(1, 96))))
        assert f.replay() == f.contents

    def test_install_alternates_slots_and_keeps_previous(self):
        f = FlashModel()
        a = FirmwareImage(ImageKind.FPGA_BITSTREAM, b"old")
        b = FirmwareImage(ImageKind.FPGA_BITSTREAM, b"new")
        s1 = f.install(a)
        s2 = f.install(b)
        assert s1 != s2
        assert f.active_image == b
        assert f.slot_images[s1] == a


class TestChunking:
    def test_579k_image_gives_20_blocks(self, rng):
        img = FirmwareImage(ImageKind.FPGA_BITSTREAM, rng.bytes(579_000))
        plan = chunk_firmware(img)
        assert len(plan.blocks) == 20
        assert plan.manifest.image_size == 579_000
        assert all(len(p) <= 60 for p in plan.payloads)

    def test_block_sizes(self):
        img = FirmwareImage(ImageKind.FPGA_BITSTREAM, bytes(579_000))
        plan = chunk_firmware(img)
        from iotphy.ota.codec import decompressed_length

        sizes = [decompressed_length(b) for _, b in plan.blocks]
        assert sizes == [BLOCK_SIZE] * 19 + [9_000]

    def test_99k_stream_gives_1650_packets(self):
        assert len(split_payloads(bytes(99_000))) == 1650

    def test_one_byte_image(self):
        plan = chunk_firmware(FirmwareImage(ImageKind.MCU_PROGRAM, b"\x42"))
        assert len(plan.blocks) == 1 and len(plan.payloads) >= 1
        assert plan.manifest.kind == 1


class TestReassemble:
    def test_identity_random_100k(self, rng):
        for _ in range(3):
            data = bytes(rng.integers(0, 16, 100_000, dtype=np.uint8))
            img = FirmwareImage(ImageKind.FPGA_BITSTREAM, data)
            plan = chunk_firmware(img)
            flash = FlashModel()
            stage(flash, plan)
            meter = MemoryMeter()
            out = reassemble_and_program(flash, plan.manifest, meter)
            assert out == img
            assert flash.active_image == img
            assert meter.high_water <= BLOCK_SIZE + 1024

    def test_corrupt_block_aborts_and_keeps_old_image(self, rng):
        old = FirmwareImage(ImageKind.FPGA_BITSTREAM, b"previous image")
        img = FirmwareImage(ImageKind.FPGA_BITSTREAM, bytes(rng.integers(0, 4, 70_000, dtype=np.uint8)))
        plan = chunk_firmware(img)
        flash = FlashModel()
        flash.install(old)
        stage(flash, plan)
        # damage a byte inside block 1
        first_len = plan.manifest.block_lengths[0]
        target = STAGING_OFFSET + first_len + 1
        flash.write(target, bytes([flash.contents[target] ^ 0xFF]))
        with pytest.raises(ProgrammingAborted) as exc:
            reassemble_and_program(flash, plan.manifest)
        assert exc.value.block_index == 1
        assert flash.active_image == old

    def test_missing_block(self, rng):
        img = FirmwareImage(ImageKind.FPGA_BITSTREAM, bytes(rng.integers(0, 4, 70_000, dtype=np.uint8)))
        plan = chunk_firmware(img)
        flash = FlashModel()
        for seq, payload in enumerate(plan.payloads[:-3]):
            flash.write(60 * seq, payload)
        with pytest.raises(ProgrammingAborted) as exc:
            reassemble_and_program(flash, plan.manifest)
        assert exc.value.block_index == len(plan.blocks) - 1
        assert flash.active_image is None
