import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iotphy.iq import (
    SampleBuffer,
    WordFormat,
    bits_to_words,
    deframe_words,
    dequantize,
    frame_words,
    quantize,
    read_iq_file,
    read_word_file,
    words_to_bits,
    write_iq_file,
    write_word_file,
)


def buf(values, rate=1000):
    return SampleBuffer(np.asarray(values, dtype=complex), rate)


class TestSampleBuffer:
    def test_rejects_nonpositive_rate(self):
        with pytest.raises(ValueError):
            buf([0], rate=0)

    def test_samples_are_read_only(self):
        b = buf([1, 2])
        with pytest.raises(ValueError):
            b.samples[0] = 5

    def test_power_and_duration(self):
        b = buf([1, 1j, -1, -1j], rate=4)
        assert b.power() == pytest.approx(1.0)
        assert b.duration_s == 1.0


class TestQuantize:
    def test_examples(self):
        assert quantize(buf([0])).tolist() == [[0, 0]]
        assert quantize(buf([1 - 1j])).tolist() == [[4095, -4095]]
        # 0.5 * 4095 = 2047.5 rounds away from zero
        assert quantize(buf([0.5 + 0.25j])).tolist() == [[2048, 1024]]
        assert quantize(buf([-0.5 - 0.25j])).tolist() == [[-2048, -1024]]

    def test_clamps(self):
        assert quantize(buf([3 - 3j])).tolist() == [[4095, -4096]]

    def test_non_finite_reports_index(self):
        with pytest.raises(ValueError, match="index 2"):
            quantize(buf([0, 0, np.nan, 0]))

    def test_full_scale_must_be_positive(self):
        with pytest.raises(ValueError):
            quantize(buf([0]), 0.0)

    def test_dequantize_examples(self):
        out = dequantize([[0, 0], [4095, -4095], [2048, 1024]], 1.0, 10).samples
        assert out[0] == 0
        assert out[1] == pytest.approx(1 - 1j)
        assert out[2].real == pytest.approx(2048 / 4095)
        assert out[2].imag == pytest.approx(1024 / 4095)

    def test_dequantize_rejects_out_of_range(self):
        with pytest.raises(ValueError, match="sample 1"):
            dequantize([[0, 0], [0, 4096]])

    @given(st.lists(st.complex_numbers(max_magnitude=1.0, allow_nan=False), min_size=1, max_size=50),
           st.floats(0.1, 10))
    def test_error_bound(self, values, fs):
        x = np.array(values) * fs
        x = x.real.clip(-fs, fs) + 1j * x.imag.clip(-fs, fs)
        back = dequantize(quantize(buf(x), fs), fs).samples
        assert np.all(np.abs(back.real - x.real) <= fs / 2048)
        assert np.all(np.abs(back.imag - x.imag) <= fs / 2048)


class TestFraming:
    def test_empty(self):
        assert len(frame_words(np.zeros((0, 2)))) == 0

    def test_single_zero_word_layout(self):
        bits = frame_words([[0, 0]])
        expected = "10" + "0" * 13 + "0" + "01" + "0" * 13 + "0"
        assert "".join(map(str, bits)) == expected

    def test_field_positions(self):
        bits = frame_words([[-1, 5]], WordFormat(i_ctrl=1, q_ctrl=1))
        s = "".join(map(str, bits))
        assert s[2:15] == "1" * 13  # -1 in 13-bit two's complement
        assert s[15] == "1" and s[31] == "1"
        assert int(s[18:31], 2) == 5

    def test_two_samples_second_word_at_32(self):
        bits = frame_words([[0, 0], [1, 1]])
        assert len(bits) == 64
        assert list(bits[32:34]) == [1, 0]

    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.integers(-4096, 4095), st.integers(-4096, 4095)), max_size=40))
    def test_roundtrip(self, pairs):
        qs = np.array(pairs, dtype=np.int64).reshape(-1, 2)
        out, report = deframe_words(frame_words(qs))
        assert out.tolist() == qs.tolist()
        assert report.discarded_bits == 0

    def test_prepended_bit(self, rng):
        qs = rng.integers(-4096, 4096, (20, 2))
        bits = np.concatenate([[1], frame_words(qs)])
        out, report = deframe_words(bits)
        assert report.resync_offsets[0] == 1
        assert len(out) >= 18
        assert out.tolist() == qs[len(qs) - len(out):].tolist()

    def test_all_zero_stream(self):
        out, report = deframe_words(np.zeros(320, dtype=np.uint8))
        assert len(out) == 0
        assert report.discarded == [(0, 320)]

    @pytest.mark.parametrize("kind", ["insert", "delete"])
    def test_single_slip_recovers_after_two_words(self, rng, kind):
        for _ in range(200):
            n = int(rng.integers(10, 60))
            qs = rng.integers(-4096, 4096, (n, 2))
            bits = frame_words(qs)
            pos = int(rng.integers(1, len(bits) - 1))
            if kind == "insert":
                slipped = np.insert(bits, pos, rng.integers(0, 2))
            else:
                slipped = np.delete(bits, pos)
            out, _ = deframe_words(slipped)
            # every word starting at or after the second boundary following the slip is intact
            first_safe = pos // 32 + 2
            tail = qs[first_safe:].tolist()
            got = out.tolist()
            assert got[len(got) - len(tail):] == tail if tail else True

    def test_words_pack_big_endian(self):
        bits = frame_words([[0, 0]])
        words = bits_to_words(bits)
        assert words.tolist() == [0b10 << 30 | 0b01 << 14]
        assert words_to_bits(words).tolist() == bits.tolist()


class TestFiles:
    def test_iq_roundtrip(self, tmp_path, rng):
        x = (rng.standard_normal(100) + 1j * rng.standard_normal(100)).astype(np.complex64)
        path = tmp_path / "a.iq"
        write_iq_file(path, SampleBuffer(x, 250000), "test")
        back = read_iq_file(path)
        assert back.sample_rate_hz == 250000
        assert np.array_equal(back.samples, x.astype(complex))
        meta = json.loads((tmp_path / "a.iq.meta.json").read_text())
        assert meta == {"sample_rate_hz": 250000, "description": "test"}

    def test_raw_format_is_interleaved_le_float32(self, tmp_path):
        path = tmp_path / "b.iq"
        write_iq_file(path, SampleBuffer(np.array([1.5 - 2j]), 8))
        assert path.read_bytes() == np.array([1.5, -2.0], dtype="<f4").tobytes()

    def test_empty_buffer(self, tmp_path):
        path = tmp_path / "e.iq"
        write_iq_file(path, SampleBuffer(np.zeros(0, complex), 10))
        assert path.read_bytes() == b""
        assert len(read_iq_file(path)) == 0

    def test_eight_bytes_is_one_sample(self, tmp_path):
        path = tmp_path / "c.iq"
        path.write_bytes(np.array([0.25, 0.5], "<f4").tobytes())
        (tmp_path / "c.iq.meta.json").write_text('{"sample_rate_hz": 5, "description": ""}')
        assert read_iq_file(path).samples.tolist() == [0.25 + 0.5j]

    def test_odd_component_count(self, tmp_path):
        path = tmp_path / "d.iq"
        path.write_bytes(np.array([0.25], "<f4").tobytes())
        (tmp_path / "d.iq.meta.json").write_text('{"sample_rate_hz": 5, "description": ""}')
        with pytest.raises(ValueError, match="odd"):
            read_iq_file(path)

    def test_truncated_float(self, tmp_path):
        path = tmp_path / "t.iq"
        path.write_bytes(b"\x00" * 10)
        (tmp_path / "t.iq.meta.json").write_text('{"sample_rate_hz": 5, "description": ""}')
        with pytest.raises(ValueError):
            read_iq_file(path)

    def test_missing_sidecar(self, tmp_path):
        path = tmp_path / "m.iq"
        path.write_bytes(b"\x00" * 8)
        with pytest.raises(FileNotFoundError):
            read_iq_file(path)

    def test_word_file_roundtrip(self, tmp_path, rng):
        bits = frame_words(rng.integers(-4096, 4096, (7, 2)))
        path = tmp_path / "w.bin"
        write_word_file(path, bits)
        assert path.stat().st_size == 28
        assert read_word_file(path).tolist() == bits.tolist()
