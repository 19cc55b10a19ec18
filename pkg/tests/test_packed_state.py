"""Bit packing, the checkpoint container, and footprint accounting."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowbit_optim.levels import build_de_levels, build_linear_levels, build_log_levels
from lowbit_optim.packed_state import (
    HEADER_BYTES,
    STORAGE_BITS,
    BlockQuantizedTensor,
    PackedCodes,
    StateFormatError,
    StateVersionError,
    deserialize,
    footprint_bytes,
    footprint_report,
    from_values,
    pack,
    serialize,
    state_codes,
    to_values,
    unpack,
)
from lowbit_optim.quantizer import BlockQuantization, RoundingMode


class TestPack:
    def test_2bit_known_byte(self):
        packed = pack([3, 0, 1, 2], 2)
        assert packed.buffer == bytes([0x93])  # 3 | 0<<2 | 1<<4 | 2<<6

    def test_4bit_known_byte(self):
        assert pack([0xA, 0x5], 4).buffer == bytes([0x5A])

    def test_padding_bits_zero(self):
        packed = pack([1, 2, 3, 0, 1], 2)
        assert len(packed.buffer) == 2
        assert packed.buffer[1] >> 2 == 0  # six padding bits

    @pytest.mark.parametrize("bits", [2, 4, 8])
    def test_round_trip_examples(self, bits):
        rng = np.random.default_rng(bits)
        codes = rng.integers(0, 1 << bits, size=77, dtype=np.uint8)
        np.testing.assert_array_equal(unpack(pack(codes, bits)), codes)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            pack([4], 2)

    def test_rejects_unpackable_width(self):
        with pytest.raises(ValueError):
            pack([1], 3)

    def test_empty(self):
        packed = pack([], 4)
        assert packed.buffer == b""
        assert unpack(packed).size == 0

    def test_inconsistent_buffer_rejected(self):
        with pytest.raises(ValueError):
            PackedCodes(2, 5, bytes(1))  # 5 codes need 2 bytes


@settings(max_examples=120, deadline=None)
@given(
    bits=st.sampled_from([2, 4, 8]),
    codes=st.lists(st.integers(min_value=0, max_value=255), max_size=1000),
)
def test_pack_unpack_round_trip_property(bits, codes):
    codes = [c % (1 << bits) for c in codes]
    packed = pack(codes, bits)
    assert len(packed.buffer) == math.ceil(len(codes) * bits / 8)
    np.testing.assert_array_equal(unpack(packed), np.asarray(codes, dtype=np.uint8))


def _sample_state(scheme="log", length=1024, block_size=128, seed=0):
    rng = np.random.default_rng(seed)
    if scheme == "log":
        cfg = BlockQuantization(build_log_levels(2, 0.5), RoundingMode.LOG_DITHER, block_size)
        values = np.abs(rng.normal(size=length))
    elif scheme == "de":
        cfg = BlockQuantization(build_de_levels(4, signed=True), RoundingMode.STOCHASTIC,
                                block_size)
        values = rng.normal(size=length)
    else:
        cfg = BlockQuantization(build_linear_levels(8), RoundingMode.NEAREST, block_size)
        values = rng.uniform(0, 1, length)
    return from_values(values, cfg, rng), cfg


class TestContainer:
    @pytest.mark.parametrize("scheme", ["log", "de", "linear"])
    @pytest.mark.parametrize("length", [0, 1, 127, 128, 129, 1000])
    def test_serialize_round_trip_bit_exact(self, scheme, length):
        state, _ = _sample_state(scheme, length=length)
        assert deserialize(serialize(state)) == state

    def test_golden_container_bytes(self):
        """The container layout is frozen: these exact bytes must never change."""
        from lowbit_optim.levels import SchemeKind

        state = BlockQuantizedTensor(
            packed=pack(np.array([0, 1, 2, 3, 2, 1], dtype=np.uint8), 2),
            scales=np.array([0.5, 1.0], dtype=np.float32),
            bases=None,
            block_size=4,
            length=6,
            scheme=SchemeKind.LINEAR_UNSIGNED,
            bits=2,
        )
        golden = ("4c425131010000020200040000000600000000000000"
                  "000000000000000000000000003f0000803fe406")
        assert serialize(state).hex() == golden
        assert deserialize(bytes.fromhex(golden)) == state

        with_bases = BlockQuantizedTensor(
            packed=pack(np.array([3, 0], dtype=np.uint8), 2),
            scales=np.array([2.0], dtype=np.float32),
            bases=np.array([0.25], dtype=np.float32),
            block_size=128,
            length=2,
            scheme=SchemeKind.LOG_UNSIGNED,
            bits=2,
        )
        golden_log = ("4c4251310100050202018000000002000000000000000000"
                      "0000000000000000000000400000803e03")
        assert serialize(with_bases).hex() == golden_log
        assert deserialize(bytes.fromhex(golden_log)) == with_bases

    def test_truncated_stream_rejected(self):
        state, _ = _sample_state()
        blob = serialize(state)
        with pytest.raises(StateFormatError):
            deserialize(blob[:-1])
        with pytest.raises(StateFormatError):
            deserialize(blob + b"\x00")
        with pytest.raises(StateFormatError):
            deserialize(blob[:10])

    def test_bad_magic_rejected(self):
        blob = bytearray(serialize(_sample_state()[0]))
        blob[0] = ord("X")
        with pytest.raises(StateFormatError):
            deserialize(bytes(blob))

    def test_version_mismatch_rejected(self):
        blob = bytearray(serialize(_sample_state()[0]))
        blob[4] = 99
        with pytest.raises(StateVersionError):
            deserialize(bytes(blob))

    def test_corrupt_metadata_rejected(self):
        state, _ = _sample_state("de")
        blob = bytearray(serialize(state))
        # scribble a negative scale into the first metadata float
        blob[HEADER_BYTES:HEADER_BYTES + 4] = np.float32(-1.0).tobytes()
        with pytest.raises(StateFormatError):
            deserialize(bytes(blob))

    def test_dequantize_after_round_trip_identical(self):
        state, _ = _sample_state("de", length=513, block_size=64, seed=3)
        np.testing.assert_array_equal(to_values(state), to_values(deserialize(serialize(state))))


class TestFootprint:
    def test_log_1024_block128(self):
        state, _ = _sample_state("log", length=1024, block_size=128)
        assert footprint_bytes(state) == 256 + 32 + 32 + HEADER_BYTES

    def test_de_1024_block128(self):
        state, _ = _sample_state("de", length=1024, block_size=128)
        assert footprint_bytes(state) == 512 + 32 + HEADER_BYTES

    def test_empty_tensor_header_only(self):
        state, _ = _sample_state("linear", length=0)
        assert footprint_bytes(state) == HEADER_BYTES

    def test_amortized_metadata_bits(self):
        # scale-only metadata costs 32/block bits per element, scale+base 64/block
        state, _ = _sample_state("de", length=128 * 1024, block_size=128)
        report = footprint_report(state)
        meta_bits = 8 * (report["scale_bytes"] + report["base_bytes"]) / state.length
        assert meta_bits == pytest.approx(32 / 128)
        state, _ = _sample_state("log", length=128 * 1024, block_size=128)
        report = footprint_report(state)
        meta_bits = 8 * (report["scale_bytes"] + report["base_bytes"]) / state.length
        assert meta_bits == pytest.approx(64 / 128)

    def test_report_totals(self):
        state, _ = _sample_state("log", length=1000, block_size=128)
        report = footprint_report(state)
        assert report["total_bytes"] == footprint_bytes(state)
        assert report["bits_per_element"] == pytest.approx(
            8 * (report["packed_bytes"] + report["scale_bytes"] + report["base_bytes"]) / 1000)


class TestStorageWidths:
    def test_3bit_schemes_stored_at_4(self):
        cfg = BlockQuantization(build_de_levels(3, signed=True), RoundingMode.NEAREST, 128)
        state = from_values(np.random.default_rng(0).normal(size=100), cfg)
        assert state.packed.bits == 4
        assert STORAGE_BITS[3] == 4

    @pytest.mark.parametrize("bits", range(2, 9))
    def test_storage_width_is_next_packable(self, bits):
        assert STORAGE_BITS[bits] in (2, 4, 8)
        assert STORAGE_BITS[bits] >= bits
        for candidate in (2, 4, 8):
            if candidate >= bits:
                assert STORAGE_BITS[bits] == candidate
                break

    def test_quantized_tensor_validates_consistency(self):
        state, _ = _sample_state("linear", length=100)
        with pytest.raises(ValueError):
            BlockQuantizedTensor(state.packed, state.scales[:-1], None, state.block_size,
                                 state.length, state.scheme, state.bits)

    def test_codes_accessor(self):
        state, _ = _sample_state("linear", length=10)
        assert state_codes(state).shape == (10,)

    def test_scale_beyond_float32_rejected(self):
        cfg = BlockQuantization(build_linear_levels(8), RoundingMode.NEAREST, 128)
        with pytest.raises(ValueError, match="float32"):
            from_values(np.array([1e39]), cfg)
