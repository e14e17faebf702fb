import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kvqlab.errors import FormatError, ShapeError, SpecError
from kvqlab.numerics import Rng
from kvqlab.quantizer import (
    ALLOWED_BITS,
    Axis,
    QuantizedTensor,
    QuantSpec,
    dequantize,
    pack_codes,
    quant_error,
    quantize,
    unpack_codes,
)


def element_scales(q):
    """Per-element scale matrix via the documented group map."""
    out = np.empty((q.rows, q.cols))
    for r in range(q.rows):
        for c in range(q.cols):
            out[r, c] = q.scales[q.group_index(r, c)]
    return out


class TestQuantSpec:
    def test_rejects_bad_bits(self):
        with pytest.raises(SpecError):
            QuantSpec(3)

    def test_rejects_bad_group(self):
        with pytest.raises(SpecError):
            QuantSpec(2, Axis.PER_TOKEN, 0)

    def test_passthrough_sentinel(self):
        assert QuantSpec(None).is_passthrough
        assert not QuantSpec(2).is_passthrough


class TestQuantizeHandExamples:
    def test_one_bit_row(self):
        q = quantize([[0.0, 0.4, 0.6, 1.0]], QuantSpec(1, Axis.PER_TOKEN, 4))
        assert list(unpack_codes(q.codes, 1, 4)) == [0, 0, 1, 1]
        np.testing.assert_array_equal(q.zeros, [0.0])
        np.testing.assert_array_equal(q.scales, [1.0])
        np.testing.assert_array_equal(dequantize(q), [[0.0, 0.0, 1.0, 1.0]])

    def test_two_bit_lattice_row(self):
        q = quantize([[1.0, 3.0, 5.0, 7.0]], QuantSpec(2, Axis.PER_TOKEN, 4))
        assert list(unpack_codes(q.codes, 2, 4)) == [0, 1, 2, 3]
        np.testing.assert_array_equal(q.zeros, [1.0])
        np.testing.assert_array_equal(q.scales, [2.0])
        np.testing.assert_array_equal(dequantize(q), [[1.0, 3.0, 5.0, 7.0]])

    @pytest.mark.parametrize("bits", ALLOWED_BITS)
    def test_constant_row_degenerate_group(self, bits):
        q = quantize([[2.0, 2.0, 2.0, 2.0]], QuantSpec(bits, Axis.PER_TOKEN, 4))
        np.testing.assert_array_equal(q.zeros, [2.0])
        np.testing.assert_array_equal(q.scales, [1.0])
        assert list(unpack_codes(q.codes, bits, 4)) == [0, 0, 0, 0]
        np.testing.assert_array_equal(dequantize(q), [[2.0, 2.0, 2.0, 2.0]])

    def test_rejects_non_multiple_extent(self):
        with pytest.raises(ShapeError):
            quantize(np.zeros((2, 6)), QuantSpec(2, Axis.PER_TOKEN, 4))

    def test_rejects_passthrough(self):
        with pytest.raises(SpecError):
            quantize(np.zeros((2, 4)), QuantSpec(None))


class TestQuantError:
    def test_constant_matrix_zero_error(self):
        err = quant_error(np.full((4, 4), 1.5), QuantSpec(2, Axis.PER_TOKEN, 4))
        np.testing.assert_array_equal(err, np.zeros((4, 4)))

    def test_one_bit_hand_error(self):
        err = quant_error([[0.0, 0.4, 0.6, 1.0]], QuantSpec(1, Axis.PER_TOKEN, 4))
        np.testing.assert_allclose(err, [[0.0, 0.4, -0.4, 0.0]], rtol=0, atol=1e-15)

    @pytest.mark.parametrize("axis", [Axis.PER_TOKEN, Axis.PER_CHANNEL])
    @pytest.mark.parametrize("bits", ALLOWED_BITS)
    def test_half_step_bound_random(self, bits, axis):
        m = Rng(bits * 7 + (axis is Axis.PER_TOKEN)).matrix(8, 8)
        spec = QuantSpec(bits, axis, 4)
        err = quant_error(m, spec)
        bound = element_scales(quantize(m, spec)) / 2.0 + 1e-12
        assert np.all(np.abs(err) <= bound)


class TestPacking:
    def test_worked_bytes(self):
        assert pack_codes([0, 1, 2, 3], 2) == bytes([0xE4])
        assert pack_codes([1, 0, 1, 1, 0, 0, 0, 1], 1) == bytes([0x8D])
        assert pack_codes([7, 255], 8) == bytes([0x07, 0xFF])

    def test_worked_bytes_inverse(self):
        assert list(unpack_codes(bytes([0xE4]), 2, 4)) == [0, 1, 2, 3]
        assert list(unpack_codes(bytes([0x8D]), 1, 8)) == [1, 0, 1, 1, 0, 0, 0, 1]
        assert list(unpack_codes(b"\xab\xcd", 8, 2)) == [0xAB, 0xCD]

    def test_count_zero(self):
        assert list(unpack_codes(b"\xff\x00", 4, 0)) == []

    def test_code_overflow(self):
        with pytest.raises(ValueError):
            pack_codes([4], 2)

    def test_unaligned_count(self):
        with pytest.raises(ValueError):
            pack_codes([1, 1, 1], 2)

    def test_bad_bits(self):
        with pytest.raises(SpecError):
            pack_codes([0], 3)

    def test_insufficient_bytes(self):
        with pytest.raises(FormatError):
            unpack_codes(b"\x00", 4, 3)

    @settings(max_examples=200, deadline=None)
    @given(
        st.sampled_from(ALLOWED_BITS),
        st.binary(min_size=0, max_size=64),
    )
    def test_pack_unpack_bijection(self, bits, raw):
        count = len(raw) * 8 // bits
        codes = unpack_codes(raw, bits, count)
        assert pack_codes(codes, bits) == raw

    @settings(max_examples=200, deadline=None)
    @given(
        st.sampled_from(ALLOWED_BITS),
        st.integers(min_value=0, max_value=2**32),
        st.integers(min_value=0, max_value=40),
    )
    def test_unpack_pack_identity(self, bits, seed, n_bytes):
        codes = np.random.default_rng(seed).integers(
            0, 2**bits, size=n_bytes * 8 // bits, dtype=np.uint8
        )
        out = unpack_codes(pack_codes(codes, bits), bits, len(codes))
        assert np.array_equal(out, codes)

    def test_large_stream_uses_same_layout(self):
        codes = np.random.default_rng(0).integers(0, 4, size=4096, dtype=np.uint8)
        packed = pack_codes(codes, 2)
        small = np.concatenate(
            [unpack_codes(packed[i : i + 1], 2, 4) for i in range(len(packed))]
        )
        assert np.array_equal(small, unpack_codes(packed, 2, 4096))


class TestRoundTripProperties:
    @pytest.mark.parametrize("axis", [Axis.PER_TOKEN, Axis.PER_CHANNEL])
    @pytest.mark.parametrize("group", [4, 32])
    @pytest.mark.parametrize("bits", ALLOWED_BITS)
    def test_round_trip_bound(self, bits, axis, group):
        m = Rng(hash((bits, group)) & 0xFFFF).matrix(32, 32)
        spec = QuantSpec(bits, axis, group)
        q = quantize(m, spec)
        err = np.abs(m - dequantize(q))
        assert np.all(err <= element_scales(q) / 2.0 + 1e-9)

    def test_group_extremes_reconstruct(self):
        m = Rng(77).matrix(16, 16)
        spec = QuantSpec(2, Axis.PER_TOKEN, 4)
        q = quantize(m, spec)
        back = dequantize(q)
        lines = m.reshape(16, 4, 4)
        back_lines = back.reshape(16, 4, 4)
        mins = lines.min(axis=2)
        maxs = lines.max(axis=2)
        for i in range(16):
            for g in range(4):
                where_min = lines[i, g] == mins[i, g]
                # the group minimum is the zero-point: exact
                assert np.all(back_lines[i, g][where_min] == mins[i, g])
                where_max = lines[i, g] == maxs[i, g]
                # the max lands on code 2^b - 1; reconstruction is exact up
                # to the rounding of scale * (2^b - 1)
                ulps = 4 * np.spacing(np.abs(maxs[i, g]))
                assert np.all(np.abs(back_lines[i, g][where_max] - maxs[i, g]) <= ulps)

    def test_error_monotone_in_bits(self):
        trials = 100
        mean_abs = {bits: 0.0 for bits in ALLOWED_BITS}
        for i in range(trials):
            m = Rng(1000 + i).matrix(8, 8)
            for bits in ALLOWED_BITS:
                err = quant_error(m, QuantSpec(bits, Axis.PER_TOKEN, 8))
                mean_abs[bits] += float(np.mean(np.abs(err))) / trials
        assert mean_abs[8] <= mean_abs[4] <= mean_abs[2] <= mean_abs[1]

    def test_transposition_duality(self):
        m = Rng(31).matrix(12, 8)
        per_token = quantize(m, QuantSpec(2, Axis.PER_TOKEN, 4))
        per_channel = quantize(m.T.copy(), QuantSpec(2, Axis.PER_CHANNEL, 4))
        assert per_token.codes == per_channel.codes
        np.testing.assert_array_equal(per_token.scales, per_channel.scales)
        np.testing.assert_array_equal(per_token.zeros, per_channel.zeros)

    def test_group_count_invariant(self):
        m = Rng(13).matrix(8, 12)
        q_tok = quantize(m, QuantSpec(2, Axis.PER_TOKEN, 4))
        assert q_tok.group_count == 8 * (12 // 4)
        q_chan = quantize(m, QuantSpec(2, Axis.PER_CHANNEL, 4))
        assert q_chan.group_count == 12 * (8 // 4)

    def test_scales_positive(self):
        m = Rng(99).matrix(8, 8)
        m[0, :4] = 5.0  # degenerate group
        q = quantize(m, QuantSpec(4, Axis.PER_TOKEN, 4))
        assert np.all(q.scales > 0.0)


class TestDequantizeValidation:
    def test_truncated_codes(self):
        q = quantize(Rng(2).matrix(4, 8), QuantSpec(2, Axis.PER_TOKEN, 4))
        bad = QuantizedTensor(
            rows=q.rows, cols=q.cols, spec=q.spec,
            codes=q.codes[:-1], scales=q.scales, zeros=q.zeros,
        )
        with pytest.raises(FormatError):
            dequantize(bad)

    def test_wrong_group_metadata(self):
        q = quantize(Rng(2).matrix(4, 8), QuantSpec(2, Axis.PER_TOKEN, 4))
        bad = QuantizedTensor(
            rows=q.rows, cols=q.cols, spec=q.spec,
            codes=q.codes, scales=q.scales[:-1], zeros=q.zeros[:-1],
        )
        with pytest.raises(FormatError):
            dequantize(bad)
