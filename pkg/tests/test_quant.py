"""Fixed-point inference: rounding primitives against exact-arithmetic
oracles, bit-exactness, deviation bounds and file round trips.
"""

import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resonmpc.errors import ArgumentError, QuantizationError
from resonmpc.policy import forward_batch, init_network
from resonmpc.quant import (
    TANH_FRAC,
    TANH_RANGE,
    TANH_TABLE_SIZE,
    _frac_bits,
    _quantize_array,
    _rne_rshift,
    forward_q,
    forward_q_batch,
    load_quantized,
    quantization_report,
    quantize,
    save_quantized,
)


def small_qnet(seed=0, word_bits=16):
    net = init_network(seed=seed)
    rng = np.random.default_rng(seed)
    calib = np.column_stack([
        rng.uniform(-150, 150, 500),
        rng.uniform(-2000, 2000, 500),
        rng.uniform(0, 3000, 500),
    ])
    return net, calib, quantize(net, calib, word_bits=word_bits)


class TestRounding:
    @given(st.integers(-(2**40), 2**40), st.integers(1, 20))
    @settings(max_examples=300, deadline=None)
    def test_rshift_matches_rational_round_half_even(self, v, s):
        # oracle: exact rational division rounded half-to-even
        got = int(_rne_rshift(np.array([v], dtype=np.int64), s)[0])
        exact = Fraction(v, 2**s)
        floor = exact.numerator // exact.denominator
        frac = exact - floor
        if frac > Fraction(1, 2) or (frac == Fraction(1, 2) and floor % 2 == 1):
            floor += 1
        assert got == floor

    def test_rshift_negative_shift_is_left_shift(self):
        v = np.array([3, -5], dtype=np.int64)
        np.testing.assert_array_equal(_rne_rshift(v, -2), v * 4)

    @given(st.floats(-1e4, 1e4, allow_nan=False), st.integers(0, 12))
    @settings(max_examples=200, deadline=None)
    def test_quantize_array_round_half_even(self, x, frac):
        scaled = x * 2**frac
        if abs(scaled) >= 2**15 - 1:
            return
        got = int(_quantize_array(np.array([x]), frac, 16)[0])
        lo = int(np.floor(scaled))
        assert got in (lo, lo + 1)
        assert abs(got - scaled) <= 0.5 + 1e-9

    def test_quantize_array_overflow_rejected(self):
        with pytest.raises(QuantizationError):
            _quantize_array(np.array([100.0]), 12, 16)

    def test_frac_bits_examples(self):
        # max_abs 1.0 -> 1 integer bit + sign -> 14 fractional bits
        assert _frac_bits(1.0, 16) == 14
        assert _frac_bits(0.999, 16) == 14
        assert _frac_bits(3.0, 16) == 12
        assert _frac_bits(0.0, 16) == 15

    def test_frac_bits_representable(self):
        for m in [0.01, 0.5, 1.0, 7.3, 300.0, 3.2e4]:
            f = _frac_bits(m, 16)
            assert abs(np.rint(m * 2**f)) < 2**15


class TestQuantize:
    def test_rejects_non_tanh(self):
        from dataclasses import replace

        bad = replace(init_network(seed=0), activation="relu")
        with pytest.raises(ArgumentError):
            quantize(bad, np.zeros((1, 3)))

    def test_rejects_empty_calibration(self):
        net = init_network(seed=0)
        with pytest.raises(ArgumentError):
            quantize(net, np.zeros((0, 3)))

    def test_tanh_table_shape_and_endpoints(self):
        _, _, qnet = small_qnet()
        assert qnet.tanh_table.shape == (TANH_TABLE_SIZE,)
        assert qnet.tanh_table[0] == np.rint(np.tanh(-TANH_RANGE) * 2**TANH_FRAC)
        assert qnet.tanh_table[-1] == np.rint(np.tanh(TANH_RANGE) * 2**TANH_FRAC)
        # odd symmetry of tanh carries over to the table
        np.testing.assert_array_equal(qnet.tanh_table, -qnet.tanh_table[::-1])

    def test_words_fit_word_size(self):
        _, _, qnet = small_qnet()
        limit = 2**15
        for w in qnet.weight_words + qnet.bias_words:
            assert np.all(np.abs(w) < limit)

    def test_weight_words_match_float_weights(self):
        net, _, qnet = small_qnet()
        for w, words, frac in zip(net.weights, qnet.weight_words, qnet.weight_fracs):
            np.testing.assert_allclose(
                words / 2.0**frac, w, atol=0.5 / 2.0**frac + 1e-12
            )


class TestForwardQ:
    def test_bit_exact_repeatability(self, trained_qnet, sampling_box_points):
        a = forward_q_batch(trained_qnet, sampling_box_points[:500])
        b = forward_q_batch(trained_qnet, sampling_box_points[:500])
        np.testing.assert_array_equal(a, b)

    def test_single_matches_batch(self, trained_qnet, sampling_box_points):
        for x in sampling_box_points[:20]:
            u = forward_q(trained_qnet, x)
            row = forward_q_batch(trained_qnet, x.reshape(1, 3))[0]
            assert (u.f_sw, u.duty) == (row[0], row[1])

    def test_outputs_inside_box(self, trained_qnet):
        rng = np.random.default_rng(5)
        x = rng.uniform(-1e5, 1e5, size=(5000, 3))
        u = forward_q_batch(trained_qnet, x)
        assert np.all(u[:, 0] >= 30e3) and np.all(u[:, 0] <= 100e3)
        assert np.all(u[:, 1] >= 0.2) and np.all(u[:, 1] <= 0.8)

    def test_deviation_small_in_box(self, trained_net, trained_qnet, sampling_box_points):
        u_f = forward_batch(trained_net, sampling_box_points)
        u_q = forward_q_batch(trained_qnet, sampling_box_points)
        half = np.array([35e3, 0.3])
        rel = np.abs(u_q - u_f) / half
        assert rel.max() < 0.05

    def test_wider_words_reduce_deviation(self):
        net, calib, q16 = small_qnet(seed=2)
        q24 = quantize(net, calib, word_bits=24)
        u_f = forward_batch(net, calib)
        half = np.array([35e3, 0.3])
        d16 = np.abs(forward_q_batch(q16, calib) - u_f) / half
        d24 = np.abs(forward_q_batch(q24, calib) - u_f) / half
        assert d24.max() < d16.max()
        assert d24.mean() < d16.mean()


class TestReport:
    def test_report_fields_and_bounds(self, trained_net, trained_qnet, sampling_box_points):
        rep = quantization_report(trained_net, trained_qnet, sampling_box_points)
        assert rep["n_samples"] == 10000
        assert rep["word_bits"] == 16
        assert len(rep["max_rel_deviation"]) == 2
        assert all(m >= 0 for m in rep["max_rel_deviation"])
        assert all(
            mean <= mx
            for mean, mx in zip(rep["mean_rel_deviation"], rep["max_rel_deviation"])
        )
        assert all(0 < u <= 1 for u in rep["weight_range_utilization"])
        json.dumps(rep)  # must be serializable as-is

    def test_report_rejects_empty(self, trained_net, trained_qnet):
        with pytest.raises(ArgumentError):
            quantization_report(trained_net, trained_qnet, np.zeros((0, 3)))


class TestFiles:
    def test_roundtrip_bit_exact(self, tmp_path, trained_qnet, sampling_box_points):
        path = tmp_path / "q.json"
        save_quantized(trained_qnet, path)
        back = load_quantized(path)
        np.testing.assert_array_equal(
            forward_q_batch(back, sampling_box_points[:300]),
            forward_q_batch(trained_qnet, sampling_box_points[:300]),
        )

    def test_format_version_checked(self, tmp_path, trained_qnet):
        path = tmp_path / "q.json"
        save_quantized(trained_qnet, path)
        doc = json.loads(path.read_text())
        doc["format_version"] = 999
        path.write_text(json.dumps(doc))
        with pytest.raises(ArgumentError):
            load_quantized(path)
