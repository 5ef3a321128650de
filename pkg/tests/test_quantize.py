"""Bin spec construction and the value <-> class index mapping."""
import numpy as np
import pytest
from hypothesis import given, strategies as st

from glucast.quantize import (
    BinSpec,
    GLUCOSE_MAX,
    GLUCOSE_MIN,
    N_BINS,
    bin_to_value,
    coeff_bin_specs,
    dist_argmax_value,
    glucose_bins,
    value_to_bin,
)


class TestBinSpec:
    def test_glucose_spec_has_361_unit_bins(self):
        spec = glucose_bins()
        assert spec.n_bins == 361
        assert spec.width == 1.0
        assert (spec.min_value, spec.max_value) == (40.0, 400.0)

    def test_rejects_degenerate_range(self):
        with pytest.raises(ValueError):
            BinSpec(100.0, 100.0)
        with pytest.raises(ValueError):
            BinSpec(10.0, 5.0)
        with pytest.raises(ValueError):
            BinSpec(0.0, 1.0, n_bins=1)

    def test_dict_round_trip(self):
        spec = BinSpec(-3.5, 9.25, 17)
        assert BinSpec.from_dict(spec.to_dict()) == spec


class TestValueToBin:
    def test_known_glucose_values(self):
        spec = glucose_bins()
        assert value_to_bin(40.0, spec) == 0
        assert value_to_bin(400.0, spec) == 360
        assert value_to_bin(70.0, spec) == 30
        assert value_to_bin(100.0, spec) == 60

    def test_out_of_range_clamps_to_edge_bins(self):
        spec = glucose_bins()
        assert value_to_bin(-50.0, spec) == 0
        assert value_to_bin(1e6, spec) == 360

    def test_array_input_keeps_shape(self):
        spec = glucose_bins()
        out = value_to_bin(np.array([[40.0, 41.0], [399.0, 400.0]]), spec)
        assert out.shape == (2, 2)
        assert out.tolist() == [[0, 1], [359, 360]]

    def test_round_trip_exact_for_every_bin(self):
        # acceptance-level identity: decode(encode(center)) is lossless
        spec = glucose_bins()
        ks = np.arange(spec.n_bins)
        assert np.array_equal(value_to_bin(bin_to_value(ks, spec), spec), ks)

    @given(st.floats(min_value=40.0, max_value=400.0, allow_nan=False))
    def test_quantization_error_at_most_half_width(self, v):
        spec = glucose_bins()
        assert abs(bin_to_value(value_to_bin(v, spec), spec) - v) <= spec.width / 2

    @given(st.lists(st.floats(min_value=-5.0, max_value=25.0, allow_nan=False),
                    min_size=2, max_size=20))
    def test_monotone_in_value(self, values):
        spec = BinSpec(0.0, 20.0, 41)
        values = sorted(values)
        bins = [value_to_bin(v, spec) for v in values]
        assert bins == sorted(bins)


class TestBinToValue:
    def test_rejects_out_of_range_index(self):
        spec = glucose_bins()
        for k in (-1, 361, 10**6):
            with pytest.raises(IndexError):
                bin_to_value(k, spec)

    def test_centers_are_uniform(self):
        spec = BinSpec(2.0, 4.0, 5)
        centers = bin_to_value(np.arange(5), spec)
        assert np.allclose(np.diff(centers), spec.width)
        assert centers[0] == 2.0 and centers[-1] == 4.0


class TestDistArgmax:
    def test_modal_bin_decodes_to_its_center(self):
        spec = glucose_bins()
        probs = np.zeros(spec.n_bins)
        probs[60] = 1.0
        assert dist_argmax_value(probs, spec) == 100.0

    def test_tie_breaks_to_lower_index(self):
        spec = glucose_bins()
        assert dist_argmax_value(np.ones(spec.n_bins), spec) == spec.min_value

    def test_wrong_width_distribution_rejected(self):
        with pytest.raises(ValueError):
            dist_argmax_value(np.ones(10), glucose_bins())


class _FakeWindow:
    def __init__(self, target):
        self.target = np.asarray(target, dtype=float)


class TestCoeffBinSpecs:
    def test_ranges_cover_observed_coefficients(self):
        wins = [
            _FakeWindow([100, 102, 104, 106, 108, 110]),   # (100, 2)
            _FakeWindow([200, 195, 190, 185, 180, 175]),   # (200, -5)
        ]
        bias, slope = coeff_bin_specs(wins, 1)
        assert bias.min_value == pytest.approx(100.0)
        assert bias.max_value == pytest.approx(200.0)
        assert slope.min_value == pytest.approx(-5.0)
        assert slope.max_value == pytest.approx(2.0)
        assert bias.n_bins == slope.n_bins == N_BINS

    def test_bias_range_clamped_into_sensor_range(self):
        # extrapolated fits can put the intercept outside what a sensor
        # reports; the bias spec must stay inside [40, 400]
        wins = [
            _FakeWindow(np.linspace(400, 250, 6) + 90),    # intercept ~490
            _FakeWindow(np.linspace(45, 20, 6)),           # intercept ~45, values below 40 ok for fit
        ]
        bias, _ = coeff_bin_specs(wins, 1)
        assert GLUCOSE_MIN <= bias.min_value <= bias.max_value <= GLUCOSE_MAX

    def test_degenerate_range_widened(self):
        wins = [_FakeWindow([100.0] * 6), _FakeWindow([100.0] * 6)]
        bias, slope = coeff_bin_specs(wins, 1)
        assert bias.min_value < 100.0 < bias.max_value
        assert slope.min_value < 0.0 < slope.max_value

    def test_needs_two_windows(self):
        with pytest.raises(ValueError):
            coeff_bin_specs([_FakeWindow([1, 2, 3, 4, 5, 6])], 1)

    def test_quantized_coefficients_round_trip_within_one_width(self):
        rng = np.random.default_rng(5)
        wins = [_FakeWindow(rng.uniform(80, 200, size=6)) for _ in range(50)]
        specs = coeff_bin_specs(wins, 2)
        from glucast.polyfit import fit_poly

        for w in wins[:10]:
            coeffs = fit_poly(w.target, 2).coeffs
            for c, spec in zip(coeffs, specs):
                decoded = bin_to_value(value_to_bin(c, spec), spec)
                assert abs(decoded - c) <= spec.width
