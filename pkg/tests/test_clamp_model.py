"""Resize-and-clamp operator and the piecewise compute model."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpulab.clamp_model import (
    ClampComputeModel,
    ClampSpec,
    PiecewiseFlatAffine,
    Resolution,
    apply_clamp,
    effective_pixels,
    predict_compute,
    predict_throughput,
)
from cpulab.errors import InputError, StateError

resolutions = st.builds(
    Resolution,
    st.integers(min_value=1, max_value=8192),
    st.integers(min_value=1, max_value=8192),
)
clamps = st.builds(
    ClampSpec,
    st.integers(min_value=1, max_value=4096),
    st.integers(min_value=1, max_value=4096),
)


class TestApplyClamp:
    def test_identity_below_clamp(self):
        r = Resolution(640, 480)
        assert apply_clamp(r, ClampSpec(1024, 720)) == r

    def test_width_bound_scales_both_dimensions(self):
        got = apply_clamp(Resolution(1920, 1080), ClampSpec(1024, 720))
        assert got == Resolution(1024, 576)

    def test_height_bound_with_floor(self):
        got = apply_clamp(Resolution(1024, 720), ClampSpec(714, 496))
        assert got == Resolution(705, 496)

    def test_exact_multiple_of_clamp(self):
        got = apply_clamp(Resolution(2048, 1440), ClampSpec(1024, 720))
        assert got == Resolution(1024, 720)

    def test_extreme_aspect_stays_valid(self):
        got = apply_clamp(Resolution(1, 8000), ClampSpec(100, 100))
        assert got.width >= 1 and got.height >= 1

    @given(resolutions, clamps)
    @settings(max_examples=300, deadline=None)
    def test_idempotent(self, r, clamp):
        once = apply_clamp(r, clamp)
        assert apply_clamp(once, clamp) == once

    @given(resolutions, clamps)
    @settings(max_examples=300, deadline=None)
    def test_result_fits_or_is_identity(self, r, clamp):
        u = apply_clamp(r, clamp)
        if r.width <= clamp.max_w and r.height <= clamp.max_h:
            assert u == r
        else:
            assert u.width <= max(clamp.max_w, 1)
            assert u.height <= max(clamp.max_h, 1)

    @given(resolutions, clamps, st.integers(min_value=1, max_value=6))
    @settings(max_examples=300, deadline=None)
    def test_pixel_monotonicity_along_aspect_ray(self, r, clamp, k):
        # componentwise-larger input with the same aspect never yields fewer
        # effective pixels
        bigger = Resolution(r.width * k, r.height * k)
        assert effective_pixels(apply_clamp(r, clamp)) <= effective_pixels(
            apply_clamp(bigger, clamp)
        )

    @given(resolutions, clamps, clamps)
    @settings(max_examples=300, deadline=None)
    def test_smaller_clamp_never_more_pixels(self, r, a, b):
        # nested clamps: the tighter one bounds effective pixels from below
        small = ClampSpec(min(a.max_w, b.max_w), min(a.max_h, b.max_h))
        big = ClampSpec(max(a.max_w, b.max_w), max(a.max_h, b.max_h))
        assert effective_pixels(apply_clamp(r, small)) <= effective_pixels(
            apply_clamp(r, big)
        )


class TestEffectivePixels:
    @pytest.mark.parametrize(
        "res, expected",
        [
            (Resolution(1024, 720), 737_280),
            (Resolution(854, 594), 507_276),
            (Resolution(714, 496), 354_144),
            (Resolution(1, 1), 1),
        ],
    )
    def test_counts(self, res, expected):
        assert effective_pixels(res) == expected


def model(knee=737_280, flat=1000.0, k0=100.0, k1=1e-3, tps=False):
    return ClampComputeModel(
        compute=PiecewiseFlatAffine(knee, flat, k0, k1),
        throughput=PiecewiseFlatAffine(knee, 5.0, 30.0, -2e-5) if tps else None,
    )


class TestPredictCompute:
    def test_dominating_resolutions_same_aspect_agree(self):
        clamp = ClampSpec(1024, 720)
        m = model()
        at = predict_compute(Resolution(1024, 720), clamp, m)
        above = predict_compute(Resolution(2048, 1440), clamp, m)
        far = predict_compute(Resolution(4096, 2880), clamp, m)
        assert at == above == far == m.c_flat

    def test_below_clamp_uses_affine_form(self):
        clamp = ClampSpec(1024, 720)
        got = predict_compute(Resolution(100, 100), clamp, model())
        assert got == pytest.approx(100.0 + 1e-3 * 10_000)

    def test_unfitted_model_is_state_error(self):
        with pytest.raises(StateError):
            predict_compute(Resolution(10, 10), ClampSpec(100, 100), None)
        with pytest.raises(StateError):
            predict_throughput(Resolution(10, 10), ClampSpec(100, 100), model())

    def test_flat_on_dominating_ray(self):
        clamp = ClampSpec(854, 594)
        m = model(knee=507_276)
        vals = {
            predict_compute(Resolution(854 * k, 594 * k), clamp, m) for k in (1, 2, 3, 5)
        }
        assert vals == {m.c_flat}

    @given(resolutions, st.integers(min_value=1, max_value=4))
    @settings(max_examples=200, deadline=None)
    def test_knee_shift_ordering(self, r, k):
        # tighter clamp never predicts more compute; equal when r fits it
        small = ClampSpec(500, 400)
        big = ClampSpec(500 * k, 400 * k)
        m = model(knee=10**9, flat=10**9 * 1e-3 + 100.0)  # monotone configuration
        lo = predict_compute(r, small, m)
        hi = predict_compute(r, big, m)
        assert lo <= hi + 1e-9
        if r.width <= small.max_w and r.height <= small.max_h:
            assert lo == hi

    def test_throughput_prediction(self):
        m = model(tps=True)
        clamp = ClampSpec(1024, 720)
        flat_tps = predict_throughput(Resolution(2048, 1440), clamp, m)
        small_tps = predict_throughput(Resolution(100, 100), clamp, m)
        assert flat_tps == 5.0
        assert small_tps > flat_tps  # fewer pixels decode faster


class TestParsing:
    def test_resolution_parse(self):
        assert Resolution.parse("1024x720") == Resolution(1024, 720)
        assert ClampSpec.parse("854X594") == ClampSpec(854, 594)

    def test_bad_parse(self):
        with pytest.raises(InputError):
            Resolution.parse("1024")
        with pytest.raises(InputError):
            Resolution.parse("axb")

    def test_invalid_dimensions(self):
        with pytest.raises(InputError):
            Resolution(0, 10)
        with pytest.raises(InputError):
            ClampSpec(10, 0)
