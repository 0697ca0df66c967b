"""Unit tests for boxes, relative targets, and the constrained pair sampler."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spssl.geometry import (Box, SamplerConstraints, SamplingBudgetError,
                            SpatialTarget, dice_overlap, ks_statistic,
                            relative_target, sample_view_pair,
                            validate_distribution)


def boxes(draw):
    x = draw(st.floats(-50, 50))
    y = draw(st.floats(-50, 50))
    w = draw(st.floats(0.1, 100))
    h = draw(st.floats(0.1, 100))
    return Box(x, y, w, h)


box_strategy = st.builds(
    Box,
    st.floats(-50, 50), st.floats(-50, 50),
    st.floats(0.1, 100), st.floats(0.1, 100),
)


class TestBox:
    def test_area(self):
        assert Box(0, 0, 4, 5).area == 20

    def test_rejects_nonpositive_sides(self):
        with pytest.raises(ValueError):
            Box(0, 0, 0, 5)
        with pytest.raises(ValueError):
            Box(0, 0, 5, -1)

    def test_validate_inside_source(self):
        Box(1, 1, 10, 10).validate(32, 32)
        with pytest.raises(ValueError):
            Box(25, 1, 10, 10).validate(32, 32)
        with pytest.raises(ValueError):
            Box(1, 1, 10, 10).validate(32, 32, min_side=11)


class TestRelativeTarget:
    def test_identical_boxes_give_identity(self):
        b = Box(3.0, 7.0, 11.0, 13.0)
        tgt = relative_target(b, b)
        assert tgt.p == (0.0, 0.0)
        assert tgt.s == (1.0, 1.0)

    def test_hand_oracle(self):
        # offset (20, 15) in a 40x30 reference; target sides 20x60
        ref = Box(10, 20, 40, 30)
        tgt = Box(30, 35, 20, 60)
        out = relative_target(ref, tgt)
        assert out.p == (0.5, 0.5)
        assert out.s == (0.5, 2.0)

    def test_center_convention(self):
        ref = Box(0, 0, 10, 10)
        tgt = Box(10, 10, 10, 10)
        out = relative_target(ref, tgt, center_offsets=True)
        assert out.p == (1.0, 1.0)

    def test_corner_and_center_agree_at_equal_scale_shift(self):
        ref = Box(0, 0, 10, 10)
        tgt = Box(5, 5, 10, 10)  # s = 1 so both conventions coincide
        corner = relative_target(ref, tgt)
        center = relative_target(ref, tgt, center_offsets=True)
        assert corner.p == center.p


class TestDice:
    def test_identical_is_one(self):
        b = Box(0, 0, 5, 5)
        assert dice_overlap(b, b) == 1.0

    def test_disjoint_is_zero(self):
        assert dice_overlap(Box(0, 0, 5, 5), Box(10, 10, 5, 5)) == 0.0

    def test_half_overlap_oracle(self):
        # intersection 12.5, areas 25 each: 2*12.5/50 = 0.5
        assert dice_overlap(Box(0, 0, 5, 5), Box(2.5, 0, 5, 5)) == 0.5

    @settings(max_examples=50, deadline=None)
    @given(a=box_strategy, b=box_strategy)
    def test_symmetric_and_bounded(self, a, b):
        d = dice_overlap(a, b)
        assert 0.0 <= d <= 1.0 + 1e-12
        assert d == pytest.approx(dice_overlap(b, a), abs=1e-12)


class TestSampler:
    def test_invariants_hold_over_many_draws(self):
        c = SamplerConstraints()
        rng = np.random.default_rng(0)
        p_lo, p_hi = c.rel_pos_range
        for _ in range(300):
            pair = sample_view_pair((224, 224), c, rng)
            pair.ref_box.validate(224, 224, min_side=c.min_view_px)
            pair.tgt_box.validate(224, 224, min_side=c.min_view_px)
            assert pair.dice <= c.max_dice
            assert p_lo <= pair.target.p[0] <= p_hi
            assert p_lo <= pair.target.p[1] <= p_hi
            for s in pair.target.s:
                assert c.rel_scale_range[0] <= s <= c.rel_scale_range[1]

    def test_target_matches_box_geometry(self):
        c = SamplerConstraints()
        rng = np.random.default_rng(1)
        for _ in range(100):
            pair = sample_view_pair((224, 224), c, rng)
            recomputed = relative_target(pair.ref_box, pair.tgt_box, c.center_offsets)
            np.testing.assert_allclose(recomputed.p, pair.target.p, atol=1e-9)
            np.testing.assert_allclose(recomputed.s, pair.target.s, atol=1e-9)

    def test_rectangular_source(self):
        c = SamplerConstraints()
        rng = np.random.default_rng(2)
        for _ in range(50):
            pair = sample_view_pair((320, 180), c, rng)
            pair.ref_box.validate(320, 180)
            pair.tgt_box.validate(320, 180)

    def test_infeasible_constraints_exhaust_budget(self):
        # overlapping draws only (p ~ 0, s ~ 1) but a zero Dice ceiling
        c = SamplerConstraints(rel_pos_range=(-0.01, 0.01), rel_scale_range=(0.99, 1.01),
                               max_dice=0.0, max_attempts=20)
        with pytest.raises(SamplingBudgetError):
            sample_view_pair((224, 224), c, np.random.default_rng(0))

    def test_constraint_validation(self):
        with pytest.raises(ValueError):
            SamplerConstraints(ref_scale_range=(0.5, 0.5))
        with pytest.raises(ValueError):
            SamplerConstraints(max_dice=1.0)
        with pytest.raises(ValueError):
            SamplerConstraints(rel_scale_range=(-1.0, 2.0))


class TestKsStatistic:
    def test_perfect_grid_is_small(self):
        n = 1000
        xs = (np.arange(n) + 0.5) / n
        assert ks_statistic(xs, lambda x: x) < 1.0 / n + 1e-12

    def test_constant_sample_is_large(self):
        xs = np.full(100, 0.5)
        assert ks_statistic(xs, lambda x: x) >= 0.49

    def test_shifted_distribution_detected(self):
        rng = np.random.default_rng(0)
        xs = rng.uniform(0.25, 1.0, 5000)
        assert ks_statistic(xs, lambda x: np.clip(x, 0, 1)) > 0.2


class TestValidationReport:
    def test_report_fields_and_serialization(self):
        report = validate_distribution(1000, seed=3)
        assert report.n == 1000
        assert set(report.ks) == {"p_x", "p_y", "log_s_x", "log_s_y"}
        assert 0.0 < report.acceptance_rate <= 1.0
        text = report.serialize()
        assert text.startswith("spssl-validation-report v1")
        assert "[offset_heatmap]" in text
        assert "[dice_histogram]" in text
        assert text.rstrip().endswith("[end]")

    def test_rejects_tiny_n(self):
        with pytest.raises(ValueError):
            validate_distribution(10, seed=0)
