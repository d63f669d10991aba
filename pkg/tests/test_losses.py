import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgml.losses import (NEGATIVE, POSITIVE, DegenerateBatchError, LossParams,
                         PairSample, bce, bdl, bdl_batch, sbdl_batch,
                         sbdl_negative, sbdl_positive, sgml_objective)

LN2 = 0.6931471805599453

# High-precision softplus values, frozen from a 50-digit evaluation of
# log(1 + exp(x)).
SP_M08 = 0.37110066594777772601   # x = -0.8
SP_P08 = 1.1711006659477777260    # x = +0.8
SP_M24 = 0.086836152153949678481  # x = -2.4
SP_M12 = 0.26328246733803118919   # x = -1.2
BCE_90_20 = 0.32850406697203605699  # -(ln 0.9 + ln 0.8)

P = LossParams(alpha=2.0, beta=0.5)

st_params = st.builds(
    LossParams,
    alpha=st.floats(0.5, 5.0),
    beta=st.floats(-1.0, 1.0),
)
st_s = st.floats(-1.0, 1.0)
st_g = st.floats(0.0, 1.0)


class TestBdl:
    def test_zero_exponent_point(self):
        assert bdl(0.5, POSITIVE, P).value == pytest.approx(LN2, abs=1e-12)

    def test_derived_positive(self):
        assert bdl(0.9, POSITIVE, P).value == pytest.approx(SP_M08, abs=1e-9)

    def test_derived_negative(self):
        assert bdl(0.9, NEGATIVE, P).value == pytest.approx(SP_P08, abs=1e-9)

    def test_cost_factor_scales_exponent(self):
        lp = LossParams(alpha=2.0, beta=0.5, cost_pos=3.0)
        assert bdl(0.9, POSITIVE, lp).value == pytest.approx(
            math.log1p(math.exp(-2.4)), abs=1e-12)

    @given(s=st_s, params=st_params)
    def test_nonnegative_and_finite(self, s, params):
        for pol in (POSITIVE, NEGATIVE):
            out = bdl(s, pol, params)
            assert out.value >= 0.0 and math.isfinite(out.value)

    def test_no_overflow_at_large_alpha(self):
        lp = LossParams(alpha=100.0, beta=-1.0)
        out = bdl(1.0, NEGATIVE, lp)
        assert math.isfinite(out.value)
        assert out.value == pytest.approx(200.0, rel=1e-12)


class TestSbdlPositive:
    def test_zero_exponent_point(self):
        assert sbdl_positive(0.5, 0.0, P).value == pytest.approx(LN2, abs=1e-12)

    def test_derived_value(self):
        assert sbdl_positive(0.8, 0.9, P).value == pytest.approx(SP_M24, abs=1e-9)

    def test_partials_nonpositive_and_equal(self):
        out = sbdl_positive(0.3, 0.4, P)
        assert out.d_ds == out.d_dg <= 0.0

    @given(s=st_s, params=st_params)
    def test_reduces_to_bdl_exactly_at_g0(self, s, params):
        unit_cost = LossParams(params.alpha, params.beta)
        soft = sbdl_positive(s, 0.0, params)
        hard = bdl(s, POSITIVE, unit_cost)
        assert soft.value == hard.value
        assert soft.d_ds == hard.d_ds


class TestSbdlNegative:
    def test_zero_exponent_point(self):
        assert sbdl_negative(0.5, 0.0, P).value == pytest.approx(LN2, abs=1e-12)

    def test_derived_value(self):
        assert sbdl_negative(0.8, 0.9, P).value == pytest.approx(SP_M12, abs=1e-9)

    def test_partial_signs(self):
        out = sbdl_negative(0.3, 0.4, P)
        assert out.d_ds >= 0.0
        assert out.d_dg <= 0.0

    @given(s=st_s, params=st_params)
    def test_reduces_to_bdl_exactly_at_g0(self, s, params):
        unit_cost = LossParams(params.alpha, params.beta)
        soft = sbdl_negative(s, 0.0, params)
        hard = bdl(s, NEGATIVE, unit_cost)
        assert soft.value == hard.value
        assert soft.d_ds == hard.d_ds


@given(params=st_params, g=st_g)
def test_positive_loss_strictly_decreasing_in_s(params, g):
    grid = np.linspace(-1.0, 1.0, 21)
    vals = [sbdl_positive(float(s), g, params).value for s in grid]
    assert all(a > b for a, b in zip(vals, vals[1:]))


@given(params=st_params, s=st_s)
def test_positive_loss_strictly_decreasing_in_g(params, s):
    grid = np.linspace(0.0, 1.0, 21)
    vals = [sbdl_positive(s, float(g), params).value for g in grid]
    assert all(a > b for a, b in zip(vals, vals[1:]))


@given(params=st_params, g=st_g)
def test_negative_loss_strictly_increasing_in_s(params, g):
    grid = np.linspace(-1.0, 1.0, 21)
    vals = [sbdl_negative(float(s), g, params).value for s in grid]
    assert all(a < b for a, b in zip(vals, vals[1:]))


@given(params=st_params, s=st_s)
def test_negative_loss_strictly_decreasing_in_g(params, s):
    grid = np.linspace(0.0, 1.0, 21)
    vals = [sbdl_negative(s, float(g), params).value for g in grid]
    assert all(a > b for a, b in zip(vals, vals[1:]))


@given(params=st_params, s=st_s, g=st_g)
def test_band_ordering(params, s, g):
    # the g=0 curve is the band ceiling, the g=1 curve its floor
    for fn in (sbdl_positive, sbdl_negative):
        assert fn(s, 0.0, params).value >= fn(s, g, params).value >= fn(s, 1.0, params).value


@given(params=st_params, s=st_s, g=st_g)
@settings(max_examples=200)
def test_scalar_derivatives_match_finite_differences(params, s, g):
    h = 1e-6
    for fn in (sbdl_positive, sbdl_negative):
        out = fn(s, g, params)
        fd_s = (fn(s + h, g, params).value - fn(s - h, g, params).value) / (2 * h)
        fd_g = (fn(s, g + h, params).value - fn(s, g - h, params).value) / (2 * h)
        assert out.d_ds == pytest.approx(fd_s, abs=1e-7)
        assert out.d_dg == pytest.approx(fd_g, abs=1e-7)


class TestSbdlBatch:
    def test_two_zero_exponent_pairs(self):
        pairs = [PairSample(0.5, 0.0, POSITIVE), PairSample(0.5, 0.0, NEGATIVE)]
        out = sbdl_batch(pairs, P)
        assert out.value == pytest.approx(2 * LN2, abs=1e-12)
        assert (out.n_pos, out.n_neg) == (1, 1)

    def test_averaging_idempotence(self):
        pairs = [PairSample(0.5, 0.0, POSITIVE), PairSample(0.5, 0.0, POSITIVE),
                 PairSample(0.5, 0.0, NEGATIVE)]
        assert sbdl_batch(pairs, P).value == pytest.approx(2 * LN2, abs=1e-12)

    def test_derived_pair_sum(self):
        pairs = [PairSample(0.8, 0.9, POSITIVE), PairSample(0.8, 0.9, NEGATIVE)]
        assert sbdl_batch(pairs, P).value == pytest.approx(
            SP_M24 + SP_M12, abs=1e-9)

    def test_permutation_leaves_value_bit_identical(self, rng):
        pairs = [PairSample(float(rng.uniform(-1, 1)), float(rng.uniform(0, 1)),
                            POSITIVE if rng.random() < 0.5 else NEGATIVE)
                 for _ in range(60)]
        pairs[0] = PairSample(0.1, 0.2, POSITIVE)
        pairs[1] = PairSample(0.1, 0.2, NEGATIVE)
        base = sbdl_batch(pairs, P).value
        for _ in range(10):
            shuffled = list(pairs)
            rng.shuffle(shuffled)
            assert sbdl_batch(shuffled, P).value == base

    def test_missing_polarity_raises(self):
        with pytest.raises(DegenerateBatchError):
            sbdl_batch([PairSample(0.5, 0.1, POSITIVE)], P)
        with pytest.raises(DegenerateBatchError):
            sbdl_batch([PairSample(0.5, 0.1, NEGATIVE)], P)

    def test_matches_scalar_ops(self, rng):
        pairs = [PairSample(float(rng.uniform(-1, 1)), float(rng.uniform(0, 1)),
                            POSITIVE if i % 3 else NEGATIVE) for i in range(12)]
        out = sbdl_batch(pairs, P)
        m = sum(1 for p in pairs if p.polarity == POSITIVE)
        n = len(pairs) - m
        expect = (sum(sbdl_positive(p.s, p.g, P).value for p in pairs
                      if p.polarity == POSITIVE) / m
                  + sum(sbdl_negative(p.s, p.g, P).value for p in pairs
                        if p.polarity == NEGATIVE) / n)
        assert out.value == pytest.approx(expect, abs=1e-12)
        for i, p in enumerate(pairs):
            scalar = (sbdl_positive if p.polarity == POSITIVE else sbdl_negative)(p.s, p.g, P)
            scale = 1.0 / m if p.polarity == POSITIVE else 1.0 / n
            assert out.d_ds[i] == pytest.approx(scalar.d_ds * scale, abs=1e-15)
            assert out.d_dg[i] == pytest.approx(scalar.d_dg * scale, abs=1e-15)


class TestBdlBatch:
    def test_costs_respected(self, rng):
        lp = LossParams(alpha=1.5, beta=0.2, cost_pos=2.0, cost_neg=0.5)
        pairs = [PairSample(float(rng.uniform(-1, 1)), 0.0,
                            POSITIVE if i % 2 else NEGATIVE) for i in range(8)]
        out = bdl_batch(pairs, lp)
        m = sum(1 for p in pairs if p.polarity == POSITIVE)
        n = len(pairs) - m
        expect = (sum(bdl(p.s, POSITIVE, lp).value for p in pairs
                      if p.polarity == POSITIVE) / m
                  + sum(bdl(p.s, NEGATIVE, lp).value for p in pairs
                        if p.polarity == NEGATIVE) / n)
        assert out.value == pytest.approx(expect, abs=1e-12)

    def test_degenerate_raises(self):
        with pytest.raises(DegenerateBatchError):
            bdl_batch([PairSample(0.2, 0.0, NEGATIVE)], P)


class TestBce:
    def test_maximum_entropy_point(self):
        assert bce([0.5], [1]).value == pytest.approx(LN2, abs=1e-12)

    def test_derived_value(self):
        assert bce([0.9, 0.2], [1, 0]).value == pytest.approx(BCE_90_20, abs=1e-9)

    def test_perfect_prediction_near_zero(self):
        assert bce([1.0 - 1e-7], [1]).value == pytest.approx(1e-7, abs=1e-9)

    def test_clamps_raw_extremes(self):
        assert math.isfinite(bce([1.0], [0]).value)
        assert math.isfinite(bce([0.0], [1]).value)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            bce([0.5, 0.5], [1])

    def test_gradient_formula(self):
        out = bce([0.25, 0.75], [1, 0])
        assert out.d_dp[0] == pytest.approx(-1 / 0.25, abs=1e-12)
        assert out.d_dp[1] == pytest.approx(1 / 0.25, abs=1e-12)


class TestObjective:
    def _pairs(self):
        return [PairSample(0.5, 0.0, POSITIVE), PairSample(0.5, 0.0, NEGATIVE)]

    def test_lambda_zero_equals_metric(self):
        lp = LossParams(alpha=2.0, beta=0.5, lam=0.0)
        obj = sgml_objective(self._pairs(), [([0.3, 0.6], [1, 0])], lp)
        assert obj.value == sbdl_batch(self._pairs(), lp).value

    def test_component_sum(self):
        lp = LossParams(alpha=2.0, beta=0.5, lam=1.0)
        obj = sgml_objective(self._pairs(), [([0.5], [1])], lp)
        assert obj.value == pytest.approx(3 * LN2, abs=1e-9)

    def test_linear_in_lambda(self):
        terms = [([0.3, 0.6], [1, 0])]
        v1 = sgml_objective(self._pairs(), terms, LossParams(2.0, 0.5, lam=1.0))
        v2 = sgml_objective(self._pairs(), terms, LossParams(2.0, 0.5, lam=2.0))
        metric = sbdl_batch(self._pairs(), P).value
        assert v2.value - metric == pytest.approx(2 * (v1.value - metric), rel=1e-12)

    def test_empty_attr_terms_rejected(self):
        with pytest.raises(ValueError):
            sgml_objective(self._pairs(), [], P)


def test_params_validation():
    with pytest.raises(ValueError):
        LossParams(alpha=0.0)
    with pytest.raises(ValueError):
        LossParams(lam=-0.1)
    with pytest.raises(ValueError):
        LossParams(cost_pos=0.0)
