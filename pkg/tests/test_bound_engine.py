"""Tests for the certified bound pipeline."""

import json
import math

import numpy as np
import pytest
from scipy import special

from renewal_coupling import ExpParetoLaw, ExponentialLaw, HazardTableLaw
from renewal_coupling import bound_engine as be
from renewal_coupling.dist_core import RenewalLaw
from renewal_coupling.errors import (
    DivergentIntegralError,
    DivergentMGFError,
    DivergentSeriesError,
    NoCouplingPossibleError,
    NoExponentialRateError,
    RateInadmissibleError,
    ThresholdTooSmallError,
)

EXP_1 = ExponentialLaw(1.0)
EXP_PARETO_12 = ExpParetoLaw(rate=1.0, shape=2.0)

# unit-rate exponential with threshold 4: ratio 2, half age probability,
# full overlap, so every attempt fails with probability one half
EXP_PARAMS = be.CouplingParams(threshold=4.0, lorden_ratio=2.0, age_prob=0.5,
                               overlap_floor=1.0, attempt_success=0.5,
                               attempt_failure=0.5)

# sqrt of integral of (9s+44)^2/(1+s)^6: substitute u=1+s, expand, integrate
ENVELOPE_NORM_12_AT_2 = math.sqrt(429.5)


def _params_with_failure(q: float) -> be.CouplingParams:
    return be.CouplingParams(threshold=4.0, lorden_ratio=2.0,
                             age_prob=1.0 - q, overlap_floor=1.0,
                             attempt_success=1.0 - q, attempt_failure=q)


class PowerTailLaw(RenewalLaw):
    """Test-only heavy-tail law: survival (1+s)^(-power)."""

    coupling_structure = None

    def __init__(self, power: float):
        self.power = float(power)

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        return self.power * (1.0 + s) ** (-self.power - 1.0)

    def survival(self, s):
        s = np.asarray(s, dtype=float)
        return (1.0 + s) ** (-self.power)

    def mgf_divergence_rate(self):
        return 0.0

    def spec_dict(self):
        return {"family": "power-tail-test", "params": {"power": self.power}}


class TestCouplingParams:
    def test_exponential_pipeline_values(self):
        assert be.lorden_ratio(EXP_1) == pytest.approx(2.0, abs=1e-10)
        p = be.coupling_params(EXP_1, 4.0)
        assert p.lorden_ratio == pytest.approx(2.0, abs=1e-10)
        assert p.age_prob == pytest.approx(0.5, abs=1e-10)
        assert p.overlap_floor == 1.0
        assert p.attempt_failure == pytest.approx(0.5, abs=1e-10)

    def test_threshold_at_ratio_rejected(self):
        with pytest.raises(ThresholdTooSmallError) as err:
            be.coupling_params(EXP_1, 2.0)
        assert err.value.ratio == pytest.approx(2.0, abs=1e-10)
        assert err.value.threshold == 2.0

    def test_threshold_below_ratio_rejected(self):
        with pytest.raises(ThresholdTooSmallError):
            be.coupling_params(EXP_1, 0.5)

    def test_exp_pareto_age_prob_at_twice_ratio(self):
        law = ExpParetoLaw(1.0, 3.0)
        p = be.coupling_params(law, 2.0 * be.lorden_ratio(law), grid_size=33)
        assert p.age_prob == pytest.approx(0.5, abs=1e-12)

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            be.CouplingParams(4.0, 2.0, 1.5, 1.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            be.CouplingParams(4.0, 2.0, 0.5, 0.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            be.CouplingParams(4.0, 2.0, 0.5, 1.0, 0.5, 1.0)

    def test_default_threshold(self):
        assert be.default_threshold(EXP_1) == pytest.approx(4.0, abs=1e-9)


class TestOverlapFloor:
    def test_memoryless_is_exactly_one(self):
        assert be.overlap_floor(EXP_1, 100.0) == 1.0

    def test_single_point_grid_is_one(self):
        # age zero is always on the grid and overlaps fully
        assert be.overlap_floor(EXP_PARETO_12, 5.0, grid_size=1) == 1.0

    def test_constant_hazard_table_near_one(self):
        # same distribution as a unit exponential but through the generic
        # grid path rather than the memoryless shortcut
        law = HazardTableLaw([[0.0, 1.0], [1.0, 1.0]])
        assert be.overlap_floor(law, 3.0, grid_size=9) > 1.0 - 1e-6

    def test_exp_pareto_floor_dominates_closed_form_minorant(self):
        floor = be.overlap_floor(EXP_PARETO_12, 5.0, grid_size=33)
        minorant_mass = be.exp_pareto_minorant(EXP_PARETO_12, 5.0).mass
        assert 0.0 < minorant_mass < floor <= 1.0

    def test_decreasing_in_threshold(self):
        floors = [be.overlap_floor(EXP_PARETO_12, th, grid_size=33)
                  for th in (1.0, 2.0, 4.0)]
        assert floors[0] > floors[1] > floors[2]

    def test_disjoint_forward_raises(self):
        # all mass on [5, ~5.2]: from age just past 5 the forward law sits
        # near zero, disjoint from the fresh law
        law = HazardTableLaw([[0.0, 0.0], [5.0, 0.0], [5.05, 80.0]])
        with pytest.raises(NoCouplingPossibleError):
            be.overlap_floor(law, 5.1, grid_size=33)

    def test_invalid_threshold(self):
        with pytest.raises(ValueError):
            be.overlap_floor(EXP_1, 0.0)


class TestGeometricMomentSeries:
    @pytest.mark.parametrize("q", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
    def test_closed_forms(self, q):
        one = 1.0 / (1.0 - q)
        assert be.geometric_moment_series(q, 1) == pytest.approx(
            one, abs=1e-10)
        assert be.geometric_moment_series(q, 2) == pytest.approx(
            one * one, abs=1e-10)
        assert be.geometric_moment_series(q, 3) == pytest.approx(
            (1.0 + q) * one ** 3, abs=1e-10)

    def test_half_failure_oracle(self):
        assert be.geometric_moment_series(0.5, 1) == pytest.approx(2.0)
        assert be.geometric_moment_series(0.5, 2) == pytest.approx(4.0)
        assert be.geometric_moment_series(0.5, 3) == pytest.approx(12.0)

    def test_zero_failure(self):
        assert be.geometric_moment_series(0.0, 3) == 1.0

    def test_non_integer_order_matches_brute_force(self):
        i = np.arange(4000)
        brute = float(np.sum((i + 1.0) ** 0.5 * 0.5 ** i))
        assert be.geometric_moment_series(0.5, 1.5) == pytest.approx(
            brute, rel=1e-10)

    def test_divergent_inputs(self):
        with pytest.raises(DivergentSeriesError):
            be.geometric_moment_series(1.0, 2)
        with pytest.raises(DivergentSeriesError):
            be.geometric_moment_series(1.5, 2)
        with pytest.raises(ValueError):
            be.geometric_moment_series(-0.1, 2)
        with pytest.raises(ValueError):
            be.geometric_moment_series(0.5, 0.5)


class TestEpochMomentBound:
    def test_exponential_oracle(self):
        val = be.epoch_moment_bound(EXP_1, 0.0, 0.0, 4.0, 1, EXP_PARAMS)
        assert val == pytest.approx(10.0, abs=1e-9)

    def test_zero_failure_limit(self):
        # series collapses to 1 and the bracket to 2 fresh periods
        val = be.epoch_moment_bound(EXP_1, 0.0, 0.0, 4.0, 1,
                                    _params_with_failure(0.0))
        assert val == pytest.approx(2.0 + 2.0, abs=1e-9)

    def test_nondecreasing_in_failure_probability(self):
        vals = [be.epoch_moment_bound(EXP_1, 0.0, 0.0, 4.0, 2,
                                      _params_with_failure(q))
                for q in (0.0, 0.3, 0.6)]
        assert vals[0] < vals[1] < vals[2]

    def test_nondecreasing_in_starting_age(self):
        # decreasing hazard: older start means stochastically longer first
        # forward time
        params = be.coupling_params(EXP_PARETO_12, 2.0, grid_size=17)
        vals = [be.epoch_moment_bound(EXP_PARETO_12, age, 0.0, 2.0, 1, params)
                for age in (0.0, 0.5, 1.5)]
        assert vals[0] < vals[1] < vals[2]

    def test_non_integer_order_dual_route(self):
        # independent oracle: sum of two unit exponentials is Gamma(2,1),
        # E X^1.5 = Gamma(3.5); fresh moment is Gamma(2.5)
        series = be.geometric_moment_series(0.5, 1.5)
        expected = (special.gamma(3.5) * series
                    + special.gamma(2.5) * (4.0 + 2.0))
        val = be.epoch_moment_bound(EXP_1, 0.0, 0.0, 4.0, 1.5, EXP_PARAMS)
        assert val == pytest.approx(expected, rel=1e-6)

    def test_order_below_one_rejected(self):
        with pytest.raises(ValueError):
            be.epoch_moment_bound(EXP_1, 0.0, 0.0, 4.0, 0.5, EXP_PARAMS)


class TestResidualMgfBound:
    def test_memoryless_reduces_to_mgf(self):
        assert be.residual_mgf_bound(EXP_1, 4.0, 0.1) == pytest.approx(
            10.0 / 9.0, rel=1e-12)

    def test_zero_rate_is_one(self):
        assert be.residual_mgf_bound(EXP_PARETO_12, 2.0, 0.0) == 1.0

    def test_negative_rate_rejected(self):
        with pytest.raises(ValueError):
            be.residual_mgf_bound(EXP_1, 4.0, -0.1)

    def test_divergent_rate_names_threshold(self):
        with pytest.raises(DivergentMGFError) as err:
            be.residual_mgf_bound(EXP_PARETO_12, 2.0, 1.0, 9)
        assert err.value.threshold == 1.0

    @pytest.mark.parametrize("rate", [0.1, 0.2, 0.3])
    def test_generic_below_analytic(self, rate):
        generic = be.residual_mgf_bound(EXP_PARETO_12, 2.0, rate, grid_size=9)
        analytic = be.analytic_residual_mgf_bound(EXP_PARETO_12, 2.0, rate)
        assert 1.0 < generic < analytic

    def test_increasing_in_rate(self):
        vals = [be.residual_mgf_bound(EXP_PARETO_12, 2.0, r, grid_size=9)
                for r in (0.05, 0.2, 0.4)]
        assert vals[0] < vals[1] < vals[2]

    def test_envelope_norm_oracle(self):
        assert be.residual_envelope_norm(EXP_PARETO_12, 2.0) == pytest.approx(
            ENVELOPE_NORM_12_AT_2, rel=1e-9)

    def test_envelope_norm_wrong_family(self):
        with pytest.raises(TypeError):
            be.residual_envelope_norm(EXP_1, 2.0)

    def test_analytic_bound_divergence(self):
        with pytest.raises(DivergentMGFError):
            be.analytic_residual_mgf_bound(EXP_PARETO_12, 2.0, 1.0)


class TestExponentialRateLimit:
    def test_exponential_oracle(self):
        # contraction reads 0.5/(1-rate) < 1, so the limit is one half
        limit = be.exponential_rate_limit(EXP_1, 4.0, params=EXP_PARAMS)
        assert limit.rate == pytest.approx(0.5, abs=1e-6)
        assert limit.margin > 0.0

    def test_contraction_verified_at_returned_rate(self):
        limit = be.exponential_rate_limit(EXP_1, 4.0, params=EXP_PARAMS)
        m = be.residual_mgf_bound(EXP_1, 4.0, limit.rate)
        assert EXP_PARAMS.attempt_failure * m < 1.0

    def test_zero_failure_returns_cap(self):
        limit = be.exponential_rate_limit(EXP_1, 4.0,
                                          params=_params_with_failure(0.0))
        assert limit == be.RateLimit(1.0, 1.0)

    def test_explicit_cap_below_limit(self):
        limit = be.exponential_rate_limit(EXP_1, 4.0, rate_max=0.3,
                                          params=EXP_PARAMS)
        assert limit.rate == pytest.approx(0.3, abs=1e-12)
        assert limit.margin > 0.0

    def test_exp_pareto_rate_admissible_and_verified(self):
        params = be.coupling_params(EXP_PARETO_12, 2.0, grid_size=17)
        limit = be.exponential_rate_limit(EXP_PARETO_12, 2.0, params=params,
                                          grid_size=9)
        assert 0.0 < limit.rate < EXP_PARETO_12.rate
        m = be.residual_mgf_bound(EXP_PARETO_12, 2.0, 0.5 * limit.rate,
                                  grid_size=9)
        assert params.attempt_failure * m < 1.0

    def test_no_rate_when_failure_probability_saturates(self):
        with pytest.raises(NoExponentialRateError):
            be.exponential_rate_limit(
                EXP_1, 4.0, params=_params_with_failure(1.0 - 1e-12))


class TestEpochMgfBound:
    def test_exponential_oracle(self):
        val = be.epoch_mgf_bound(EXP_1, 0.0, 0.0, 4.0, 0.1, EXP_PARAMS)
        assert val == pytest.approx(9000.0 / 2916.0, rel=1e-10)

    def test_zero_rate(self):
        val = be.epoch_mgf_bound(EXP_1, 0.0, 0.0, 4.0, 0.0, EXP_PARAMS)
        assert val == pytest.approx(2.0, abs=1e-12)

    def test_inadmissible_rate_rejected(self):
        # 0.5/(1-0.6) = 1.25 breaks the contraction
        with pytest.raises(RateInadmissibleError):
            be.epoch_mgf_bound(EXP_1, 0.0, 0.0, 4.0, 0.6, EXP_PARAMS)

    def test_dominates_start_factor(self):
        # the bound must exceed the product of the three MGFs alone
        val = be.epoch_mgf_bound(EXP_1, 0.0, 0.0, 4.0, 0.1, EXP_PARAMS)
        assert val > (10.0 / 9.0) ** 3


class TestTvBoundCurve:
    T_GRID = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0]

    def test_exponential_moment_curve_oracle(self):
        curve = be.tv_bound_curve(EXP_1, 0.0, 4.0, self.T_GRID, order=1,
                                  params=EXP_PARAMS)
        for t, v in curve:
            assert v == pytest.approx(min(1.0, 10.0 / t), rel=1e-9)

    def test_exponential_mgf_curve_oracle(self):
        curve = be.tv_bound_curve(EXP_1, 0.0, 4.0, self.T_GRID, rate=0.1,
                                  params=EXP_PARAMS)
        scale = 9000.0 / 2916.0
        for t, v in curve:
            assert v == pytest.approx(min(1.0, scale * math.exp(-0.1 * t)),
                                      rel=1e-8)

    def test_curves_nonincreasing_and_vanishing(self):
        params = be.coupling_params(EXP_PARETO_12, 2.0, grid_size=17)
        for kwargs in ({"order": 2}, {"rate": 0.15}):
            curve = be.tv_bound_curve(EXP_PARETO_12, 0.0, 2.0, self.T_GRID,
                                      params=params, **kwargs)
            vals = [v for _, v in curve]
            assert all(a >= b for a, b in zip(vals, vals[1:]))
            assert vals[0] <= 1.0
        far = be.tv_bound_curve(EXP_PARETO_12, 0.0, 2.0, [1e6], order=2,
                                params=params)
        assert far[0][1] < 1e-6

    def test_stationary_mixture_identity(self):
        # the curve integrates forward moments over the stationary age law;
        # that mixture is again the stationary law, checked here by direct
        # quadrature over the age
        from renewal_coupling import numerics
        stationary = EXP_PARETO_12.stationary_backward()

        def mixed_mean(age):
            return float(EXP_PARETO_12.forward_law(age).mean()
                         * stationary.pdf(age))

        direct = numerics.windowed_tail_integral(mixed_mean, tol=1e-9)
        assert direct == pytest.approx(stationary.moment(1), rel=1e-6)

    def test_argument_validation(self):
        with pytest.raises(ValueError):
            be.tv_bound_curve(EXP_1, 0.0, 4.0, self.T_GRID, params=EXP_PARAMS)
        with pytest.raises(ValueError):
            be.tv_bound_curve(EXP_1, 0.0, 4.0, self.T_GRID, order=1, rate=0.1,
                              params=EXP_PARAMS)
        with pytest.raises(ValueError):
            be.tv_bound_curve(EXP_1, 0.0, 4.0, [], order=1, params=EXP_PARAMS)
        with pytest.raises(ValueError):
            be.tv_bound_curve(EXP_1, 0.0, 4.0, [0.0, 1.0], order=1,
                              params=EXP_PARAMS)

    def test_heavy_tail_divergence_detected(self):
        # stationary third moment of a power tail with less than four finite
        # moments diverges; the curve must refuse rather than truncate
        law = PowerTailLaw(3.5)
        params = be.CouplingParams(
            threshold=4.0 * be.lorden_ratio(law),
            lorden_ratio=be.lorden_ratio(law),
            age_prob=0.75, overlap_floor=0.5, attempt_success=0.375,
            attempt_failure=0.625)
        with pytest.raises(DivergentIntegralError):
            be.tv_bound_curve(law, 0.0, params.threshold, [10.0], order=3,
                              params=params)

    def test_inadmissible_rate_rejected(self):
        with pytest.raises(RateInadmissibleError):
            be.tv_bound_curve(EXP_1, 0.0, 4.0, self.T_GRID, rate=0.6,
                              params=EXP_PARAMS)


class TestExpParetoHelpers:
    def test_minorant_mass_positive_and_below_floor(self):
        mi = be.exp_pareto_minorant(EXP_PARETO_12, 2.0)
        floor = be.overlap_floor(EXP_PARETO_12, 2.0, grid_size=33)
        assert 0.0 < mi.mass < floor

    def test_minorant_wrong_family(self):
        with pytest.raises(TypeError):
            be.exp_pareto_minorant(EXP_1, 2.0)

    def test_diagnostics_oracle(self):
        diag = be.exp_pareto_diagnostics(ExpParetoLaw(1.0, 3.0))
        assert diag["mean_bound"] == pytest.approx(0.5)
        assert diag["second_moment_bound"] == pytest.approx(3.0)
        assert diag["ratio_bound"] == pytest.approx(6.0)

    def test_diagnostics_infinite_second_moment_component(self):
        diag = be.exp_pareto_diagnostics(EXP_PARETO_12)
        assert diag["mean_bound"] == pytest.approx(1.0)
        assert math.isinf(diag["second_moment_bound"])

    def test_diagnostics_wrong_family(self):
        with pytest.raises(TypeError):
            be.exp_pareto_diagnostics(EXP_1)

    def test_optimize_threshold_exp_pareto(self):
        ratio = be.lorden_ratio(EXP_PARETO_12)
        best = be.optimize_threshold(EXP_PARETO_12, grid_size=17)
        assert ratio < best < 64.0 * ratio
        p_best = be.coupling_params(EXP_PARETO_12, best, grid_size=17)
        p_default = be.coupling_params(EXP_PARETO_12, 2.0 * ratio, grid_size=17)
        assert p_best.attempt_success >= p_default.attempt_success - 0.01

    def test_optimize_threshold_memoryless_runs_to_bracket_top(self):
        best = be.optimize_threshold(EXP_1)
        assert best > 100.0


class TestBoundReport:
    def test_exponential_report_contents(self):
        rep = be.bound_report(EXP_1, threshold=4.0, moment_orders=(1, 2),
                              rates=(0.1,), t_grid=(5.0, 50.0))
        assert rep.params.attempt_failure == pytest.approx(0.5, abs=1e-12)
        assert rep.moment_bounds[1.0] == pytest.approx(10.0, abs=1e-9)
        assert rep.mgf_bounds[0.1] == pytest.approx(9000.0 / 2916.0, rel=1e-9)
        assert rep.rate_limit.rate == pytest.approx(0.5, abs=1e-6)
        assert rep.envelope_norm is None
        assert rep.diagnostics is None
        assert rep.tv_moment_curves[1.0][1][1] == pytest.approx(0.2, rel=1e-9)

    def test_auto_rate_is_half_the_limit(self):
        rep = be.bound_report(EXP_1, threshold=4.0, rates=None)
        assert rep.rates == (pytest.approx(0.25, abs=1e-6),)

    def test_exp_pareto_report_extras(self):
        rep = be.bound_report(EXP_PARETO_12, threshold=2.0, rates=(0.2,),
                              overlap_grid=17, residual_grid=9)
        assert rep.envelope_norm == pytest.approx(ENVELOPE_NORM_12_AT_2,
                                                  rel=1e-9)
        assert rep.analytic_residual_mgfs[0.2] > rep.residual_mgfs[0.2]
        assert math.isinf(rep.diagnostics["second_moment_bound"])

    def test_json_deterministic_and_parseable(self):
        kwargs = dict(threshold=4.0, moment_orders=(1,), rates=(0.1,),
                      t_grid=(5.0, 10.0))
        a = be.bound_report(EXP_1, **kwargs).to_json()
        b = be.bound_report(EXP_1, **kwargs).to_json()
        assert a == b
        parsed = json.loads(a)
        assert parsed["params"]["attempt_failure"] == 0.5
        assert parsed["law"] == {"family": "exponential",
                                 "params": {"rate": 1.0}}

    def test_default_threshold_applied(self):
        rep = be.bound_report(EXP_1, rates=())
        assert rep.params.threshold == pytest.approx(4.0, abs=1e-9)
        assert rep.rates == ()
        assert rep.mgf_bounds == {}
