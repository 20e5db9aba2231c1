"""Simulation harness tests.

Monte Carlo assertions run at fixed seeds that were checked to sit well
inside their acceptance bands; the bands themselves are the documented
1% Kolmogorov-Smirnov / three-sigma criteria, not tuned tolerances.
"""

import numpy as np
import pytest

from renewal_coupling import bound_engine as be
from renewal_coupling import numerics
from renewal_coupling import sim_harness as sh
from renewal_coupling.dist_core import ExpParetoLaw, ExponentialLaw, HazardTableLaw
from renewal_coupling.errors import EventCapExceededError, ValidationError

EXP_1 = ExponentialLaw(1.0)
EXP_PARETO_12 = ExpParetoLaw(1.0, 2.0)
EXP_PARETO_13 = ExpParetoLaw(1.0, 3.0)
THRESHOLD_12 = be.default_threshold(EXP_PARETO_12)


def ks_crit_two_sample(n: int, m: int, level: str = "1%") -> float:
    factor = 1.628 if level == "1%" else 1.36
    return factor * np.sqrt((n + m) / (n * m))


class TestReplicaRng:
    def test_same_key_reproduces(self):
        a = sh.replica_rng(123, 4).random(8)
        b = sh.replica_rng(123, 4).random(8)
        assert np.array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = sh.replica_rng(123, 0).random(8)
        b = sh.replica_rng(123, 1).random(8)
        assert not np.array_equal(a, b)

    def test_negative_key_rejected(self):
        with pytest.raises(ValueError):
            sh.replica_rng(-1)
        with pytest.raises(ValueError):
            sh.replica_rng(1, -2)


class TestSimulatePair:
    def test_equal_ages_couple_at_zero_without_simulating(self):
        # rng=None proves no randomness is consumed on this path
        state = sh.simulate_pair(EXP_1, 2.0, 2.0, 4.0, None)
        assert state.coupled_at == 0.0
        assert state.attempt_log == []
        assert state.backward_first == state.backward_second

    def test_memoryless_pair_couples_at_first_eligible_attempt(self):
        state = sh.simulate_pair(EXP_1, 0.0, 5.0, 4.0, sh.replica_rng(2))
        attempted = [r for r in state.attempt_log if r.attempted]
        assert len(attempted) == 1          # full overlap: first try succeeds
        assert attempted[0].coincided
        assert attempted[0].partner_age <= 4.0
        assert state.coupled_at > attempted[0].time

    def test_attempt_times_strictly_increase(self):
        state = sh.simulate_pair(EXP_PARETO_12, 0.0, 0.6, THRESHOLD_12,
                                 sh.replica_rng(3))
        times = [r.time for r in state.attempt_log]
        assert all(a < b for a, b in zip(times, times[1:]))
        assert all(r.partner_age >= 0.0 for r in state.attempt_log)

    def test_attempted_records_are_eligible(self):
        state = sh.simulate_pair(EXP_PARETO_12, 0.0, 0.6, THRESHOLD_12,
                                 sh.replica_rng(4))
        for record in state.attempt_log:
            if record.attempted:
                assert record.eligible
        assert state.attempt_log[-1].coincided

    def test_deterministic_for_fixed_seed(self):
        a = sh.simulate_pair(EXP_PARETO_12, 0.0, 0.6, THRESHOLD_12,
                             sh.replica_rng(5))
        b = sh.simulate_pair(EXP_PARETO_12, 0.0, 0.6, THRESHOLD_12,
                             sh.replica_rng(5))
        assert a.coupled_at == b.coupled_at
        assert a.attempt_log == b.attempt_log

    def test_argument_validation(self):
        rng = sh.replica_rng(6)
        with pytest.raises(ValueError):
            sh.simulate_pair(EXP_1, -1.0, 0.0, 4.0, rng)
        with pytest.raises(ValueError):
            sh.simulate_pair(EXP_1, 0.0, 1.0, 0.0, rng)

    def test_event_cap_resumes_to_identical_epoch(self):
        full = sh.simulate_pair(EXP_PARETO_12, 0.0, 0.6, THRESHOLD_12,
                                sh.replica_rng(72))
        rng = sh.replica_rng(72)
        with pytest.raises(EventCapExceededError) as info:
            sh.simulate_pair(EXP_PARETO_12, 0.0, 0.6, THRESHOLD_12, rng,
                             event_cap=1)
        assert info.value.events == 1
        resumed = sh.resume_pair(EXP_PARETO_12, THRESHOLD_12, rng,
                                 info.value.state)
        assert resumed.coupled_at == full.coupled_at


class TestSimulatePairsBatch:
    def test_equal_ages_give_zero_epochs(self):
        sample = sh.simulate_pairs(EXP_1, 1.5, 1.5, 4.0, sh.replica_rng(7), 64)
        assert np.array_equal(sample.tau, np.zeros(64))
        assert sample.attempts == 0

    def test_identical_seeds_identical_epochs(self):
        a = sh.simulate_pairs(EXP_PARETO_12, 0.0, 0.6, THRESHOLD_12,
                              sh.replica_rng(8), 500)
        b = sh.simulate_pairs(EXP_PARETO_12, 0.0, 0.6, THRESHOLD_12,
                              sh.replica_rng(8), 500)
        assert np.array_equal(a.tau, b.tau)

    def test_epochs_finite_and_nonnegative(self):
        sample = sh.simulate_pairs(EXP_PARETO_12, 0.0, 0.6, THRESHOLD_12,
                                   sh.replica_rng(9), 2000)
        assert np.isfinite(sample.tau).all()
        assert (sample.tau >= 0).all()

    def test_memoryless_attempts_always_coincide(self):
        sample = sh.simulate_pairs(EXP_1, 0.0, 5.0, 4.0, sh.replica_rng(10),
                                   5000)
        assert sample.attempt_success_rate == 1.0
        assert sample.mean_kappa == 1.0

    def test_scalar_and_batch_epochs_agree_in_law(self):
        rng = sh.replica_rng(70)
        scalar = np.array([
            sh.simulate_pair(EXP_PARETO_12, 0.0, 0.6, THRESHOLD_12, rng).coupled_at
            for _ in range(600)])
        batch = sh.simulate_pairs(EXP_PARETO_12, 0.0, 0.6, THRESHOLD_12,
                                  sh.replica_rng(71), 20_000)
        ks = numerics.ks_two_sample(scalar, batch.tau)
        assert ks < ks_crit_two_sample(600, 20_000)

    def test_generic_fallback_matches_structured_path(self):
        # hazard-table laws have no declared structure: per-replica splits
        law = HazardTableLaw([[0.0, 0.5], [1.0, 1.5], [3.0, 1.0]])
        threshold = be.default_threshold(law)
        sample = sh.simulate_pairs(law, 0.0, 0.7, threshold,
                                   sh.replica_rng(11), 150)
        assert np.isfinite(sample.tau).all()
        sigma = np.sqrt(sample.mean_kappa * (1 - sample.mean_kappa)
                        / sample.attempts)
        assert abs(sample.attempt_success_rate - sample.mean_kappa) \
            <= 4.0 * sigma

    def test_attempt_success_rate_tracks_mean_overlap(self):
        sample = sh.simulate_pairs(EXP_PARETO_12, 0.0, 0.6, THRESHOLD_12,
                                   sh.replica_rng(41), 30_000)
        p = sample.mean_kappa
        sigma = np.sqrt(p * (1 - p) / sample.attempts)
        assert abs(sample.attempt_success_rate - p) <= 3.0 * sigma

    def test_eligible_fraction_dominates_age_probability_bound(self):
        params = be.coupling_params(EXP_PARETO_12, THRESHOLD_12)
        sample = sh.simulate_pairs(EXP_PARETO_12, 0.0, 0.6, THRESHOLD_12,
                                   sh.replica_rng(41), 30_000)
        f = sample.eligible_fraction
        sigma = np.sqrt(f * (1 - f) / sample.renewals)
        assert f >= params.age_prob - 3.0 * sigma

    def test_event_cap_resumes_to_identical_epochs(self):
        full = sh.simulate_pairs(EXP_PARETO_12, 0.0, 0.6, THRESHOLD_12,
                                 sh.replica_rng(73), 2000)
        rng = sh.replica_rng(73)
        with pytest.raises(EventCapExceededError) as info:
            sh.simulate_pairs(EXP_PARETO_12, 0.0, 0.6, THRESHOLD_12, rng, 2000,
                              event_cap=2)
        resumed = sh.resume_pairs(EXP_PARETO_12, THRESHOLD_12, rng,
                                  info.value.state)
        assert np.array_equal(resumed.tau, full.tau)

    def test_argument_validation(self):
        rng = sh.replica_rng(12)
        with pytest.raises(ValueError):
            sh.simulate_pairs(EXP_1, 0.0, 1.0, 4.0, rng, 0)
        with pytest.raises(ValueError):
            sh.simulate_pairs(EXP_1, 0.0, -1.0, 4.0, rng, 5)
        with pytest.raises(ValueError):
            sh.simulate_pairs(EXP_1, 0.0, 1.0, -4.0, rng, 5)


class TestHorizonAges:
    def test_coupled_replicas_share_ages_exactly(self):
        sample = sh.simulate_pairs(EXP_PARETO_12, 0.0, 0.6, THRESHOLD_12,
                                   sh.replica_rng(52), 20_000, horizon=6.0)
        coupled = sample.tau <= 6.0
        assert coupled.any() and (~coupled).any()
        assert np.array_equal(sample.lead_age[coupled],
                              sample.lag_age[coupled])
        assert (sample.lead_age >= 0).all()
        assert (sample.lag_age >= 0).all()

    def test_late_couplings_keep_processes_split(self):
        sample = sh.simulate_pairs(EXP_PARETO_12, 0.0, 0.6, THRESHOLD_12,
                                   sh.replica_rng(52), 20_000, horizon=6.0)
        late = sample.tau > 6.0
        assert late.any()
        assert not np.allclose(sample.lead_age[late], sample.lag_age[late])

    def test_equal_age_start_still_reports_horizon_ages(self):
        sample = sh.simulate_pairs(EXP_1, 0.5, 0.5, 4.0, sh.replica_rng(13),
                                   500, horizon=3.0)
        assert np.array_equal(sample.tau, np.zeros(500))
        assert np.array_equal(sample.lead_age, sample.lag_age)


class TestMarginalPreservation:
    @pytest.mark.parametrize("law,age_first,age_second,threshold,t,s_on,s_off", [
        (EXP_PARETO_12, 0.0, 0.6, THRESHOLD_12, 6.0, 61, 62),
        (EXP_1, 0.0, 5.0, 4.0, 8.0, 63, 64),
    ])
    def test_coupling_leaves_both_age_laws_unchanged(
            self, law, age_first, age_second, threshold, t, s_on, s_off):
        n = 20_000
        on_lead, on_lag = sh.pair_marginal_ages(
            law, age_first, age_second, threshold, t, n,
            sh.replica_rng(s_on), attempts_enabled=True)
        off_lead, off_lag = sh.pair_marginal_ages(
            law, age_first, age_second, threshold, t, n,
            sh.replica_rng(s_off), attempts_enabled=False)
        crit = ks_crit_two_sample(n, n)
        assert numerics.ks_two_sample(on_lead, off_lead) < crit
        assert numerics.ks_two_sample(on_lag, off_lag) < crit

    def test_single_chain_age_matches_exact_law(self):
        # exponential chain from age zero: the age at t is exponential
        # truncated at t (atom at t itself)
        n = 100_000
        ages = sh._ages_at(EXP_1, 0.0, 8.0, n, sh.replica_rng(14))
        assert ages.max() <= 8.0
        interior = ages[ages < 8.0 - 1e-12]
        ks = numerics.ks_statistic(interior, lambda x: 1.0 - np.exp(-x))
        assert ks < 1.628 / np.sqrt(interior.size)


class TestEstimators:
    def test_power_moment_oracle(self):
        est, se = sh.estimate_tau_functionals([1.0, 2.0, 3.0], order=2.0)
        assert est == pytest.approx(14.0 / 3.0, rel=1e-15)
        assert se == pytest.approx(7.0 / 3.0, rel=1e-12)

    def test_degenerate_samples(self):
        assert sh.estimate_tau_functionals(np.zeros(32), order=2.0) == (0.0, 0.0)

    def test_exponential_moment(self):
        est, se = sh.estimate_tau_functionals([0.0, np.log(2.0)], rate=1.0)
        assert est == pytest.approx(1.5, rel=1e-15)

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            sh.estimate_tau_functionals([], order=1.0)

    def test_exactly_one_mode_required(self):
        with pytest.raises(ValueError):
            sh.estimate_tau_functionals([1.0], order=1.0, rate=1.0)
        with pytest.raises(ValueError):
            sh.estimate_tau_functionals([1.0])

    def test_unstable_rate_rejected(self):
        with pytest.raises(ValueError, match="rate"):
            sh.estimate_tau_functionals([1.0, 2000.0], rate=1.0)

    def test_negative_samples_rejected(self):
        with pytest.raises(ValueError):
            sh.estimate_tau_functionals([1.0, -0.5], order=1.0)


class TestEmpiricalTv:
    def test_identical_sample_sets_have_zero_distance(self):
        a = np.linspace(0.0, 3.0, 5000)
        assert sh.histogram_tv_samples(a, a.copy()) == 0.0

    def test_disjoint_sample_sets_have_unit_distance(self):
        a = np.linspace(0.0, 3.0, 4000)
        assert sh.histogram_tv_samples(a, a + 50.0) == 1.0

    def test_converged_exponential_chain_is_near_stationary(self):
        est = sh.empirical_tv(EXP_1, 0.0, 50.0, 100_000, sh.replica_rng(21))
        assert est.value < 0.05
        assert est.bin_width > 0
        assert "bias" in est.note

    def test_far_from_stationarity_reads_large(self):
        # at t close to zero the age is still near its t=0 value
        est = sh.empirical_tv(EXP_1, 0.0, 0.05, 20_000, sh.replica_rng(22))
        assert est.value > 0.5

    def test_bin_override(self):
        est = sh.empirical_tv(EXP_1, 0.0, 10.0, 5000, sh.replica_rng(23),
                              bins=12)
        assert est.bin_count == 13    # includes the tail bin

    def test_argument_validation(self):
        with pytest.raises(ValueError):
            sh.empirical_tv(EXP_1, 0.0, -1.0, 5000, sh.replica_rng(24))
        with pytest.raises(ValueError):
            sh.empirical_tv(EXP_1, 0.0, 1.0, 10, sh.replica_rng(24))


class TestLordenCheck:
    def test_exponential_mean_age_stays_below_ratio(self):
        report = sh.lorden_check(EXP_1, 50.0, 10_000, sh.replica_rng(25))
        assert report.ratio == pytest.approx(2.0, rel=1e-9)
        assert report.passed
        assert report.estimates[0] == 0.0      # started at age zero
        assert max(report.estimates) < report.ratio

    def test_exp_pareto_law_mean_age_stays_below_ratio(self):
        report = sh.lorden_check(EXP_PARETO_13, 20.0, 10_000, sh.replica_rng(26))
        assert report.passed
        assert max(report.estimates) < report.ratio

    def test_argument_validation(self):
        with pytest.raises(ValueError):
            sh.lorden_check(EXP_1, 0.0, 100, sh.replica_rng(27))
        with pytest.raises(ValueError):
            sh.lorden_check(EXP_1, 10.0, 1, sh.replica_rng(27))


class TestRunExperiment:
    def test_exponential_verdicts_all_pass(self):
        result = sh.run_experiment(
            EXP_1, 0.0, 0.1, 4.0, moment_orders=(1.0, 2.0), rates=(0.25,),
            t_grid=(5.0, 10.0, 20.0, 50.0), n_replicas=20_000, seed=7)
        assert result.all_passed
        assert set(result.verdicts) == {
            "moment:1", "moment:2", "mgf:0.25",
            "tv:5", "tv:10", "tv:20", "tv:50"}
        assert result.verdicts["moment:1"]["bound"] == pytest.approx(10.0)

    def test_exp_pareto_law_dominance(self):
        result = sh.run_experiment(
            EXP_PARETO_12, 0.0, 0.1, None, moment_orders=(1.0,),
            n_replicas=10_000, seed=8)
        v = result.verdicts["moment:1"]
        assert v["passed"]
        assert v["estimate"] < v["bound"]

    def test_deterministic_reports(self):
        kwargs = dict(moment_orders=(1.0,), rates=(0.25,), t_grid=(10.0,),
                      n_replicas=5000, seed=9)
        a = sh.run_experiment(EXP_1, 0.0, 0.1, 4.0, **kwargs)
        b = sh.run_experiment(EXP_1, 0.0, 0.1, 4.0, **kwargs)
        assert a.sim.to_json() == b.sim.to_json()
        assert a.sim.tau_digest == b.sim.tau_digest

    def test_zero_replicas_rejected_naming_field(self):
        with pytest.raises(ValidationError) as info:
            sh.run_experiment(EXP_1, 0.0, 0.1, 4.0, n_replicas=0)
        assert info.value.field == "n_replicas"

    def test_report_json_parseable_and_sorted(self):
        import json
        result = sh.run_experiment(EXP_1, 0.0, 0.1, 4.0, n_replicas=1000,
                                   seed=10)
        payload = json.loads(result.sim.to_json())
        assert payload["law"] == {"family": "exponential",
                                  "params": {"rate": 1.0}}
        assert payload["tau"]["count"] == 1000

    def test_tau_csv_format(self):
        text = sh.tau_samples_csv([1.0, 0.5])
        lines = text.splitlines()
        assert lines[0] == "tau"
        assert lines[1] == "1"
        assert float(lines[2]) == 0.5
