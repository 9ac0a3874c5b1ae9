import math
import os
import unittest
from unittest import mock

import numpy as np
from pydantic import ValidationError
from scipy import integrate
from scipy.stats import norm, truncnorm

from mnarcorr.errors import ExperimentError
from mnarcorr.model_core import GammaBox, MechanismKind, sample_partial_correlation
from mnarcorr.simulation import (
    METHODS,
    ReplicateOutcome,
    ReplicateRecord,
    SimulationDesign,
    generate_dataset,
    run_coverage_experiment,
    run_replicate,
    simulate_draw,
    true_rho,
)

SLOW_TESTS = os.getenv("MNARCORR_SLOW_TESTS") == "1"
UR_BOX = GammaBox(gamma1_min=0.0, gamma1_max=0.5)


def observation_probability(design: SimulationDesign) -> float:
    """P(Z = 1) under the covariate distribution, by numeric integration over age."""

    covariates = design.covariates
    a = (covariates.age_low - covariates.age_mean) / covariates.age_sd
    b = (covariates.age_high - covariates.age_mean) / covariates.age_sd
    age_density = truncnorm(a, b, loc=covariates.age_mean, scale=covariates.age_sd)
    # substitute the partner equation into the selection index
    s0, s_partner, s_age, s_hypertension = design.selection_coefficients
    p0, p_age, p_hypertension = design.partner_coefficients
    intercept = s0 + s_partner * p0
    age_coef = s_age + s_partner * p_age
    hypertension_coef = s_hypertension + s_partner * p_hypertension
    noise_sd = math.sqrt(s_partner**2 * design.partner_variance + 1.0)

    def conditional(age: float, hypertension: float) -> float:
        index = intercept + age_coef * age + hypertension_coef * hypertension
        return norm.cdf(index / noise_sd) * age_density.pdf(age)

    total = 0.0
    for hypertension, weight in ((1.0, covariates.hypertension_p), (0.0, 1.0 - covariates.hypertension_p)):
        value, _ = integrate.quad(conditional, covariates.age_low, covariates.age_high, args=(hypertension,))
        total += weight * value
    return total


def scripted_runner(failing=(), covered=True):
    def runner(design, indices, alpha, ur_box, grid_points):
        outcomes = []
        for index in indices:
            if index in failing:
                outcomes.append(ReplicateOutcome(replicate=index, failure="RegularityError: scripted"))
                continue
            records = tuple(
                ReplicateRecord(
                    replicate=index,
                    method=method,
                    lower=0.0,
                    upper=0.1 * (position + 1),
                    width=0.1 * (position + 1),
                    covered=covered,
                )
                for position, method in enumerate(METHODS)
            )
            outcomes.append(ReplicateOutcome(replicate=index, records=records, studentized=float(index)))
        return list(reversed(outcomes))

    return runner


class TestSimulationDesign(unittest.TestCase):
    def test_true_rho_of_default_design(self):
        self.assertEqual(round(true_rho(SimulationDesign()), 3), 0.359)
        self.assertAlmostEqual(true_rho(SimulationDesign()), 0.01 / math.sqrt(0.01**2 + 0.028**2 / 1.16), places=15)

    def test_true_rho_without_partner_effect(self):
        design = SimulationDesign(target_coefficients=(1.092, 0.0, -0.002, -0.006))
        self.assertEqual(true_rho(design), 0.0)

    def test_invalid_designs(self):
        for kwargs in [
            {"sigma_base": 0.0},
            {"gamma0": 1.2},
            {"gamma20": 0.3},
            {"n": 3},
            {"seed": -1},
        ]:
            with self.subTest(kwargs=kwargs):
                with self.assertRaises(ValidationError):
                    SimulationDesign(**kwargs)


class TestGenerateDataset(unittest.TestCase):
    def test_equal_seeds_give_identical_datasets(self):
        design = SimulationDesign(n=300, seed=42)
        first = generate_dataset(design)
        second = generate_dataset(design)

        np.testing.assert_array_equal(first.values, second.values)
        np.testing.assert_array_equal(first.observed, second.observed)
        self.assertFalse(np.array_equal(first.observed, generate_dataset(design, replicate=1).observed))

    def test_masks_follow_the_mechanism(self):
        for mechanism, gamma20 in ((MechanismKind.A, 0.0), (MechanismKind.B, 0.0), (MechanismKind.C, 0.5)):
            with self.subTest(mechanism=mechanism.value):
                dataset = generate_dataset(SimulationDesign(n=500, mechanism=mechanism, gamma20=gamma20, seed=3))

                self.assertEqual(dataset.columns, ("memory_decline", "blood_marker", "age", "hypertension"))
                self.assertTrue(dataset.observed[:, 2:].all())
                self.assertTrue(np.all(np.isnan(dataset.values[~dataset.observed])))
                if mechanism == MechanismKind.A:
                    self.assertTrue(dataset.partner_observed.all())
                elif mechanism == MechanismKind.B:
                    np.testing.assert_array_equal(dataset.target_observed, dataset.partner_observed)
                else:
                    self.assertFalse(dataset.partner_observed.all())
                    self.assertFalse(np.array_equal(dataset.target_observed, dataset.partner_observed))

    def test_covariates_respect_the_surrogate_distribution(self):
        draw = simulate_draw(SimulationDesign(n=20000, seed=8))
        age = draw.values[:, 2]
        hypertension = draw.values[:, 3]

        self.assertTrue(np.all((age >= 55.0) & (age <= 85.0)))
        self.assertTrue(set(np.unique(hypertension)) <= {0.0, 1.0})
        self.assertAlmostEqual(float(hypertension.mean()), 0.4, delta=0.02)

    def test_about_half_of_the_target_is_missing(self):
        for seed in (0, 1):
            with self.subTest(seed=seed):
                dataset = generate_dataset(SimulationDesign(n=100_000, gamma0=0.5, seed=seed))
                self.assertTrue(0.45 <= dataset.missing_fraction() <= 0.55)

    def test_observation_rate_matches_integrated_probability(self):
        design = SimulationDesign(n=100_000, seed=12)
        expected = observation_probability(design)
        observed = float(generate_dataset(design).target_observed.mean())

        self.assertLess(abs(observed - expected), 3.0 * math.sqrt(expected * (1.0 - expected) / design.n))

    def test_sample_partial_correlation_matches_true_rho(self):
        design = SimulationDesign(n=1_000_000, gamma0=0.5, seed=99)
        draw = simulate_draw(design)

        self.assertLess(abs(sample_partial_correlation(draw.values, 0, 1, [2, 3]) - true_rho(design)), 0.005)

    def test_fully_selected_noise_is_allowed(self):
        dataset = generate_dataset(SimulationDesign(n=250, gamma0=1.0, seed=4))
        self.assertGreater(dataset.missing_fraction(), 0.0)


class TestRunReplicate(unittest.TestCase):
    def test_records_each_method(self):
        outcome = run_replicate(SimulationDesign(n=250, seed=1), 0, 0.05, UR_BOX, 11)

        self.assertIsNone(outcome.failure)
        self.assertEqual([record.method for record in outcome.records], list(METHODS))
        complete_case, oracle, region = outcome.records
        self.assertLessEqual(region.lower, oracle.lower)
        self.assertGreaterEqual(region.upper, oracle.upper)
        self.assertLessEqual(region.lower, complete_case.lower)
        self.assertIsNotNone(outcome.studentized)

    def test_zero_gamma_design_makes_oracle_equal_complete_case(self):
        outcome = run_replicate(SimulationDesign(n=250, gamma0=0.0, seed=6), 2, 0.05, UR_BOX, 5)
        complete_case, oracle, _ = outcome.records

        self.assertEqual((complete_case.lower, complete_case.upper), (oracle.lower, oracle.upper))

    def test_estimation_failure_is_recorded(self):
        with mock.patch("mnarcorr.simulation.prepare_estimator", side_effect=ExperimentError("boom")):
            with self.assertLogs("mnarcorr.simulation", level="WARNING"):
                outcome = run_replicate(SimulationDesign(n=250), 0, 0.05, UR_BOX, 5)

        self.assertEqual(outcome.records, ())
        self.assertEqual(outcome.failure, "ExperimentError: boom")


class TestCoverageExperiment(unittest.TestCase):
    def test_summaries_from_runner_outcomes(self):
        report = run_coverage_experiment(SimulationDesign(), 10, 0.05, UR_BOX, 5, runner=scripted_runner())

        self.assertEqual([summary.method for summary in report.methods], list(METHODS))
        ur = report.method("ur")
        self.assertEqual((ur.replicates, ur.covered_count, ur.empirical_coverage), (10, 10, 1.0))
        self.assertAlmostEqual(ur.width_quartiles[1], 0.3)
        self.assertEqual([record.replicate for record in report.records[:3]], [0, 0, 0])
        self.assertAlmostEqual(report.studentized_quantiles[0], float(np.quantile(np.arange(10.0), 0.025)))

    def test_failures_at_or_above_one_percent_abort(self):
        with self.assertRaises(ExperimentError):
            run_coverage_experiment(SimulationDesign(), 50, 0.05, UR_BOX, 5, runner=scripted_runner(failing={7}))

    def test_rare_failures_are_excluded_and_counted(self):
        report = run_coverage_experiment(SimulationDesign(), 200, 0.05, UR_BOX, 5, runner=scripted_runner(failing={7}))

        self.assertEqual(len(report.failures), 1)
        self.assertEqual(report.method("cc").replicates, 199)

    def test_incomplete_runner_output(self):
        def runner(design, indices, alpha, ur_box, grid_points):
            return scripted_runner()(design, indices[:-1], alpha, ur_box, grid_points)

        with self.assertRaises(ExperimentError):
            run_coverage_experiment(SimulationDesign(), 5, 0.05, UR_BOX, 5, runner=runner)

    def test_replicates_must_be_positive(self):
        with self.assertRaises(ExperimentError):
            run_coverage_experiment(SimulationDesign(), 0, 0.05, UR_BOX, 5)

    def test_report_is_independent_of_thread_count(self):
        design = SimulationDesign(n=250, seed=7)
        reports = []
        for threads in ("1", "4"):
            with mock.patch.dict(os.environ, {"MNARCORR_THREADS": threads}):
                reports.append(run_coverage_experiment(design, 4, 0.05, UR_BOX, 5))

        self.assertEqual(reports[0].model_dump_json(), reports[1].model_dump_json())
        self.assertEqual(reports[0].replicates_requested, 4)
        self.assertAlmostEqual(reports[0].true_rho, true_rho(design))


@unittest.skipUnless(SLOW_TESTS, "set MNARCORR_SLOW_TESTS=1 to run the 1000-replicate experiments")
class TestCoverageAcceptance(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.reports = {
            gamma0: run_coverage_experiment(SimulationDesign(n=250, gamma0=gamma0, seed=2024), 1000, 0.05, UR_BOX, 101)
            for gamma0 in (0.1, 0.5, 0.8)
        }

    def test_oracle_interval_has_nominal_coverage(self):
        for gamma0 in (0.1, 0.5):
            with self.subTest(gamma0=gamma0):
                coverage = self.reports[gamma0].method("oracle").empirical_coverage
                self.assertTrue(0.93 <= coverage <= 0.97, coverage)

    def test_uncertainty_region_is_conservative(self):
        for gamma0 in (0.1, 0.5):
            with self.subTest(gamma0=gamma0):
                self.assertGreaterEqual(self.reports[gamma0].method("ur").empirical_coverage, 0.936)

    def test_complete_case_coverage_degrades(self):
        coverage = [self.reports[gamma0].method("cc").empirical_coverage for gamma0 in (0.1, 0.5, 0.8)]

        self.assertGreater(coverage[0], coverage[1])
        self.assertGreater(coverage[1], coverage[2])
        self.assertGreater(self.reports[0.8].method("ur").empirical_coverage, coverage[2])

    def test_studentized_statistic_is_standard_normal(self):
        lower, upper = self.reports[0.5].studentized_quantiles

        self.assertLess(abs(lower + 1.96), 0.25)
        self.assertLess(abs(upper - 1.96), 0.25)


if __name__ == "__main__":
    unittest.main()
