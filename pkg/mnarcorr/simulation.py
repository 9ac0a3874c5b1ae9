import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.stats import truncnorm

from mnarcorr.config import get_thread_count
from mnarcorr.errors import ExperimentError, MnarError
from mnarcorr.inference import confidence_interval, sweep_region
from mnarcorr.mnar_estimators import prepare_estimator
from mnarcorr.model_core import (
    Dataset,
    GammaBox,
    MechanismKind,
    MechanismSpec,
    Roles,
    rho_from_components,
    validate_gamma,
)

logger = logging.getLogger(__name__)

COLUMNS = ("memory_decline", "blood_marker", "age", "hypertension")
ROLES = Roles(target=0, partner=1, adjusters=(2, 3))
METHODS = ("cc", "oracle", "ur")
MAX_FAILURE_SHARE = 0.01


class CovariateDistribution(BaseModel):
    """Age ~ Normal(mean, sd) truncated to [low, high]; hypertension ~ Bernoulli(p), independent."""

    age_mean: float = 66.0
    age_sd: float = 8.0
    age_low: float = 55.0
    age_high: float = 85.0
    hypertension_p: float = 0.4

    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="after")
    def validate_distribution(self) -> "CovariateDistribution":
        if self.age_sd <= 0:
            raise ValueError("age_sd must be positive")
        if self.age_low >= self.age_high:
            raise ValueError("age_low must be below age_high")
        if not 0.0 <= self.hypertension_p <= 1.0:
            raise ValueError("hypertension_p must lie in [0, 1]")
        return self

    def draw(self, rng: np.random.Generator, n: int) -> Tuple[np.ndarray, np.ndarray]:
        a = (self.age_low - self.age_mean) / self.age_sd
        b = (self.age_high - self.age_mean) / self.age_sd
        age = truncnorm.rvs(a, b, loc=self.age_mean, scale=self.age_sd, size=n, random_state=rng)
        hypertension = (rng.random(n) < self.hypertension_p).astype(float)
        return np.asarray(age, dtype=float), hypertension


class SimulationDesign(BaseModel):
    n: int = 250
    gamma0: float = 0.5
    gamma20: float = 0.0
    mechanism: MechanismKind = MechanismKind.A
    seed: int = 0
    # partner on (1, age, hypertension)
    partner_coefficients: Tuple[float, float, float] = (2.313, -0.042, -0.216)
    partner_variance: float = 1.16
    # target on (1, partner, age, hypertension)
    target_coefficients: Tuple[float, float, float, float] = (1.092, 0.01, -0.002, -0.006)
    sigma_base: float = 0.028
    # selection on (1, partner, age, hypertension)
    selection_coefficients: Tuple[float, float, float, float] = (2.708, 0.548, -0.036, -0.042)
    # selection on (1, age, hypertension) with the partner equation substituted in
    reduced_selection_coefficients: Tuple[float, float, float] = (3.976, -0.059, -0.160)
    partner_selection_coefficients: Tuple[float, float, float] = (4.5, -0.059, -0.160)
    covariates: CovariateDistribution = Field(default_factory=CovariateDistribution)

    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="after")
    def validate_design(self) -> "SimulationDesign":
        validate_gamma(self.gamma0, "gamma0")
        validate_gamma(self.gamma20, "gamma20")
        if self.n <= len(COLUMNS):
            raise ValueError(f"n must exceed {len(COLUMNS)}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not self.sigma_base > 0:
            raise ValueError("sigma_base must be positive")
        if not self.partner_variance > 0:
            raise ValueError("partner_variance must be positive")
        if self.gamma20 != 0.0 and self.mechanism != MechanismKind.C:
            raise ValueError("gamma20 applies only to mechanism C")
        return self

    @property
    def partner_sd(self) -> float:
        return math.sqrt(self.partner_variance)

    @property
    def mech(self) -> MechanismSpec:
        return MechanismSpec(kind=self.mechanism)


class SimulatedDraw(BaseModel):
    """A generated table before masking, with the masks that would apply."""

    values: np.ndarray
    observed: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    def to_dataset(self) -> Dataset:
        masked = np.where(self.observed, self.values, np.nan)
        return Dataset(values=masked, observed=self.observed, roles=ROLES, columns=COLUMNS)


class ReplicateRecord(BaseModel):
    replicate: int
    method: str
    lower: float
    upper: float
    width: float
    covered: bool

    model_config = ConfigDict(extra="forbid", frozen=True)


class ReplicateOutcome(BaseModel):
    replicate: int
    records: Tuple[ReplicateRecord, ...] = ()
    studentized: float | None = None
    failure: str | None = None

    model_config = ConfigDict(extra="forbid", frozen=True)


class MethodSummary(BaseModel):
    method: str
    replicates: int
    covered_count: int
    empirical_coverage: float
    width_quartiles: Tuple[float, float, float]

    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="after")
    def validate_counts(self) -> "MethodSummary":
        if not 0 <= self.covered_count <= self.replicates:
            raise ValueError("covered_count must lie between 0 and replicates")
        return self


class CoverageReport(BaseModel):
    design: SimulationDesign
    alpha: float
    ur_box: GammaBox
    grid_points: int
    replicates_requested: int
    true_rho: float
    methods: Tuple[MethodSummary, ...]
    studentized_quantiles: Tuple[float, float]
    failures: Tuple[ReplicateOutcome, ...] = ()
    records: Tuple[ReplicateRecord, ...] = ()

    model_config = ConfigDict(extra="forbid", frozen=True)

    def method(self, name: str) -> MethodSummary:
        for summary in self.methods:
            if summary.method == name:
                return summary
        raise KeyError(name)


ReplicateRunner = Callable[[SimulationDesign, Sequence[int], float, GammaBox, int], List[ReplicateOutcome]]


def replicate_generator(seed: int, replicate: int) -> np.random.Generator:
    """Counter-based stream keyed by (seed, replicate); independent of scheduling."""

    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, replicate])))


def true_rho(design: SimulationDesign) -> float:
    return rho_from_components(
        design.target_coefficients[1], design.sigma_base**2, design.partner_variance
    )


def simulate_draw(design: SimulationDesign, replicate: int = 0) -> SimulatedDraw:
    rng = replicate_generator(design.seed, replicate)
    n = design.n
    age, hypertension = design.covariates.draw(rng, n)
    eta1 = rng.standard_normal(n)
    eta2 = rng.standard_normal(n)
    partner_noise = rng.standard_normal(n)
    target_noise = rng.standard_normal(n)

    adjusters = np.column_stack([np.ones(n), age, hypertension])
    if design.mechanism == MechanismKind.C:
        gamma20 = design.gamma20
        xi2 = design.partner_sd * (gamma20 * eta2 + math.sqrt(1.0 - gamma20 * gamma20) * partner_noise)
    else:
        xi2 = design.partner_sd * partner_noise
    partner = adjusters @ np.asarray(design.partner_coefficients) + xi2

    gamma0 = design.gamma0
    epsilon = design.sigma_base * math.sqrt(1.0 - gamma0 * gamma0) * target_noise
    full = np.column_stack([np.ones(n), partner, age, hypertension])
    target = full @ np.asarray(design.target_coefficients) + design.sigma_base * gamma0 * eta1 + epsilon

    values = np.column_stack([target, partner, age, hypertension])
    observed = np.ones_like(values, dtype=bool)
    if design.mechanism == MechanismKind.A:
        observed[:, 0] = full @ np.asarray(design.selection_coefficients) + eta1 > 0
    elif design.mechanism == MechanismKind.B:
        selected = adjusters @ np.asarray(design.reduced_selection_coefficients) + eta1 > 0
        observed[:, 0] = selected
        observed[:, 1] = selected
    else:
        observed[:, 0] = adjusters @ np.asarray(design.reduced_selection_coefficients) + eta1 > 0
        observed[:, 1] = adjusters @ np.asarray(design.partner_selection_coefficients) + eta2 > 0
    return SimulatedDraw(values=values, observed=observed)


def generate_dataset(design: SimulationDesign, replicate: int = 0) -> Dataset:
    return simulate_draw(design, replicate).to_dataset()


def run_replicate(
    design: SimulationDesign, replicate: int, alpha: float, ur_box: GammaBox, grid_points: int
) -> ReplicateOutcome:
    """Complete-case CI, oracle CI at the true γ and the uncertainty region for one replicate."""

    rho = true_rho(design)
    try:
        estimator = prepare_estimator(generate_dataset(design, replicate), design.mech)
        complete_case = confidence_interval(estimator.at(0.0, 0.0), alpha)
        oracle_estimates = estimator.at(design.gamma0, design.gamma20)
        oracle = confidence_interval(oracle_estimates, alpha)
        region = sweep_region(estimator, ur_box, alpha, grid_points)
    except MnarError as exc:
        logger.warning("replicate %d excluded: %s", replicate, exc.detail)
        return ReplicateOutcome(replicate=replicate, failure=f"{type(exc).__name__}: {exc.detail}")

    records = tuple(
        ReplicateRecord(
            replicate=replicate,
            method=method,
            lower=interval.lower,
            upper=interval.upper,
            width=interval.upper - interval.lower,
            covered=interval.lower <= rho <= interval.upper,
        )
        for method, interval in zip(METHODS, (complete_case, oracle, region))
    )
    studentized = None
    if oracle_estimates.se_hat > 0:
        studentized = (oracle_estimates.rho_hat - rho) / oracle_estimates.se_hat
    return ReplicateOutcome(replicate=replicate, records=records, studentized=studentized)


def run_local(
    design: SimulationDesign, indices: Sequence[int], alpha: float, ur_box: GammaBox, grid_points: int
) -> List[ReplicateOutcome]:
    threads = get_thread_count()
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(
            pool.map(lambda index: run_replicate(design, index, alpha, ur_box, grid_points), indices)
        )


def summarize_method(method: str, records: Sequence[ReplicateRecord]) -> MethodSummary:
    widths = np.sort(np.array([record.width for record in records], dtype=float))
    covered = sum(1 for record in records if record.covered)
    quartiles = np.quantile(widths, [0.25, 0.5, 0.75]) if widths.size else np.full(3, np.nan)
    return MethodSummary(
        method=method,
        replicates=len(records),
        covered_count=covered,
        empirical_coverage=covered / len(records) if records else float("nan"),
        width_quartiles=tuple(float(value) for value in quartiles),
    )


def run_coverage_experiment(
    design: SimulationDesign,
    replicates: int,
    alpha: float,
    ur_box: GammaBox,
    grid_points: int,
    runner: ReplicateRunner | None = None,
) -> CoverageReport:
    if replicates < 1:
        raise ExperimentError(f"replicates must be at least 1, got {replicates}")
    runner = runner or run_local
    outcomes = sorted(
        runner(design, list(range(replicates)), alpha, ur_box, grid_points),
        key=lambda outcome: outcome.replicate,
    )
    if [outcome.replicate for outcome in outcomes] != list(range(replicates)):
        raise ExperimentError("replicate runner returned an incomplete set of outcomes")

    failures = tuple(outcome for outcome in outcomes if outcome.failure is not None)
    if failures:
        logger.warning("%d of %d replicates excluded", len(failures), replicates)
    if len(failures) >= MAX_FAILURE_SHARE * replicates and failures:
        raise ExperimentError(
            f"{len(failures)} of {replicates} replicates failed; at most 1% may be excluded",
            failures=[outcome.failure for outcome in failures],
        )

    records = tuple(record for outcome in outcomes for record in outcome.records)
    studentized = np.array(
        [outcome.studentized for outcome in outcomes if outcome.studentized is not None], dtype=float
    )
    quantiles = np.quantile(studentized, [0.025, 0.975]) if studentized.size else np.full(2, np.nan)
    report = CoverageReport(
        design=design,
        alpha=alpha,
        ur_box=ur_box,
        grid_points=grid_points,
        replicates_requested=replicates,
        true_rho=true_rho(design),
        methods=tuple(
            summarize_method(method, [record for record in records if record.method == method])
            for method in METHODS
        ),
        studentized_quantiles=(float(quantiles[0]), float(quantiles[1])),
        failures=failures,
        records=records,
    )
    logger.info(
        "coverage experiment: %s",
        ", ".join(f"{item.method}={item.empirical_coverage:.3f}" for item in report.methods),
    )
    return report
