import math
from enum import Enum
from typing import Dict, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from mnarcorr.errors import DomainError, MechanismError
from mnarcorr.regression import RCOND_THRESHOLD, projected_quadratic, reciprocal_condition

DENOMINATOR_THRESHOLD = 1e-8

# Column order of the outcome design X₋₁ is fixed as (intercept, partner, adjusters...).
PARTNER_COLUMN = 1


class MechanismKind(str, Enum):
    A = "A"
    B = "B"
    C = "C"


class MechanismSpec(BaseModel):
    kind: MechanismKind

    model_config = ConfigDict(extra="forbid", frozen=True)

    @property
    def two_sided(self) -> bool:
        return self.kind == MechanismKind.C

    @property
    def selection_includes_partner(self) -> bool:
        return self.kind == MechanismKind.A


class Roles(BaseModel):
    target: int
    partner: int
    adjusters: Tuple[int, ...] = ()

    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="after")
    def validate_disjoint(self) -> "Roles":
        columns = [self.target, self.partner, *self.adjusters]
        if any(column < 0 for column in columns):
            raise ValueError("role columns must be non-negative indices")
        if len(set(columns)) != len(columns):
            raise ValueError("target, partner and adjusters must be distinct columns")
        return self


class Dataset(BaseModel):
    """Numeric table with an explicit observation mask and variable roles.

    Cells whose mask entry is false are never read; their stored value is
    irrelevant (ingestion and the generators store NaN there).
    """

    values: np.ndarray
    observed: np.ndarray
    roles: Roles
    columns: Tuple[str, ...] = ()

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="after")
    def validate_table(self) -> "Dataset":
        values = np.array(self.values, dtype=float)
        observed = np.array(self.observed, dtype=bool)
        if values.ndim != 2 or observed.shape != values.shape:
            raise ValueError("values and observed must be matrices of equal shape")
        n_rows, p = values.shape
        role_columns = [self.roles.target, self.roles.partner, *self.roles.adjusters]
        if sorted(role_columns) != list(range(p)):
            raise ValueError("roles must assign every column exactly once")
        if self.columns and len(self.columns) != p:
            raise ValueError("columns must name every variable")
        if n_rows <= p:
            raise ValueError(f"n_rows ({n_rows}) must exceed the number of variables ({p})")
        adjusters = list(self.roles.adjusters)
        if adjusters and not observed[:, adjusters].all():
            raise ValueError("adjuster columns must be fully observed")
        if not np.all(np.isfinite(values[observed])):
            raise ValueError("observed cells must hold finite numbers")
        values.setflags(write=False)
        observed.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "observed", observed)
        return self

    @property
    def n_rows(self) -> int:
        return int(self.values.shape[0])

    @property
    def p(self) -> int:
        return int(self.values.shape[1])

    @property
    def target_observed(self) -> np.ndarray:
        return self.observed[:, self.roles.target]

    @property
    def partner_observed(self) -> np.ndarray:
        return self.observed[:, self.roles.partner]

    def missing_fraction(self, column: int | None = None) -> float:
        column = self.roles.target if column is None else column
        return float(1.0 - self.observed[:, column].mean())


class GammaBox(BaseModel):
    gamma1_min: float
    gamma1_max: float
    gamma2_min: float = 0.0
    gamma2_max: float = 0.0

    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="after")
    def validate_bounds(self) -> "GammaBox":
        for name in ("gamma1_min", "gamma1_max", "gamma2_min", "gamma2_max"):
            value = getattr(self, name)
            if not -1.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [-1, 1], got {value}")
        if self.gamma1_min > self.gamma1_max or self.gamma2_min > self.gamma2_max:
            raise ValueError("gamma box minimum must not exceed its maximum")
        return self

    def contains(self, gamma1: float, gamma2: float = 0.0) -> bool:
        return (
            self.gamma1_min <= gamma1 <= self.gamma1_max
            and self.gamma2_min <= gamma2 <= self.gamma2_max
        )

    def grid(self, mech: MechanismSpec, points: int) -> List[Tuple[float, float]]:
        """Uniform inclusive grid; Cartesian product over both parameters for MDM C."""

        if points < 2:
            raise DomainError("grid_points must be at least 2 per active gamma dimension")
        gamma1 = np.linspace(self.gamma1_min, self.gamma1_max, points)
        if not mech.two_sided:
            return [(float(g1), 0.0) for g1 in gamma1]
        gamma2 = np.linspace(self.gamma2_min, self.gamma2_max, points)
        return [(float(g1), float(g2)) for g1 in gamma1 for g2 in gamma2]


class RegularityCheck(BaseModel):
    assumption: int
    name: str
    passed: bool
    magnitude: float
    threshold: float

    model_config = ConfigDict(extra="forbid", frozen=True)


class RegularityReport(BaseModel):
    mechanism: MechanismKind
    gamma1: float
    gamma2: float = 0.0
    checks: Tuple[RegularityCheck, ...]

    model_config = ConfigDict(extra="forbid", frozen=True)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> List[RegularityCheck]:
        return [check for check in self.checks if not check.passed]

    def describe_failures(self) -> str:
        return "; ".join(
            f"assumption {check.assumption} ({check.name}): magnitude {check.magnitude:.3e}"
            for check in self.failures
        )


class DesignSet(BaseModel):
    """Row selections and design matrices shared by estimation and validation."""

    complete: np.ndarray
    partner_rows: np.ndarray
    outcome_design: np.ndarray
    selection_design: np.ndarray
    adjuster_design_full: np.ndarray
    partner_design: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @property
    def n_complete(self) -> int:
        return int(self.complete.sum())

    @property
    def n_partner(self) -> int:
        return int(self.partner_rows.sum())


def build_designs(dataset: Dataset, mech: MechanismSpec) -> DesignSet:
    """Assemble X₋₁ₛ, the selection design and the adjuster design for one mechanism.

    ``partner_design`` is the adjuster design on the rows that estimate
    σ²₂.₃…ₚ: every row for MDM A, the complete cases for MDM B and the rows with
    an observed partner for MDM C.
    """

    roles = dataset.roles
    values = dataset.values
    intercept = np.ones((dataset.n_rows, 1))
    adjusters = values[:, list(roles.adjusters)]
    adjuster_design = np.hstack([intercept, adjusters])
    outcome_full = np.hstack([intercept, values[:, [roles.partner]], adjusters])

    target_rows = dataset.target_observed
    partner_rows = dataset.partner_observed
    if mech.kind == MechanismKind.C:
        complete = target_rows & partner_rows
    else:
        complete = target_rows.copy()

    if mech.kind == MechanismKind.A:
        selection_design = outcome_full
        estimation_rows = np.ones(dataset.n_rows, dtype=bool)
    elif mech.kind == MechanismKind.B:
        selection_design = adjuster_design
        estimation_rows = complete
    else:
        selection_design = adjuster_design
        estimation_rows = partner_rows

    return DesignSet(
        complete=complete,
        partner_rows=estimation_rows,
        outcome_design=outcome_full[complete],
        selection_design=selection_design,
        adjuster_design_full=adjuster_design,
        partner_design=adjuster_design[estimation_rows],
    )


def detect_mask_pattern(dataset: Dataset) -> List[MechanismKind]:
    """Return the mechanisms whose missing-data pattern matches the mask."""

    target = dataset.target_observed
    partner = dataset.partner_observed
    compatible: List[MechanismKind] = []
    if partner.all():
        compatible.append(MechanismKind.A)
    if np.array_equal(target, partner):
        compatible.append(MechanismKind.B)
    if not partner.all() and not np.array_equal(target, partner):
        compatible.append(MechanismKind.C)
    return compatible


def validate_mechanism(dataset: Dataset, mech: MechanismSpec) -> None:
    compatible = detect_mask_pattern(dataset)
    if mech.kind not in compatible:
        found = ", ".join(kind.value for kind in compatible) or "none"
        raise MechanismError(
            f"Declared mechanism {mech.kind.value} does not match the mask pattern "
            f"(compatible: {found})",
            compatible=[kind.value for kind in compatible],
        )


def validate_gamma(gamma: float, name: str = "gamma") -> float:
    if not math.isfinite(gamma) or abs(gamma) > 1.0:
        raise DomainError(f"{name} must lie in [-1, 1], got {gamma}")
    return float(gamma)


def rho_from_components(beta2: float, sigma1_sq: float, sigma2_sq: float) -> float:
    """Partial correlation ρ = β₂ / √(β₂² + σ²₁.₂…ₚ / σ²₂.₃…ₚ)."""

    if not (math.isfinite(sigma1_sq) and sigma1_sq > 0):
        raise DomainError(f"sigma1_sq must be a positive real, got {sigma1_sq}")
    if not (math.isfinite(sigma2_sq) and sigma2_sq > 0):
        raise DomainError(f"sigma2_sq must be a positive real, got {sigma2_sq}")
    if not math.isfinite(beta2):
        raise DomainError(f"beta2 must be finite, got {beta2}")
    return beta2 / math.sqrt(beta2 * beta2 + sigma1_sq / sigma2_sq)


def correction_denominator(gamma: float, u_lambda: float, lambda_projection: float, df: int) -> float:
    """1 + γ²(ûᵀλ_û − λ_ûᵀX(XᵀX)⁻¹Xᵀλ_û)/df."""

    return 1.0 + gamma * gamma * (u_lambda - lambda_projection) / df


def sample_partial_correlation(
    values: np.ndarray, target: int, partner: int, adjusters: List[int] | Tuple[int, ...]
) -> float:
    """Correlation of the residuals of target and partner after projecting on (1, adjusters)."""

    values = np.asarray(values, dtype=float)
    design = np.hstack([np.ones((values.shape[0], 1)), values[:, list(adjusters)]])
    residuals = []
    for column in (target, partner):
        coef, *_ = np.linalg.lstsq(design, values[:, column], rcond=None)
        residuals.append(values[:, column] - design @ coef)
    return float(np.corrcoef(residuals[0], residuals[1])[0, 1])


class FittedQuantities(BaseModel):
    """γ-independent summaries of the estimation intermediates plus the current estimates."""

    rcond_outcome: float
    rcond_adjusters: float
    u_lambda: float
    lambda_projection: float
    df_outcome: int
    w_lambda: float | None = None
    w_projection: float | None = None
    df_partner: int | None = None
    sigma1_sq: float
    sigma2_sq: float
    beta2: float

    model_config = ConfigDict(extra="forbid", frozen=True)


def build_fitted_quantities(
    dataset: Dataset,
    mech: MechanismSpec,
    u_hat: np.ndarray,
    mills_u: np.ndarray,
    sigma1_sq: float,
    sigma2_sq: float,
    beta2: float,
    w_hat: np.ndarray | None = None,
    mills_w: np.ndarray | None = None,
    designs: DesignSet | None = None,
) -> FittedQuantities:
    designs = designs or build_designs(dataset, mech)
    n = designs.n_complete
    quantities: Dict[str, float | int | None] = {
        "rcond_outcome": reciprocal_condition(designs.outcome_design),
        "rcond_adjusters": reciprocal_condition(designs.partner_design),
        "u_lambda": float(np.dot(u_hat, mills_u)),
        "lambda_projection": projected_quadratic(designs.outcome_design, mills_u),
        "df_outcome": n - dataset.p,
        "sigma1_sq": sigma1_sq,
        "sigma2_sq": sigma2_sq,
        "beta2": beta2,
    }
    if mech.two_sided and w_hat is not None and mills_w is not None:
        quantities["w_lambda"] = float(np.dot(w_hat, mills_w))
        quantities["w_projection"] = projected_quadratic(designs.partner_design, mills_w)
        quantities["df_partner"] = designs.n_partner - dataset.p
    return FittedQuantities(**quantities)


def _denominator_check(
    assumption: int, name: str, gamma: float, u_lambda: float | None, projection: float | None, df: int | None
) -> RegularityCheck:
    if u_lambda is None or projection is None or df is None or df <= 0:
        magnitude = 0.0
    else:
        magnitude = abs(correction_denominator(gamma, u_lambda, projection, df))
    return RegularityCheck(
        assumption=assumption,
        name=name,
        passed=bool(np.isfinite(magnitude) and magnitude > DENOMINATOR_THRESHOLD),
        magnitude=float(magnitude),
        threshold=DENOMINATOR_THRESHOLD,
    )


def validate_regularity(
    dataset: Dataset,
    mech: MechanismSpec,
    gamma1: float,
    fitted: FittedQuantities,
    gamma2: float = 0.0,
) -> RegularityReport:
    """Check the regularity assumptions behind the asymptotic results.

    Never raises for a violated assumption; callers inspect ``passed``.
    MDM A and B yield five checks, MDM C six (separate denominators for the
    target and partner corrections).
    """

    observed_values = dataset.values[dataset.observed]
    moments_finite = bool(np.all(np.isfinite(observed_values)))
    variance_floor = min(fitted.sigma1_sq, fitted.sigma2_sq)
    checks = [
        RegularityCheck(
            assumption=1,
            name="finite moments and nonzero residual variances",
            passed=moments_finite and variance_floor > 0,
            magnitude=float(variance_floor),
            threshold=0.0,
        ),
        RegularityCheck(
            assumption=2,
            name="complete-case outcome design invertible",
            passed=fitted.rcond_outcome >= RCOND_THRESHOLD,
            magnitude=fitted.rcond_outcome,
            threshold=RCOND_THRESHOLD,
        ),
        RegularityCheck(
            assumption=3,
            name="adjuster design invertible",
            passed=fitted.rcond_adjusters >= RCOND_THRESHOLD,
            magnitude=fitted.rcond_adjusters,
            threshold=RCOND_THRESHOLD,
        ),
        _denominator_check(
            4,
            "target variance correction denominator nonzero",
            gamma1,
            fitted.u_lambda,
            fitted.lambda_projection,
            fitted.df_outcome,
        ),
    ]
    next_assumption = 5
    if mech.two_sided:
        checks.append(
            _denominator_check(
                5,
                "partner variance correction denominator nonzero",
                gamma2,
                fitted.w_lambda,
                fitted.w_projection,
                fitted.df_partner,
            )
        )
        next_assumption = 6

    identity_floor = min(fitted.sigma2_sq, fitted.beta2 * fitted.beta2 + fitted.sigma1_sq)
    checks.append(
        RegularityCheck(
            assumption=next_assumption,
            name="partial correlation identity well defined",
            passed=bool(fitted.sigma2_sq != 0 and not (fitted.beta2 == 0 and fitted.sigma1_sq == 0)),
            magnitude=float(identity_floor),
            threshold=0.0,
        )
    )
    return RegularityReport(mechanism=mech.kind, gamma1=gamma1, gamma2=gamma2, checks=tuple(checks))
