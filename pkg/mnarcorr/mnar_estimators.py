import logging
import math
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from mnarcorr.errors import DomainError, InsufficientDataError, NumericalError, RegularityError
from mnarcorr.model_core import (
    DENOMINATOR_THRESHOLD,
    PARTNER_COLUMN,
    Dataset,
    MechanismKind,
    MechanismSpec,
    RegularityReport,
    build_designs,
    build_fitted_quantities,
    correction_denominator,
    rho_from_components,
    validate_gamma,
    validate_mechanism,
    validate_regularity,
)
from mnarcorr.probit import ProbitFit, fit_probit, mills_vector
from mnarcorr.regression import OlsFit, ols_fit

logger = logging.getLogger(__name__)


class CorrectedEstimates(BaseModel):
    mechanism: MechanismKind
    gamma1: float
    gamma2: float = 0.0
    beta2_hat: float
    sigma1_sq_hat: float
    sigma2_sq_hat: float
    rho_hat: float
    se_hat: float
    beta2_ols: float
    sigma1_sq_ols: float
    sigma2_sq_ols: float
    n_total: int
    n_complete: int
    n2: int | None = None
    probit_fits: Tuple[ProbitFit, ...]
    regularity: RegularityReport

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="after")
    def validate_estimates(self) -> "CorrectedEstimates":
        if not (math.isfinite(self.se_hat) and self.se_hat >= 0):
            raise ValueError("se_hat must be a finite non-negative number")
        if not -1.0 < self.rho_hat < 1.0:
            raise ValueError("rho_hat must lie strictly inside (-1, 1)")
        return self


def corrected_sigma_sq(
    ols_resid_var: float,
    gamma: float,
    u_hat: np.ndarray,
    mills: np.ndarray,
    design: np.ndarray,
    xtx_inv: np.ndarray,
    df: int,
) -> float:
    """Bias-corrected residual variance σ̂²_ols / (1 + γ²(ûᵀλ − λᵀX(XᵀX)⁻¹Xᵀλ)/df)."""

    if df <= 0:
        raise InsufficientDataError(f"Degrees of freedom must be positive, got {df}", df=df)
    projected = design.T @ mills
    denominator = correction_denominator(
        gamma, float(u_hat @ mills), float(projected @ xtx_inv @ projected), df
    )
    if not abs(denominator) > DENOMINATOR_THRESHOLD:
        raise RegularityError(
            f"Variance correction denominator {denominator:.3e} is numerically zero at gamma={gamma}",
            denominator=denominator,
            gamma=gamma,
        )
    return ols_resid_var / denominator


def corrected_beta2(
    ols_coef2: float,
    gamma: float,
    sigma1_hat: float,
    xtx_inv: np.ndarray,
    design: np.ndarray,
    mills: np.ndarray,
) -> float:
    """β̂₂,ols − γσ̂₁[(XᵀX)⁻¹Xᵀλ]₂; the bracket is the partner coefficient of λ regressed on X."""

    mills_coef = xtx_inv @ (design.T @ mills)
    return ols_coef2 - gamma * sigma1_hat * float(mills_coef[PARTNER_COLUMN])


def standard_error(
    sigma1_sq_hat: float,
    gamma1: float,
    u_hat: np.ndarray,
    mills: np.ndarray,
    xtx_inv_22: float,
    beta2_hat: float,
    sigma2_sq_hat: float,
    n: int,
) -> float:
    """Half-width scale of the interval for ρ̂ (the √n factors cancel against (XᵀX)⁻¹₂₂)."""

    if not sigma2_sq_hat > 0:
        raise RegularityError(
            f"Partner residual variance must be positive, got {sigma2_sq_hat}",
            sigma2_sq_hat=sigma2_sq_hat,
        )
    denominator = beta2_hat * beta2_hat + sigma1_sq_hat / sigma2_sq_hat
    if not denominator > 0:
        raise RegularityError(
            "beta2_hat and sigma1_sq_hat are both zero; the partial correlation is undefined",
            denominator=denominator,
        )
    gamma_sq = gamma1 * gamma1
    inflation = 1.0 + gamma_sq * float(u_hat @ mills) / n - gamma_sq * float(mills @ mills) / n
    radicand = sigma1_sq_hat * inflation * xtx_inv_22 / denominator
    if not (math.isfinite(radicand) and radicand >= 0):
        raise NumericalError(
            f"Standard error radicand is {radicand:.3e} at gamma={gamma1} "
            f"(variance inflation factor {inflation:.3e})",
            radicand=radicand,
            inflation=inflation,
            gamma=gamma1,
        )
    return math.sqrt(radicand)


class SelectionCorrection:
    """Everything in the estimator that does not depend on γ, fitted once per dataset.

    ``at(gamma1, gamma2)`` applies the corrections in the order σ̂²₁ → β̂₂ →
    ŝe, with σ̂₁ inside the slope correction taken from the corrected variance.
    """

    def __init__(self, dataset: Dataset, mech: MechanismSpec):
        validate_mechanism(dataset, mech)
        self.dataset = dataset
        self.mech = mech
        self.designs = build_designs(dataset, mech)

        roles = dataset.roles
        p = dataset.p
        self.n_complete = self.designs.n_complete
        if self.n_complete <= p:
            raise InsufficientDataError(
                f"Only {self.n_complete} complete cases for {p} variables",
                n_complete=self.n_complete,
                p=p,
            )

        target_rows = dataset.target_observed
        if mech.kind == MechanismKind.C:
            self.n2: int | None = self.designs.n_partner
            if self.n2 <= p:
                raise InsufficientDataError(
                    f"Only {self.n2} rows with an observed partner for {p} variables",
                    n2=self.n2,
                    p=p,
                )
            target_fit = fit_probit(self.designs.selection_design, target_rows, rows=self.designs.complete)
            partner_fit = fit_probit(self.designs.selection_design, dataset.partner_observed)
            self.probit_fits: Tuple[ProbitFit, ...] = (target_fit, partner_fit)
            self.w_hat: np.ndarray | None = partner_fit.linear_index_u
            self.mills_w: np.ndarray | None = mills_vector(partner_fit)
        else:
            self.n2 = None
            target_fit = fit_probit(self.designs.selection_design, target_rows)
            self.probit_fits = (target_fit,)
            self.w_hat = None
            self.mills_w = None
        self.u_hat = target_fit.linear_index_u
        self.mills_u = mills_vector(target_fit)

        target_values = dataset.values[self.designs.complete, roles.target]
        self.outcome_fit: OlsFit = ols_fit(self.designs.outcome_design, target_values)
        partner_values = dataset.values[self.designs.partner_rows, roles.partner]
        self.partner_fit: OlsFit = ols_fit(self.designs.partner_design, partner_values)
        if mech.kind == MechanismKind.C:
            self.partner_df = self.n2 - p
            self.sigma2_sq_ols = self.partner_fit.residual_variance_with_df(self.partner_df)
        else:
            self.partner_df = self.partner_fit.n - self.partner_fit.k
            self.sigma2_sq_ols = self.partner_fit.residual_variance

        self.outcome_df = self.n_complete - p
        self.beta2_ols = float(self.outcome_fit.coef[PARTNER_COLUMN])
        self.sigma1_sq_ols = self.outcome_fit.residual_variance
        self.fitted = build_fitted_quantities(
            dataset,
            mech,
            u_hat=self.u_hat,
            mills_u=self.mills_u,
            sigma1_sq=self.sigma1_sq_ols,
            sigma2_sq=self.sigma2_sq_ols,
            beta2=self.beta2_ols,
            w_hat=self.w_hat,
            mills_w=self.mills_w,
            designs=self.designs,
        )
        logger.debug(
            "prepared mechanism %s: N=%d n=%d n2=%s beta2_ols=%.6g sigma1_sq_ols=%.6g",
            mech.kind.value,
            dataset.n_rows,
            self.n_complete,
            self.n2,
            self.beta2_ols,
            self.sigma1_sq_ols,
        )

    def at(self, gamma1: float, gamma2: float = 0.0) -> CorrectedEstimates:
        gamma1 = validate_gamma(gamma1, "gamma1")
        gamma2 = validate_gamma(gamma2, "gamma2")
        if gamma2 != 0.0 and not self.mech.two_sided:
            raise DomainError(f"gamma2 applies only to mechanism C, got {gamma2} for {self.mech.kind.value}")

        outcome = self.outcome_fit
        sigma1_sq = corrected_sigma_sq(
            self.sigma1_sq_ols,
            gamma1,
            self.u_hat,
            self.mills_u,
            self.designs.outcome_design,
            outcome.xtx_inv,
            self.outcome_df,
        )
        if self.mech.two_sided:
            sigma2_sq = corrected_sigma_sq(
                self.sigma2_sq_ols,
                gamma2,
                self.w_hat,
                self.mills_w,
                self.designs.partner_design,
                self.partner_fit.xtx_inv,
                self.partner_df,
            )
        else:
            sigma2_sq = self.sigma2_sq_ols

        if sigma1_sq > 0:
            beta2 = corrected_beta2(
                self.beta2_ols,
                gamma1,
                math.sqrt(sigma1_sq),
                outcome.xtx_inv,
                self.designs.outcome_design,
                self.mills_u,
            )
        else:
            beta2 = self.beta2_ols

        report = validate_regularity(
            self.dataset,
            self.mech,
            gamma1,
            self.fitted.model_copy(update={"sigma1_sq": sigma1_sq, "sigma2_sq": sigma2_sq, "beta2": beta2}),
            gamma2=gamma2,
        )
        if not report.passed:
            raise RegularityError(
                f"Regularity assumptions fail at gamma=({gamma1}, {gamma2}): {report.describe_failures()}",
                report=report,
            )

        se = standard_error(
            sigma1_sq,
            gamma1,
            self.u_hat,
            self.mills_u,
            float(outcome.xtx_inv[PARTNER_COLUMN, PARTNER_COLUMN]),
            beta2,
            sigma2_sq,
            self.n_complete,
        )
        return CorrectedEstimates(
            mechanism=self.mech.kind,
            gamma1=gamma1,
            gamma2=gamma2,
            beta2_hat=beta2,
            sigma1_sq_hat=sigma1_sq,
            sigma2_sq_hat=sigma2_sq,
            rho_hat=rho_from_components(beta2, sigma1_sq, sigma2_sq),
            se_hat=se,
            beta2_ols=self.beta2_ols,
            sigma1_sq_ols=self.sigma1_sq_ols,
            sigma2_sq_ols=self.sigma2_sq_ols,
            n_total=self.dataset.n_rows,
            n_complete=self.n_complete,
            n2=self.n2,
            probit_fits=self.probit_fits,
            regularity=report,
        )


def prepare_estimator(dataset: Dataset, mech: MechanismSpec) -> SelectionCorrection:
    return SelectionCorrection(dataset, mech)


def estimate_mdm_a(dataset: Dataset, gamma: float) -> CorrectedEstimates:
    gamma = validate_gamma(gamma)
    return prepare_estimator(dataset, MechanismSpec(kind=MechanismKind.A)).at(gamma)


def estimate_mdm_b(dataset: Dataset, gamma: float) -> CorrectedEstimates:
    gamma = validate_gamma(gamma)
    return prepare_estimator(dataset, MechanismSpec(kind=MechanismKind.B)).at(gamma)


def estimate_mdm_c(dataset: Dataset, gamma1: float, gamma2: float) -> CorrectedEstimates:
    gamma1 = validate_gamma(gamma1, "gamma1")
    gamma2 = validate_gamma(gamma2, "gamma2")
    return prepare_estimator(dataset, MechanismSpec(kind=MechanismKind.C)).at(gamma1, gamma2)


def estimate(dataset: Dataset, mech: MechanismSpec, gamma1: float, gamma2: float = 0.0) -> CorrectedEstimates:
    if mech.kind == MechanismKind.A:
        return estimate_mdm_a(dataset, gamma1)
    if mech.kind == MechanismKind.B:
        return estimate_mdm_b(dataset, gamma1)
    return estimate_mdm_c(dataset, gamma1, gamma2)
