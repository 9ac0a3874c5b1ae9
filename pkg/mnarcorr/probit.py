import logging
import math
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import linalg, special

from mnarcorr.errors import (
    DegenerateResponseError,
    DesignError,
    DomainError,
    NumericalError,
    SeparationError,
)
from mnarcorr.regression import RCOND_THRESHOLD, reciprocal_condition

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-8
MAX_ITERATIONS = 100
MAX_STEP_HALVINGS = 60
SEPARATION_LIMIT = 30.0
LOGLIK_SLACK = 1e-12
DIRECT_FORMULA_LIMIT = 5.0

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_SQRT_2 = math.sqrt(2.0)


class ProbitFit(BaseModel):
    delta_hat: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    gradient_norm: float
    linear_index_u: np.ndarray
    tolerance: float = GRADIENT_TOLERANCE

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="after")
    def validate_convergence(self) -> "ProbitFit":
        if self.converged and not self.gradient_norm < self.tolerance:
            raise ValueError("a converged fit must have a gradient below tolerance")
        self.delta_hat.setflags(write=False)
        self.linear_index_u.setflags(write=False)
        return self


def _mills_array(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    result = np.empty_like(u)
    direct = u <= DIRECT_FORMULA_LIMIT
    head = u[direct]
    result[direct] = np.exp(-0.5 * head * head) / math.sqrt(2.0 * math.pi) / special.ndtr(-head)
    # φ(u)/Φ(−u) = √(2/π) / erfcx(u/√2); the exp(−u²/2) factors cancel analytically.
    result[~direct] = _SQRT_2_OVER_PI / special.erfcx(u[~direct] / _SQRT_2)
    return result


def inverse_mills(u: float) -> float:
    """λ(u) = φ(u)/Φ(−u), evaluated without cancellation in the upper tail."""

    if not math.isfinite(u):
        raise DomainError(f"inverse_mills requires a finite argument, got {u}")
    return float(_mills_array(np.array([u], dtype=float))[0])


def inverse_mills_array(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise DomainError("inverse_mills requires finite arguments")
    return _mills_array(u)


def mills_vector(fit: ProbitFit) -> np.ndarray:
    if not fit.converged:
        raise NumericalError(
            f"Probit fit did not converge after {fit.iterations} iterations "
            f"(gradient {fit.gradient_norm:.3e})",
            iterations=fit.iterations,
        )
    return inverse_mills_array(fit.linear_index_u)


def _standardize(design: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    spread = design.std(axis=0)
    constant = spread == 0.0
    if constant.any():
        center = np.where(constant, 0.0, design.mean(axis=0))
    else:
        center = np.zeros(design.shape[1])
    scale = np.where(constant, 1.0, spread)
    return (design - center) / scale, center, scale, constant


def _unstandardize(
    delta_scaled: np.ndarray, design: np.ndarray, center: np.ndarray, scale: np.ndarray, constant: np.ndarray
) -> np.ndarray:
    delta = delta_scaled / scale
    if constant.any():
        index = int(np.flatnonzero(constant)[0])
        delta[index] -= float(np.sum(delta_scaled * center / scale)) / design[0, index]
    return delta


def _loglik(design: np.ndarray, sign: np.ndarray, delta: np.ndarray) -> float:
    return float(np.sum(special.log_ndtr(sign * (design @ delta))))


def _score_and_hessian(
    design: np.ndarray, sign: np.ndarray, delta: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    index = sign * (design @ delta)
    # φ(t)/Φ(t) written as λ(−t)
    ratio = _mills_array(-index)
    gradient = design.T @ (sign * ratio)
    weights = ratio * (ratio + index)
    hessian = -(design.T * weights) @ design
    return gradient, hessian


def fit_probit(
    design: np.ndarray,
    z: np.ndarray,
    rows: np.ndarray | None = None,
    tolerance: float = GRADIENT_TOLERANCE,
    max_iterations: int = MAX_ITERATIONS,
) -> ProbitFit:
    """Maximum-likelihood probit fit by Newton-Raphson with step halving.

    Iterates on standardized columns; convergence is declared when the
    max-norm of the mean log-likelihood gradient (the score divided by the
    number of rows) falls below ``tolerance``, so the criterion does not
    tighten with sample size. The raw score bound is ``n * tolerance``.
    ``linear_index_u`` holds û = −Xδ̂ over ``rows`` (the rows with z true when
    not given).
    """

    design = np.asarray(design, dtype=float)
    z = np.asarray(z, dtype=bool)
    if design.ndim != 2 or z.shape != (design.shape[0],):
        raise DesignError("Probit design must be a matrix with one row per response")
    if not np.all(np.isfinite(design)):
        raise DesignError("Probit design must be finite")
    if z.all() or not z.any():
        raise DegenerateResponseError(
            "Observation indicator is constant; the selection model cannot be fitted",
            observed=int(z.sum()),
            rows=int(z.size),
        )
    rcond = reciprocal_condition(design)
    if rcond < RCOND_THRESHOLD:
        raise DesignError(
            f"Probit design is rank deficient (reciprocal condition {rcond:.3e})", rcond=rcond
        )

    n = design.shape[0]
    scaled, center, scale, constant = _standardize(design)
    sign = np.where(z, 1.0, -1.0)
    delta = np.zeros(design.shape[1])
    loglik = _loglik(scaled, sign, delta)
    gradient, hessian = _score_and_hessian(scaled, sign, delta)
    gradient_norm = float(np.max(np.abs(gradient))) / n

    iterations = 0
    while gradient_norm >= tolerance and iterations < max_iterations:
        iterations += 1
        try:
            step = linalg.solve(-hessian, gradient, assume_a="pos")
        except linalg.LinAlgError as exc:
            raise NumericalError("Probit Hessian is not positive definite") from exc

        fraction = 1.0
        accepted = False
        # near the optimum a Newton step may not raise the loglik in double precision
        floor = loglik - LOGLIK_SLACK * max(1.0, abs(loglik))
        for _ in range(MAX_STEP_HALVINGS):
            candidate = delta + fraction * step
            candidate_loglik = _loglik(scaled, sign, candidate)
            if candidate_loglik >= floor:
                accepted = True
                break
            fraction *= 0.5
        if not accepted:
            logger.debug("probit line search stalled at iteration %d", iterations)
            break

        delta, loglik = candidate, candidate_loglik
        if np.max(np.abs(delta)) > SEPARATION_LIMIT:
            raise SeparationError(
                "Probit coefficients diverge; the observation indicator is "
                "(quasi-)completely separated by the covariates",
                coefficients=delta.tolist(),
            )
        gradient, hessian = _score_and_hessian(scaled, sign, delta)
        gradient_norm = float(np.max(np.abs(gradient))) / n

    converged = gradient_norm < tolerance
    logger.debug(
        "probit fit: %d iterations, loglik %.6f, gradient %.3e, converged=%s",
        iterations,
        loglik,
        gradient_norm,
        converged,
    )

    delta_hat = _unstandardize(delta, design, center, scale, constant)
    selected = z if rows is None else np.asarray(rows, dtype=bool)
    return ProbitFit(
        delta_hat=delta_hat,
        loglik=_loglik(design, sign, delta_hat),
        iterations=iterations,
        converged=converged,
        gradient_norm=gradient_norm,
        linear_index_u=-(design[selected] @ delta_hat),
        tolerance=tolerance,
    )
