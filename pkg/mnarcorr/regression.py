import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import linalg

from mnarcorr.errors import DesignError, InsufficientDataError

RCOND_THRESHOLD = 1e-10


class OlsFit(BaseModel):
    coef: np.ndarray
    residual_variance: float
    residuals: np.ndarray
    n: int
    k: int
    xtx_inv: np.ndarray
    rcond: float

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="after")
    def validate_shapes(self) -> "OlsFit":
        if self.coef.shape != (self.k,):
            raise ValueError("coef length must equal the number of design columns")
        if self.n <= self.k:
            raise ValueError("n must exceed k")
        if self.residual_variance < 0:
            raise ValueError("residual_variance must be non-negative")
        for array in (self.coef, self.residuals, self.xtx_inv):
            array.setflags(write=False)
        return self

    def residual_variance_with_df(self, df: int) -> float:
        """Residual sum of squares divided by ``df`` instead of ``n - k``."""

        if df <= 0:
            raise InsufficientDataError(
                f"Residual degrees of freedom must be positive, got {df}", df=df
            )
        return float(self.residuals @ self.residuals) / df


def reciprocal_condition(design: np.ndarray) -> float:
    """Reciprocal 2-norm condition number of a design matrix (0 when singular)."""

    design = np.asarray(design, dtype=float)
    if design.ndim != 2 or design.shape[0] == 0 or design.shape[1] == 0:
        return 0.0
    singular_values = linalg.svdvals(design)
    largest = singular_values[0]
    if not np.isfinite(largest) or largest == 0.0:
        return 0.0
    return float(singular_values[-1] / largest) if design.shape[0] >= design.shape[1] else 0.0


def projected_quadratic(design: np.ndarray, vector: np.ndarray) -> float:
    """Return vᵀX(XᵀX)⁻¹Xᵀv, the squared norm of v projected on the column space of X.

    Uses a least-squares solve so that rank-deficient designs still yield a value.
    """

    design = np.asarray(design, dtype=float)
    vector = np.asarray(vector, dtype=float)
    coef, *_ = linalg.lstsq(design, vector)
    fitted = design @ coef
    return float(fitted @ fitted)


def ols_fit(design: np.ndarray, y: np.ndarray) -> OlsFit:
    """Fit ordinary least squares through an economic QR factorization.

    The coefficients come from a triangular solve against R, and (XᵀX)⁻¹ is
    assembled as R⁻¹R⁻ᵀ for the correction formulas that need it.
    """

    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if design.ndim != 2:
        raise DesignError("Design matrix must be two-dimensional")
    n, k = design.shape
    if y.shape != (n,):
        raise DesignError(f"Response length {y.shape} does not match {n} design rows")
    if n <= k:
        raise InsufficientDataError(
            f"Least squares needs more rows than columns (n={n}, k={k})", n=n, k=k
        )
    if not (np.all(np.isfinite(design)) and np.all(np.isfinite(y))):
        raise DesignError("Design and response must be finite")

    q, r = linalg.qr(design, mode="economic")
    rcond = reciprocal_condition(r)
    if rcond < RCOND_THRESHOLD:
        raise DesignError(
            f"Design matrix is rank deficient (reciprocal condition {rcond:.3e})",
            rcond=rcond,
        )

    coef = linalg.solve_triangular(r, q.T @ y, lower=False)
    r_inv = linalg.solve_triangular(r, np.eye(k), lower=False)
    residuals = y - design @ coef
    return OlsFit(
        coef=coef,
        residual_variance=float(residuals @ residuals) / (n - k),
        residuals=residuals,
        n=n,
        k=k,
        xtx_inv=r_inv @ r_inv.T,
        rcond=rcond,
    )
