import logging
from enum import Enum
from typing import Dict, Iterable, List, Tuple

import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.stats import norm

from mnarcorr.errors import DomainError, NumericalError, RegularityError, UnreliableRegionError
from mnarcorr.mnar_estimators import CorrectedEstimates, SelectionCorrection, prepare_estimator
from mnarcorr.model_core import Dataset, GammaBox, MechanismSpec, RegularityReport

logger = logging.getLogger(__name__)

MAX_FAILURE_SHARE = 0.10

TRACE_COLUMNS = ["gamma1", "gamma2", "rho_hat", "lower", "upper", "status", "diagnostic"]


class GridStatus(str, Enum):
    OK = "ok"
    REGULARITY_SKIP = "regularity-skip"


class Interval(BaseModel):
    lower: float
    upper: float
    gamma_at: Tuple[float, float]
    alpha: float
    rho_hat: float

    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="after")
    def validate_interval(self) -> "Interval":
        if self.lower > self.upper:
            raise ValueError("interval lower bound must not exceed the upper bound")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        return self

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def exceeds_range(self) -> bool:
        """True when the raw endpoints leave [-1, 1]; they are reported unclipped."""

        return self.lower < -1.0 or self.upper > 1.0

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


class GridPoint(BaseModel):
    gamma1: float
    gamma2: float = 0.0
    status: GridStatus
    interval: Interval | None = None
    regularity: RegularityReport | None = None
    diagnostic: str = ""

    model_config = ConfigDict(extra="forbid", frozen=True)


class UncertaintyRegion(BaseModel):
    lower: float
    upper: float
    gamma_box: GammaBox
    alpha: float
    grid: Tuple[GridPoint, ...]
    argmin: Tuple[float, float]
    argmax: Tuple[float, float]

    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="after")
    def validate_hull(self) -> "UncertaintyRegion":
        members = [point.interval for point in self.grid if point.interval is not None]
        if not members:
            raise ValueError("an uncertainty region needs at least one interval")
        if self.lower != min(item.lower for item in members) or self.upper != max(item.upper for item in members):
            raise ValueError("region endpoints must be the hull of the member intervals")
        return self

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def failures(self) -> List[GridPoint]:
        return [point for point in self.grid if point.status != GridStatus.OK]

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def critical_value(alpha: float) -> float:
    """Two-sided normal quantile Φ⁻¹(1 − α/2)."""

    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    return float(norm.ppf(1.0 - alpha / 2.0))


def confidence_interval(est: CorrectedEstimates, alpha: float) -> Interval:
    half_width = critical_value(alpha) * est.se_hat
    return Interval(
        lower=est.rho_hat - half_width,
        upper=est.rho_hat + half_width,
        gamma_at=(est.gamma1, est.gamma2),
        alpha=alpha,
        rho_hat=est.rho_hat,
    )


def sweep_region(
    estimator: SelectionCorrection, box: GammaBox, alpha: float, grid_points: int
) -> UncertaintyRegion:
    """Union of per-γ intervals over a grid, against an already prepared estimator."""

    critical_value(alpha)
    points: List[GridPoint] = []
    for gamma1, gamma2 in box.grid(estimator.mech, grid_points):
        try:
            est = estimator.at(gamma1, gamma2)
        except (RegularityError, NumericalError) as exc:
            report = exc.context.get("report")
            points.append(
                GridPoint(
                    gamma1=gamma1,
                    gamma2=gamma2,
                    status=GridStatus.REGULARITY_SKIP,
                    regularity=report,
                    diagnostic=exc.detail,
                )
            )
            continue
        points.append(
            GridPoint(
                gamma1=gamma1,
                gamma2=gamma2,
                status=GridStatus.OK,
                interval=confidence_interval(est, alpha),
                regularity=est.regularity,
            )
        )

    failed = [point for point in points if point.status != GridStatus.OK]
    if failed:
        logger.warning("%d of %d gamma grid points skipped", len(failed), len(points))
    if not points or len(failed) > MAX_FAILURE_SHARE * len(points) or len(failed) == len(points):
        raise UnreliableRegionError(
            f"{len(failed)} of {len(points)} gamma grid points failed regularity checks",
            failure_map=[(point.gamma1, point.gamma2, point.diagnostic) for point in failed],
        )

    members = [point for point in points if point.interval is not None]
    lowest = min(members, key=lambda point: point.interval.lower)
    highest = max(members, key=lambda point: point.interval.upper)
    return UncertaintyRegion(
        lower=lowest.interval.lower,
        upper=highest.interval.upper,
        gamma_box=box,
        alpha=alpha,
        grid=tuple(points),
        argmin=(lowest.gamma1, lowest.gamma2),
        argmax=(highest.gamma1, highest.gamma2),
    )


def uncertainty_region(
    dataset: Dataset, mech: MechanismSpec, box: GammaBox, alpha: float, grid_points: int
) -> UncertaintyRegion:
    return sweep_region(prepare_estimator(dataset, mech), box, alpha, grid_points)


def trace_frame(region: UncertaintyRegion) -> pd.DataFrame:
    rows = [
        {
            "gamma1": point.gamma1,
            "gamma2": point.gamma2,
            "rho_hat": point.interval.rho_hat if point.interval else float("nan"),
            "lower": point.interval.lower if point.interval else float("nan"),
            "upper": point.interval.upper if point.interval else float("nan"),
            "status": point.status.value,
            "diagnostic": point.diagnostic,
        }
        for point in region.grid
    ]
    return pd.DataFrame(rows, columns=TRACE_COLUMNS)


def summarize_regularity(reports: Iterable[RegularityReport | None]) -> List[Dict[str, object]]:
    """Per assumption: whether it held at every report and the smallest magnitude seen."""

    summary: Dict[int, Dict[str, object]] = {}
    for report in reports:
        if report is None:
            continue
        for check in report.checks:
            entry = summary.setdefault(
                check.assumption,
                {
                    "assumption": check.assumption,
                    "name": check.name,
                    "passed": True,
                    "worst_magnitude": check.magnitude,
                    "threshold": check.threshold,
                },
            )
            entry["passed"] = bool(entry["passed"]) and check.passed
            entry["worst_magnitude"] = min(float(entry["worst_magnitude"]), check.magnitude)
    return [summary[key] for key in sorted(summary)]
