from pathlib import Path
from typing import Any, Dict, List, Tuple

import pandas as pd
from pydantic import BaseModel, ConfigDict

from mnarcorr.inference import UncertaintyRegion, summarize_regularity, trace_frame
from mnarcorr.model_core import Dataset, GammaBox, MechanismKind, detect_mask_pattern
from mnarcorr.simulation import CoverageReport

RECORD_COLUMNS = ["replicate", "method", "lower", "upper", "width", "covered"]


class TraceRow(BaseModel):
    gamma1: float
    gamma2: float
    rho_hat: float | None
    lower: float | None
    upper: float | None
    status: str
    diagnostic: str

    model_config = ConfigDict(extra="forbid", frozen=True)


class AnalysisReport(BaseModel):
    input: str
    columns: Tuple[str, ...]
    mechanism: MechanismKind
    compatible_mechanisms: Tuple[MechanismKind, ...]
    n_total: int
    n_complete: int
    n2: int | None
    alpha: float
    gamma_box: GammaBox
    lower: float
    upper: float
    argmin: Tuple[float, float]
    argmax: Tuple[float, float]
    skipped_points: int
    regularity: List[Dict[str, Any]]
    trace: List[TraceRow]

    model_config = ConfigDict(extra="forbid", frozen=True)


def _optional(value: Any) -> float | None:
    return None if pd.isna(value) else float(value)


def build_analysis_report(
    source: str, dataset: Dataset, mechanism: MechanismKind, region: UncertaintyRegion, n_complete: int, n2: int | None
) -> AnalysisReport:
    rows = [
        TraceRow(
            gamma1=row.gamma1,
            gamma2=row.gamma2,
            rho_hat=_optional(row.rho_hat),
            lower=_optional(row.lower),
            upper=_optional(row.upper),
            status=row.status,
            diagnostic=row.diagnostic,
        )
        for row in trace_frame(region).itertuples(index=False)
    ]
    return AnalysisReport(
        input=source,
        columns=dataset.columns,
        mechanism=mechanism,
        compatible_mechanisms=tuple(detect_mask_pattern(dataset)),
        n_total=dataset.n_rows,
        n_complete=n_complete,
        n2=n2,
        alpha=region.alpha,
        gamma_box=region.gamma_box,
        lower=region.lower,
        upper=region.upper,
        argmin=region.argmin,
        argmax=region.argmax,
        skipped_points=len(region.failures),
        regularity=summarize_regularity(point.regularity for point in region.grid),
        trace=rows,
    )


def write_json(model: BaseModel, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def write_trace_csv(region: UncertaintyRegion, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trace_frame(region).to_csv(path, index=False)
    return path


def records_frame(report: CoverageReport) -> pd.DataFrame:
    return pd.DataFrame([record.model_dump() for record in report.records], columns=RECORD_COLUMNS)


def write_coverage(report: CoverageReport, prefix: Path | str) -> Tuple[Path, Path]:
    """Write ``<prefix>.json`` (summary without per-replicate rows) and ``<prefix>.csv``."""

    prefix = Path(prefix)
    summary = report.model_copy(update={"records": ()})
    json_path = write_json(summary, prefix.with_name(prefix.name + ".json"))
    csv_path = prefix.with_name(prefix.name + ".csv")
    records_frame(report).to_csv(csv_path, index=False)
    return json_path, csv_path


def coverage_lines(report: CoverageReport) -> List[str]:
    lines = []
    for summary in report.methods:
        q1, median, q3 = summary.width_quartiles
        lines.append(
            f"{summary.method}: coverage={summary.empirical_coverage:.3f} "
            f"({summary.covered_count}/{summary.replicates}) "
            f"width median={median:.4f} iqr=[{q1:.4f}, {q3:.4f}]"
        )
    return lines
