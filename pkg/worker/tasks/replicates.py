from pathlib import Path
from typing import Any, Dict, List, Sequence

from celery import group
from celery.utils.log import get_task_logger

from mnarcorr.config import default_grid_points, get_report_root
from mnarcorr.model_core import GammaBox
from mnarcorr.reporting import write_coverage
from mnarcorr.simulation import (
    ReplicateOutcome,
    ReplicateRunner,
    SimulationDesign,
    run_coverage_experiment,
    run_local,
)
from mnarcorr.simulation import run_replicate as simulate_replicate
from worker.app import celery_app

logger = get_task_logger(__name__)


def ensure_report_dir(name: str) -> Path:
    """Create and return the directory for one experiment's artifacts."""

    target_dir = get_report_root() / name
    target_dir.mkdir(parents=True, exist_ok=True)
    return target_dir


def experiment_name(design: SimulationDesign) -> str:
    return f"{design.mechanism.value}-n{design.n}-g{design.gamma0:g}-s{design.seed}"


@celery_app.task(name="simulation.run_replicate")
def run_replicate(
    design: Dict[str, Any], replicate: int, alpha: float, ur_box: Dict[str, Any], grid_points: int
) -> Dict[str, Any]:
    """Run one coverage replicate; arguments and result travel as JSON-ready dicts."""

    outcome = simulate_replicate(
        SimulationDesign.model_validate(design),
        replicate,
        alpha,
        GammaBox.model_validate(ur_box),
        grid_points,
    )
    return outcome.model_dump(mode="json")


def celery_runner(timeout: float | None = None) -> ReplicateRunner:
    """Replicate runner that fans the replicates out over the worker pool."""

    def runner(
        design: SimulationDesign, indices: Sequence[int], alpha: float, ur_box: GammaBox, grid_points: int
    ) -> List[ReplicateOutcome]:
        payload = design.model_dump(mode="json")
        box = ur_box.model_dump(mode="json")
        job = group(run_replicate.s(payload, index, alpha, box, grid_points) for index in indices)
        results = job.apply_async().get(timeout=timeout)
        return [ReplicateOutcome.model_validate(result) for result in results]

    return runner


@celery_app.task(name="simulation.coverage_experiment")
def coverage_experiment(
    design: Dict[str, Any],
    replicates: int,
    alpha: float,
    ur_box: Dict[str, Any],
    grid_points: int | None = None,
    name: str | None = None,
) -> Dict[str, Any]:
    """Run a whole coverage experiment on this worker and write its artifacts.

    Replicates run on the worker's own thread pool. The JSON summary and the
    per-replicate CSV land in REPORT_ROOT/<name>/coverage.{json,csv}.
    """

    parsed = SimulationDesign.model_validate(design)
    points = grid_points or default_grid_points(parsed.mech.two_sided)
    report = run_coverage_experiment(
        parsed, replicates, alpha, GammaBox.model_validate(ur_box), points, runner=run_local
    )
    report_dir = ensure_report_dir(name or experiment_name(parsed))
    json_path, csv_path = write_coverage(report, report_dir / "coverage")
    logger.info("coverage experiment written to %s", report_dir)
    return {
        "json_path": str(json_path),
        "csv_path": str(csv_path),
        "coverage": {summary.method: summary.empirical_coverage for summary in report.methods},
        "failures": len(report.failures),
    }
