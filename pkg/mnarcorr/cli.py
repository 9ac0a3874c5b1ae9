import argparse
import logging
import sys
from pathlib import Path
from typing import List, Literal, Sequence, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from mnarcorr.config import DEFAULT_ALPHA, default_grid_points, get_thread_count
from mnarcorr.errors import ConfigError, MnarError
from mnarcorr.ingest import read_table
from mnarcorr.inference import sweep_region, trace_frame
from mnarcorr.mnar_estimators import prepare_estimator
from mnarcorr.model_core import GammaBox, MechanismKind, MechanismSpec
from mnarcorr.reporting import build_analysis_report, coverage_lines, write_coverage, write_json, write_trace_csv
from mnarcorr.simulation import SimulationDesign, run_coverage_experiment

logger = logging.getLogger(__name__)


class AnalysisConfig(BaseModel):
    input: Path
    target: str
    partner: str
    adjusters: Tuple[str, ...] = ()
    mechanism: MechanismKind
    gamma_box: GammaBox
    alpha: float = DEFAULT_ALPHA
    grid_points: int | None = None
    output_format: Literal["json", "csv"] = "json"
    out: Path | None = None

    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="after")
    def validate_config(self) -> "AnalysisConfig":
        roles = [self.target, self.partner, *self.adjusters]
        if len(set(roles)) != len(roles):
            raise ValueError("target, partner and adjusters must name distinct columns")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.grid_points is not None and self.grid_points < 2:
            raise ValueError("grid must be at least 2")
        if self.mechanism != MechanismKind.C and (self.gamma_box.gamma2_min or self.gamma_box.gamma2_max):
            raise ValueError("gamma2 bounds apply only to mechanism C")
        return self

    @property
    def points(self) -> int:
        return self.grid_points or default_grid_points(self.mechanism == MechanismKind.C)


class SimulationConfig(BaseModel):
    design: SimulationDesign
    replicates: int = 1000
    alpha: float = DEFAULT_ALPHA
    ur_box: GammaBox
    grid_points: int | None = None
    out: Path = Path("coverage")
    runner: Literal["local", "celery"] = "local"

    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="after")
    def validate_config(self) -> "SimulationConfig":
        if self.replicates < 1:
            raise ValueError("reps must be at least 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.grid_points is not None and self.grid_points < 2:
            raise ValueError("grid must be at least 2")
        return self

    @property
    def points(self) -> int:
        return self.grid_points or default_grid_points(self.design.mechanism == MechanismKind.C)


class ArgumentParser(argparse.ArgumentParser):
    """Reports flag errors with the configuration exit status."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(ConfigError.exit_code, f"{self.prog}: error: {message}\n")


def parse_range(text: str) -> Tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got '{text}'")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected two numbers, got '{text}'") from exc


def parse_columns(text: str) -> Tuple[str, ...]:
    return tuple(name.strip() for name in text.split(",") if name.strip())


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="mnarcorr", description="Partial correlation under nonignorable missingness")
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    analyze = subparsers.add_parser("analyze", help="uncertainty region for a CSV dataset")
    analyze.add_argument("--input", required=True, type=Path)
    analyze.add_argument("--target", required=True)
    analyze.add_argument("--partner", required=True)
    analyze.add_argument("--adjust", type=parse_columns, default=())
    analyze.add_argument("--mechanism", choices=[kind.value for kind in MechanismKind], required=True)
    analyze.add_argument("--gamma-min", type=float, default=0.0)
    analyze.add_argument("--gamma-max", type=float, default=0.0)
    analyze.add_argument("--gamma2-min", type=float, default=0.0)
    analyze.add_argument("--gamma2-max", type=float, default=0.0)
    analyze.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    analyze.add_argument("--grid", type=int, default=None)
    analyze.add_argument("--format", choices=["json", "csv"], default="json")
    analyze.add_argument("--out", type=Path, default=None)

    simulate = subparsers.add_parser("simulate", help="Monte Carlo coverage experiment")
    simulate.add_argument("--n", type=int, default=250)
    simulate.add_argument("--gamma0", type=float, default=0.5)
    simulate.add_argument("--gamma20", type=float, default=0.0)
    simulate.add_argument("--mechanism", choices=[kind.value for kind in MechanismKind], default="A")
    simulate.add_argument("--reps", type=int, default=1000)
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--ur", type=parse_range, default=(0.0, 0.5))
    simulate.add_argument("--ur2", type=parse_range, default=(0.0, 0.0))
    simulate.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    simulate.add_argument("--grid", type=int, default=None)
    simulate.add_argument("--out", type=Path, default=Path("coverage"))
    simulate.add_argument("--runner", choices=["local", "celery"], default="local")
    return parser


def cmd_analyze(config: AnalysisConfig) -> int:
    dataset = read_table(config.input, config.target, config.partner, config.adjusters)
    mech = MechanismSpec(kind=config.mechanism)
    estimator = prepare_estimator(dataset, mech)
    region = sweep_region(estimator, config.gamma_box, config.alpha, config.points)

    if config.output_format == "csv":
        if config.out is None:
            sys.stdout.write(trace_frame(region).to_csv(index=False))
        else:
            write_trace_csv(region, config.out)
    else:
        report = build_analysis_report(
            str(config.input), dataset, config.mechanism, region, estimator.n_complete, estimator.n2
        )
        if config.out is None:
            sys.stdout.write(report.model_dump_json(indent=2) + "\n")
        else:
            write_json(report, config.out)

    if config.out is not None:
        print(
            f"mechanism {config.mechanism.value}: UR=[{region.lower:.6f}, {region.upper:.6f}] "
            f"n={estimator.n_complete} skipped={len(region.failures)}"
        )
    return 0


def cmd_simulate(config: SimulationConfig) -> int:
    runner = None
    if config.runner == "celery":
        # replicates go to the worker pool behind REDIS_URL
        from worker.tasks.replicates import celery_runner

        runner = celery_runner()
    report = run_coverage_experiment(
        config.design, config.replicates, config.alpha, config.ur_box, config.points, runner=runner
    )
    json_path, csv_path = write_coverage(report, config.out)
    logger.info("wrote %s and %s", json_path, csv_path)
    for line in coverage_lines(report):
        print(line)
    return 0


def _analysis_config(args: argparse.Namespace) -> AnalysisConfig:
    return AnalysisConfig(
        input=args.input,
        target=args.target,
        partner=args.partner,
        adjusters=args.adjust,
        mechanism=MechanismKind(args.mechanism),
        gamma_box=GammaBox(
            gamma1_min=args.gamma_min,
            gamma1_max=args.gamma_max,
            gamma2_min=args.gamma2_min,
            gamma2_max=args.gamma2_max,
        ),
        alpha=args.alpha,
        grid_points=args.grid,
        output_format=args.format,
        out=args.out,
    )


def _simulation_config(args: argparse.Namespace) -> SimulationConfig:
    return SimulationConfig(
        design=SimulationDesign(
            n=args.n,
            gamma0=args.gamma0,
            gamma20=args.gamma20,
            mechanism=MechanismKind(args.mechanism),
            seed=args.seed,
        ),
        replicates=args.reps,
        alpha=args.alpha,
        ur_box=GammaBox(
            gamma1_min=args.ur[0],
            gamma1_max=args.ur[1],
            gamma2_min=args.ur2[0],
            gamma2_max=args.ur2[1],
        ),
        grid_points=args.grid,
        out=args.out,
        runner=args.runner,
    )


def main(argv: Sequence[str] | None = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        try:
            get_thread_count()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if args.command == "analyze":
            return cmd_analyze(_analysis_config(args))
        return cmd_simulate(_simulation_config(args))
    except ValidationError as exc:
        messages: List[str] = [error["msg"] for error in exc.errors()]
        print(f"error: invalid configuration: {'; '.join(messages)}", file=sys.stderr)
        return ConfigError.exit_code
    except MnarError as exc:
        print(f"error: {exc.detail}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
