import contextlib
import io
import json
import os
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import pandas as pd

from mnarcorr.cli import main
from mnarcorr.errors import SeparationError
from mnarcorr.inference import uncertainty_region
from mnarcorr.ingest import read_table, write_table
from mnarcorr.model_core import GammaBox, MechanismKind, MechanismSpec
from mnarcorr.simulation import SimulationDesign, generate_dataset, run_replicate

ADJUSTERS = ["age", "hypertension"]


def run_cli(argv):
    stdout, stderr = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr):
        status = main(argv)
    return status, stdout.getvalue(), stderr.getvalue()


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self.temp_dir = tempfile.TemporaryDirectory()
        self.addCleanup(self.temp_dir.cleanup)
        self.root = Path(self.temp_dir.name)
        patcher = mock.patch.dict(os.environ, {"MNARCORR_THREADS": "2"})
        patcher.start()
        self.addCleanup(patcher.stop)
        dotenv_patcher = mock.patch("mnarcorr.cli.load_dotenv")
        dotenv_patcher.start()
        self.addCleanup(dotenv_patcher.stop)
        self.input = write_table(generate_dataset(SimulationDesign(n=250, gamma0=0.5, seed=11)), self.root / "data.csv")

    def analyze_args(self, *extra):
        return [
            "analyze",
            "--input",
            str(self.input),
            "--target",
            "memory_decline",
            "--partner",
            "blood_marker",
            "--adjust",
            ",".join(ADJUSTERS),
            "--mechanism",
            "A",
            *extra,
        ]


class TestAnalyzeCommand(CliTestCase):
    def test_json_report_matches_library(self):
        out = self.root / "report.json"
        status, stdout, _ = run_cli(self.analyze_args("--gamma-min", "0", "--gamma-max", "0.5", "--out", str(out)))

        self.assertEqual(status, 0)
        self.assertIn("mechanism A: UR=", stdout)
        report = json.loads(out.read_text())
        dataset = read_table(self.input, "memory_decline", "blood_marker", ADJUSTERS)
        region = uncertainty_region(
            dataset, MechanismSpec(kind=MechanismKind.A), GammaBox(gamma1_min=0.0, gamma1_max=0.5), 0.05, 101
        )
        self.assertEqual(report["lower"], region.lower)
        self.assertEqual(report["upper"], region.upper)
        self.assertEqual(report["compatible_mechanisms"], ["A"])
        self.assertEqual(report["n_total"], 250)
        self.assertIsNone(report["n2"])
        self.assertEqual(len(report["trace"]), 101)
        self.assertEqual([entry["assumption"] for entry in report["regularity"]], [1, 2, 3, 4, 5])

    def test_csv_trace_over_full_box(self):
        out = self.root / "trace.csv"
        status, _, _ = run_cli(self.analyze_args("--gamma-max", "1", "--format", "csv", "--out", str(out)))

        self.assertEqual(status, 0)
        trace = pd.read_csv(out)
        self.assertEqual(len(trace), 101)
        self.assertTrue(trace["gamma1"].is_monotonic_increasing)
        self.assertTrue(trace["gamma1"].is_unique)
        self.assertEqual(list(trace.columns), ["gamma1", "gamma2", "rho_hat", "lower", "upper", "status", "diagnostic"])

    def test_outputs_are_byte_identical_across_runs(self):
        outputs = []
        for name in ("first.json", "second.json"):
            out = self.root / name
            run_cli(self.analyze_args("--gamma-max", "0.3", "--grid", "7", "--out", str(out)))
            outputs.append(out.read_bytes())

        self.assertEqual(outputs[0], outputs[1])

    def test_report_to_stdout(self):
        status, stdout, _ = run_cli(self.analyze_args("--gamma-max", "0.2", "--grid", "3"))

        self.assertEqual(status, 0)
        self.assertEqual(len(json.loads(stdout)["trace"]), 3)

    def test_mechanism_mismatch_exit_code(self):
        args = self.analyze_args("--gamma-max", "0.2")
        args[args.index("A")] = "B"
        status, _, stderr = run_cli(args)

        self.assertEqual(status, 4)
        self.assertIn("compatible: A", stderr)

    def test_missing_adjuster_exit_code(self):
        bad = self.root / "gap.csv"
        bad.write_text("memory_decline,blood_marker,age,hypertension\n1,2,,0\n" + "1,2,60,1\n" * 6)
        args = self.analyze_args()
        args[args.index(str(self.input))] = str(bad)
        status, _, stderr = run_cli(args)

        self.assertEqual(status, 3)
        self.assertIn("1 row(s)", stderr)

    def test_unreadable_input_exit_code(self):
        args = self.analyze_args()
        args[args.index(str(self.input))] = str(self.root / "absent.csv")
        status, _, _ = run_cli(args)

        self.assertEqual(status, 2)

    def test_invalid_gamma_box_exit_code(self):
        status, _, stderr = run_cli(self.analyze_args("--gamma-max", "1.5"))

        self.assertEqual(status, 3)
        self.assertIn("invalid configuration", stderr)


class TestSimulateCommand(CliTestCase):
    def simulate_args(self, prefix: Path, *extra):
        return ["simulate", "--n", "250", "--reps", "1", "--seed", "7", "--grid", "5", "--out", str(prefix), *extra]

    def test_writes_summary_and_records(self):
        prefix = self.root / "run"
        status, stdout, _ = run_cli(self.simulate_args(prefix, "--reps", "2"))

        self.assertEqual(status, 0)
        self.assertEqual([line.split(":")[0] for line in stdout.splitlines()], ["cc", "oracle", "ur"])
        summary = json.loads((self.root / "run.json").read_text())
        self.assertEqual(summary["replicates_requested"], 2)
        self.assertEqual(summary["records"], [])
        records = pd.read_csv(self.root / "run.csv")
        self.assertEqual(len(records), 6)

    def test_identical_flags_give_identical_files(self):
        first, second = self.root / "a", self.root / "b"
        run_cli(self.simulate_args(first))
        run_cli(self.simulate_args(second))

        for suffix in (".json", ".csv"):
            with self.subTest(suffix=suffix):
                self.assertEqual(
                    (self.root / f"a{suffix}").read_bytes(),
                    (self.root / f"b{suffix}").read_bytes(),
                )

    def test_gamma_outside_unit_interval(self):
        status, _, _ = run_cli(self.simulate_args(self.root / "x", "--gamma0", "1.2"))

        self.assertEqual(status, 3)

    def test_malformed_range_flag(self):
        with self.assertRaises(SystemExit) as ctx:
            run_cli(self.simulate_args(self.root / "x", "--ur", "0"))

        self.assertEqual(ctx.exception.code, 3)

    def test_invalid_thread_count(self):
        with mock.patch.dict(os.environ, {"MNARCORR_THREADS": "many"}):
            status, _, stderr = run_cli(self.simulate_args(self.root / "x"))

        self.assertEqual(status, 3)
        self.assertIn("MNARCORR_THREADS", stderr)

    def test_experiment_failure_exit_code(self):
        with mock.patch("mnarcorr.simulation.prepare_estimator", side_effect=SeparationError("diverged")):
            status, _, stderr = run_cli(self.simulate_args(self.root / "x"))

        self.assertEqual(status, 5)
        self.assertIn("replicates failed", stderr)

    def test_celery_runner_dispatches_replicates(self):
        calls = []

        def scripted_runner(design, indices, alpha, ur_box, grid_points):
            calls.append(list(indices))
            return [run_replicate(design, index, alpha, ur_box, grid_points) for index in indices]

        local, remote = self.root / "local", self.root / "remote"
        run_cli(self.simulate_args(local, "--reps", "2"))
        with mock.patch("worker.tasks.replicates.celery_runner", return_value=scripted_runner) as factory:
            status, _, _ = run_cli(self.simulate_args(remote, "--reps", "2", "--runner", "celery"))

        self.assertEqual(status, 0)
        factory.assert_called_once_with()
        self.assertEqual(calls, [[0, 1]])
        self.assertEqual((self.root / "local.csv").read_bytes(), (self.root / "remote.csv").read_bytes())


if __name__ == "__main__":
    unittest.main()
