from worker.tasks.replicates import coverage_experiment, run_replicate

__all__ = [
    "coverage_experiment",
    "run_replicate",
]
