from mnarcorr.inference import confidence_interval, uncertainty_region
from mnarcorr.mnar_estimators import estimate, estimate_mdm_a, estimate_mdm_b, estimate_mdm_c, prepare_estimator
from mnarcorr.model_core import Dataset, GammaBox, MechanismKind, MechanismSpec, Roles
from mnarcorr.simulation import SimulationDesign, generate_dataset, run_coverage_experiment, true_rho

__all__ = [
    "Dataset",
    "GammaBox",
    "MechanismKind",
    "MechanismSpec",
    "Roles",
    "SimulationDesign",
    "confidence_interval",
    "estimate",
    "estimate_mdm_a",
    "estimate_mdm_b",
    "estimate_mdm_c",
    "generate_dataset",
    "prepare_estimator",
    "run_coverage_experiment",
    "true_rho",
    "uncertainty_region",
]
