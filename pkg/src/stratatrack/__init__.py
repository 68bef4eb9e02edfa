"""Model identification for regularized least squares with l1 and nuclear-norm penalties."""
from .certificates import (
    Certificate,
    empirical_certificate,
    irrepresentable_check,
    solve_population_certificate,
)
from .problem import Dataset, PopulationModel, empirical, generate_ground_truth, sample_dataset
from .regularizers import L1, Nuclear, make_regularizer
from .solvers import SolverSpec, run, solve_fb
from .stratification import StratumDescriptor, leq, mirror_map, mirror_map_inverse, sandwich_check

__version__ = "0.1.0"

__all__ = [
    "Certificate", "Dataset", "L1", "Nuclear", "PopulationModel", "SolverSpec", "StratumDescriptor",
    "empirical", "empirical_certificate", "generate_ground_truth", "irrepresentable_check", "leq",
    "make_regularizer", "mirror_map", "mirror_map_inverse", "run", "sample_dataset",
    "sandwich_check", "solve_fb", "solve_population_certificate",
]
