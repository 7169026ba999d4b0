"""Doubly robust kernel conditional independence testing with generative networks."""

__version__ = "0.1.0"

from .bootstrap import BootstrapDraws, TestOutcome, decide, p_value, wild_bootstrap
from .dgp import DgpSpec, TripleSample, corrupt_oracle, generate
from .errors import ConsistencyError, DrcitError, InputError, TrainingError, UsageError
from .generator import CondGenerator, GmmnGenerator, TrainConfig, load_generator, save_generator, train_gmmn
from .harness import ExperimentPlan, run_experiment, size_adjusted_power, sweep
from .kernels import KernelSpec, gram, kernel_eval, median_heuristic
from .procedure import TestConfig, ci_test
from .statistic import FiniteJointLaw, make_fold_plan, population_mmdci_discrete, statistic_tj

__all__ = [
    "BootstrapDraws",
    "CondGenerator",
    "ConsistencyError",
    "DgpSpec",
    "DrcitError",
    "ExperimentPlan",
    "FiniteJointLaw",
    "GmmnGenerator",
    "InputError",
    "KernelSpec",
    "TestConfig",
    "TestOutcome",
    "TrainConfig",
    "TrainingError",
    "TripleSample",
    "UsageError",
    "ci_test",
    "corrupt_oracle",
    "decide",
    "generate",
    "gram",
    "kernel_eval",
    "load_generator",
    "make_fold_plan",
    "median_heuristic",
    "p_value",
    "population_mmdci_discrete",
    "run_experiment",
    "save_generator",
    "size_adjusted_power",
    "statistic_tj",
    "sweep",
    "train_gmmn",
    "wild_bootstrap",
]
