"""Constrained Bayesian optimization with neural kernels, batched
multi-acquisition search, and selective knowledge transfer between
problems of different input/output spaces."""

__version__ = "0.1.0"

from .acquisition import (
    AcquisitionContext,
    expected_improvement,
    probability_of_feasibility,
    probability_of_improvement,
    upper_confidence_bound,
)
from .benchmarks import (
    FomSpec,
    ProblemSpec,
    build_fom_spec,
    evaluate,
    load_problem,
    make_problem,
    save_problem,
)
from .engine import BanditState, RunConfig, RunResult, compute_fom, run_optimization
from .gp import ArdKernel, GaussianPosterior, GpModel, assemble_gram
from .neural_kernel import NeuralKernel, min_gram_eigenvalue
from .nsga2 import (
    EvolutionConfig,
    ParetoArchive,
    crowding_distance,
    evolve,
    nondominated_sort,
)
from .transfer import ShallowNet, TransferGp, load_source, save_source

__all__ = [
    "AcquisitionContext", "ArdKernel", "BanditState", "EvolutionConfig",
    "FomSpec", "GaussianPosterior", "GpModel", "NeuralKernel",
    "ParetoArchive", "ProblemSpec", "RunConfig", "RunResult", "ShallowNet",
    "TransferGp", "assemble_gram", "build_fom_spec", "compute_fom",
    "crowding_distance", "evaluate", "evolve", "expected_improvement",
    "load_problem", "load_source", "make_problem", "min_gram_eigenvalue",
    "nondominated_sort", "probability_of_feasibility",
    "probability_of_improvement", "run_optimization", "save_problem", "save_source",
    "upper_confidence_bound",
]
