"""Parametric pairwise-comparison models on sparse comparison graphs."""

from .dataset import ComparisonDataset, DataError
from .estimator import FitOptions, FitResult, fit, fit_mm_bt, fit_newton, linf_error, log_likelihood
from .existence import brute_force_condition1, check_condition1, defeat_digraph
from .models import (
    BUILTIN_MODELS,
    LinkModel,
    ModelError,
    log_density,
    make_model,
    sample_outcome,
    score,
    score_slope,
    validate_model,
)
from .selection import CandidateModel, SelectionReport, compare_models, information_criteria, loocv
from .simulate import generate_dataset, generate_graph, generate_scores, simulate
from .theory import constants, delta_n, existence_rate_term, global_discrepancy, schedule, sub_gaussian_norm

__version__ = "0.1.0"
