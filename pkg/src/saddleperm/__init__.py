"""Saddlepoint tail approximations for likelihood-ratio-like permutation
statistics: the k-sample one-way design and the two-sample multivariate
problem."""

__version__ = "0.1.0"

from .errors import SaddlepermError
from .mc_oracle import PermutationOutcome, Statistic, exact_tail, mc_tail
from .model_cgf import GroupDesign, ScoreSet, TiltingModel, standardize_scalar, whiten_multivariate
from .perm_tests import GridReport, TestReport, ksample_test, twosample_test
from .saddlepoint import conditional_context, solve_saddlepoint
from .tail_approx import TailResult, bn_tail, estimate_G, lr_tail, tail_probabilities

__all__ = [
    "GridReport", "GroupDesign", "PermutationOutcome", "SaddlepermError", "ScoreSet", "Statistic",
    "TailResult", "TestReport", "TiltingModel", "bn_tail", "conditional_context", "estimate_G",
    "exact_tail", "ksample_test", "lr_tail", "mc_tail", "solve_saddlepoint", "standardize_scalar",
    "tail_probabilities", "twosample_test", "whiten_multivariate",
]
