"""Pareto-optimal pure policies for stochastic bounded-parameter MDPs."""

from .core import (DOMINANCE_TOL, Dominance, FrontierSet, IntervalModel, ModelError,
                   ValueTriple, as_policy, dominates, hamming, midpoint_average, neighbors,
                   po_filter, strictly_dominates, validate)
from .robust import (ConvergenceError, Evaluator, SolveConfig, eval_policy, extremize_row,
                     optimal_avg, optimal_lower, optimal_upper)

__version__ = "0.1.0"
