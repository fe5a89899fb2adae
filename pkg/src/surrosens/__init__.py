"""Surrogate-based global and local sensitivity analysis from optimization traces."""

from .core import BlackBox, BoxDomain, EvaluationLog, builtin, evaluate_batch, external
from .efast import FastIndices, fast_indices, fast_plan
from .mvmsl import mvmsl
from .optimizer import OptimizerConfig, optimize
from .surrogate import fit_kriging, fit_rbf

__version__ = "0.1.0"

__all__ = [
    "BlackBox", "BoxDomain", "EvaluationLog", "FastIndices", "OptimizerConfig",
    "builtin", "evaluate_batch", "external", "fast_indices", "fast_plan", "fit_kriging",
    "fit_rbf", "mvmsl", "optimize",
]
