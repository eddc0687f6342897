"""Policy decomposition: input-trees, decomposition search and tabular policy synthesis."""

from .enumeration import count_decompositions, enumerate_all, sample_uniform
from .grid import GridSpec
from .input_tree import InputTree, TreeNode, mutate, undecomposed, validate
from .lqr_metrics import DecompositionMetrics, FitnessEvaluator, fitness, linearize, solve_discounted_lqr
from .systems import SystemModel, get_model

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "InputTree",
    "TreeNode",
    "undecomposed",
    "validate",
    "mutate",
    "count_decompositions",
    "enumerate_all",
    "sample_uniform",
    "GridSpec",
    "SystemModel",
    "get_model",
    "linearize",
    "solve_discounted_lqr",
    "fitness",
    "FitnessEvaluator",
    "DecompositionMetrics",
]
