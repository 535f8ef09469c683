"""SpAMM quadtree matrices and Newton-Schulz inverse square roots."""
from .qtree import HierMatrix, QuadNode, ShapeMismatchError, build, to_dense
from .spamm import MultiplyStats, VolumeLog, multiply
from .sqrt_iter import IterationConfig, IterationDivergence, IterationResult, run
from .synthetic import SyntheticSpec, gen_decay
from .frechet import track_error_flow
from .precond import ProductRepresentation, Slice
from .mmio import read_matrix_market, write_matrix_market
from .estimators import InverseSqrt, RegularizedInverseFactor

__version__ = "0.1.0"

__all__ = [
    "HierMatrix", "QuadNode", "ShapeMismatchError", "build", "to_dense",
    "MultiplyStats", "VolumeLog", "multiply",
    "IterationConfig", "IterationDivergence", "IterationResult", "run",
    "SyntheticSpec", "gen_decay", "track_error_flow",
    "ProductRepresentation", "Slice",
    "read_matrix_market", "write_matrix_market",
    "InverseSqrt", "RegularizedInverseFactor",
]
