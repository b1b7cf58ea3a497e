"""symode: symbolic recovery of scalar ODE right-hand sides y' = f(y).

Generate corpora of random ODEs with verified numerical solutions, train
a sequence-to-sequence model that maps bit-encoded trajectories to
symbolic equations with two-hot constant targets, and benchmark
predictions under noise, irregular sampling, and extrapolation.
"""

__version__ = "0.1.0"

from .expr import (  # noqa: F401
    Expr,
    ParseError,
    Skeleton,
    complexity,
    evaluate,
    operator_histogram,
    parse_infix,
    parse_prefix,
    skeletonize,
    substitute,
    to_infix,
    to_prefix,
)
from .canon import in_support, is_constant_expr, simplify  # noqa: F401
from .sampler import GenerationConfig, sample_skeleton_pool  # noqa: F401
from .solver import SolveConfig, Trajectory, fd_weights, integrate, quality_check  # noqa: F401
from .codec import Vocabulary, encode_input, encode_target, two_hot  # noqa: F401
from .dataset import DatasetManifest, generate_dataset, textbook_testset  # noqa: F401
