import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from symode.expr import BINARY_OPS, SAMPLED_UNARY_OPS, Expr, Y, binary, const, unary


def random_expr(rng: np.random.Generator, max_depth: int = 4) -> Expr:
    """Quick random tree for property tests (not the corpus sampler)."""
    if max_depth == 0 or rng.random() < 0.35:
        if rng.random() < 0.5:
            return Y
        v = float(rng.uniform(-10, 10))
        while v == 0.0:
            v = float(rng.uniform(-10, 10))
        if rng.random() < 0.5:
            v = float(int(rng.integers(1, 11)) * (1 if rng.random() < 0.5 else -1))
            return const(v, is_int=True)
        return const(v, is_int=False)
    if rng.random() < 0.4:
        op = SAMPLED_UNARY_OPS[int(rng.integers(len(SAMPLED_UNARY_OPS)))]
        return unary(op, random_expr(rng, max_depth - 1))
    op = BINARY_OPS[int(rng.integers(len(BINARY_OPS)))]
    return binary(op, random_expr(rng, max_depth - 1), random_expr(rng, max_depth - 1))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
