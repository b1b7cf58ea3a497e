"""Random generation of ODE right-hand sides as decorated unary-binary trees.

Tree shapes are drawn uniformly over all shapes with at most K internal
nodes via exact counting and unranking, then decorated with operators
and leaves.  Constant resampling reinstantiates a skeleton with fresh
values without changing its canonical structure: no zeros, signs match
the originals, no power bases of 1, no exponents/coefficients/divisors
of +-1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import canon
from .expr import (
    BINARY_OPS,
    SAMPLED_UNARY_OPS,
    Expr,
    Skeleton,
    Y,
    binary,
    const,
    skeletonize,
    substitute,
    unary,
)
from .seeding import derive_rng

# Shape nodes: ("L",) leaf, ("U", child) unary, ("B", left, right) binary.
TreeShape = tuple

LEAF: TreeShape = ("L",)


class GenerationError(RuntimeError):
    """Raised when a sampling budget is exhausted."""


@dataclass(frozen=True)
class GenerationConfig:
    """Knobs of the training distribution over equations."""

    max_internal_nodes: int = 5
    binary_ops: tuple[tuple[str, float], ...] = tuple((op, 0.2) for op in BINARY_OPS)
    unary_ops: tuple[tuple[str, float], ...] = tuple((op, 0.2) for op in SAMPLED_UNARY_OPS)
    p_symbol: float = 0.5
    p_integer: float = 0.5
    int_low: int = -10
    int_high: int = 10
    real_low: float = -10.0
    real_high: float = 10.0
    n_constant_sets: int = 25
    n_initial_values: int = 25

    def __post_init__(self):
        if self.max_internal_nodes < 0:
            raise ValueError("max_internal_nodes must be >= 0")
        for name, dist in (("binary_ops", self.binary_ops), ("unary_ops", self.unary_ops)):
            total = sum(p for _, p in dist)
            if not dist or any(p < 0 for _, p in dist) or abs(total - 1.0) > 1e-9:
                raise ValueError(f"{name} probabilities must be nonnegative and sum to 1")
        for p in (self.p_symbol, self.p_integer):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if self.int_low > self.int_high or (self.int_low == 0 == self.int_high):
            raise ValueError("integer constant range is empty")
        if not self.real_low < self.real_high:
            raise ValueError("real constant range is empty")
        if self.n_constant_sets < 1 or self.n_initial_values < 1:
            raise ValueError("n_constant_sets and n_initial_values must be >= 1")

    @property
    def binary_op_names(self) -> tuple[str, ...]:
        return tuple(op for op, _ in self.binary_ops)

    @property
    def unary_op_names(self) -> tuple[str, ...]:
        return tuple(op for op, _ in self.unary_ops)

    def nonzero_integers(self) -> list[int]:
        return [v for v in range(self.int_low, self.int_high + 1) if v != 0]

    def to_json_dict(self) -> dict:
        return {
            "max_internal_nodes": self.max_internal_nodes,
            "binary_ops": dict(self.binary_ops),
            "unary_ops": dict(self.unary_ops),
            "p_symbol": self.p_symbol,
            "p_integer": self.p_integer,
            "int_range": [self.int_low, self.int_high],
            "real_range": [self.real_low, self.real_high],
            "n_constant_sets": self.n_constant_sets,
            "n_initial_values": self.n_initial_values,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "GenerationConfig":
        kw = {}
        if "max_internal_nodes" in d:
            kw["max_internal_nodes"] = int(d["max_internal_nodes"])
        if "binary_ops" in d:
            kw["binary_ops"] = tuple((k, float(v)) for k, v in d["binary_ops"].items())
        if "unary_ops" in d:
            kw["unary_ops"] = tuple((k, float(v)) for k, v in d["unary_ops"].items())
        for k in ("p_symbol", "p_integer"):
            if k in d:
                kw[k] = float(d[k])
        if "int_range" in d:
            kw["int_low"], kw["int_high"] = (int(v) for v in d["int_range"])
        if "real_range" in d:
            kw["real_low"], kw["real_high"] = (float(v) for v in d["real_range"])
        for k in ("n_constant_sets", "n_initial_values"):
            if k in d:
                kw[k] = int(d[k])
        return cls(**kw)


# ---------------------------------------------------------------------------
# Shape counting, unranking, sampling
# ---------------------------------------------------------------------------

def count_shapes(k: int) -> list[int]:
    """Number of unary-binary tree shapes with exactly j internal nodes, j=0..k.

    c(0)=1 (the bare leaf); c(j) = c(j-1) + sum_{a+b=j-1} c(a)*c(b).
    Python integers keep the counts exact for any k.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    c = [0] * (k + 1)
    c[0] = 1
    for j in range(1, k + 1):
        c[j] = c[j - 1] + sum(c[a] * c[j - 1 - a] for a in range(j))
    return c


def _unrank(j: int, r: int, counts: list[int]) -> TreeShape:
    if j == 0:
        return LEAF
    if r < counts[j - 1]:
        return ("U", _unrank(j - 1, r, counts))
    r -= counts[j - 1]
    for a in range(j):
        b = j - 1 - a
        block = counts[a] * counts[b]
        if r < block:
            ra, rb = divmod(r, counts[b])
            return ("B", _unrank(a, ra, counts), _unrank(b, rb, counts))
        r -= block
    raise AssertionError("rank out of range")


def internal_count(shape: TreeShape) -> int:
    if shape[0] == "L":
        return 0
    if shape[0] == "U":
        return 1 + internal_count(shape[1])
    return 1 + internal_count(shape[1]) + internal_count(shape[2])


def shape_key(shape: TreeShape) -> str:
    if shape[0] == "L":
        return "L"
    if shape[0] == "U":
        return f"U({shape_key(shape[1])})"
    return f"B({shape_key(shape[1])},{shape_key(shape[2])})"


def sample_shape(cfg: GenerationConfig, rng: np.random.Generator) -> TreeShape:
    """Draw uniformly over all shapes with <= K internal nodes."""
    counts = count_shapes(cfg.max_internal_nodes)
    total = sum(counts)
    if total >= 2**63:
        raise GenerationError("shape space too large for 64-bit uniform draw")
    u = int(rng.integers(total))
    for j, cj in enumerate(counts):
        if u < cj:
            return _unrank(j, u, counts)
        u -= cj
    raise AssertionError("uniform draw out of range")


# ---------------------------------------------------------------------------
# Decoration
# ---------------------------------------------------------------------------

def _weighted_choice(pairs, rng: np.random.Generator) -> str:
    r = rng.random()
    acc = 0.0
    for name, p in pairs:
        acc += p
        if r < acc:
            return name
    return pairs[-1][0]


def _draw_constant(cfg: GenerationConfig, rng: np.random.Generator) -> Expr:
    if rng.random() < cfg.p_integer:
        ints = cfg.nonzero_integers()
        v = ints[int(rng.integers(len(ints)))]
        return const(float(v), is_int=True)
    while True:
        v = rng.uniform(cfg.real_low, cfg.real_high)
        if v != 0.0:
            return const(v, is_int=False)


def decorate(shape: TreeShape, cfg: GenerationConfig, rng: np.random.Generator) -> Expr:
    """Assign operators to internal nodes and a variable/constant to each leaf."""
    if shape[0] == "L":
        if rng.random() < cfg.p_symbol:
            return Y
        return _draw_constant(cfg, rng)
    if shape[0] == "U":
        op = _weighted_choice(cfg.unary_ops, rng)
        return unary(op, decorate(shape[1], cfg, rng))
    op = _weighted_choice(cfg.binary_ops, rng)
    left = decorate(shape[1], cfg, rng)
    right = decorate(shape[2], cfg, rng)
    return binary(op, left, right)


# ---------------------------------------------------------------------------
# Constant resampling
# ---------------------------------------------------------------------------

ROLE_PLAIN = "plain"
ROLE_POW_BASE = "pow-base"
ROLE_POW_EXPONENT = "pow-exponent"
ROLE_COEFFICIENT = "coefficient"
ROLE_DIVISOR = "divisor"


def placeholder_roles(skeleton: Skeleton) -> list[str]:
    """Syntactic role of each placeholder, in pre-order."""
    roles: list[str] = []

    def visit(node: Expr, parent: Expr | None, idx: int):
        if node.kind == "hole":
            roles.append(_role_of(parent, idx))
        for i, c in enumerate(node.children):
            visit(c, node, i)

    visit(skeleton.tree, None, 0)
    return roles


def _role_of(parent: Expr | None, idx: int) -> str:
    if parent is None or parent.kind != "bin":
        return ROLE_PLAIN
    if parent.op == "pow":
        return ROLE_POW_BASE if idx == 0 else ROLE_POW_EXPONENT
    if parent.op == "mul":
        return ROLE_COEFFICIENT
    if parent.op == "div" and idx == 1:
        return ROLE_DIVISOR
    return ROLE_PLAIN


def constant_rule_violations(role: str, value: float, original: float) -> list[str]:
    """Audit a single resampled constant against the six sampling rules."""
    out = []
    if value == 0.0:
        out.append("zero constant")
    if original != 0.0 and math.copysign(1.0, value) != math.copysign(1.0, original):
        out.append("sign flip")
    if role == ROLE_POW_BASE and value == 1.0:
        out.append("power base 1")
    if role == ROLE_POW_EXPONENT and abs(value) == 1.0:
        out.append("power exponent +-1")
    if role == ROLE_COEFFICIENT and abs(value) == 1.0:
        out.append("coefficient +-1")
    if role == ROLE_DIVISOR and abs(value) == 1.0:
        out.append("divisor +-1")
    return out


def resample_constants(
    skeleton: Skeleton,
    original: list[float],
    cfg: GenerationConfig,
    rng: np.random.Generator,
    max_tries: int = 100,
) -> Expr:
    """Instantiate the skeleton with fresh rule-conforming constants."""
    roles = placeholder_roles(skeleton)
    if len(roles) != len(original):
        raise ValueError(f"skeleton has {len(roles)} placeholders, got {len(original)} originals")
    values: list[float] = []
    for role, orig in zip(roles, original):
        sign = math.copysign(1.0, orig)
        for attempt in range(max_tries):
            draw = _draw_constant(cfg, rng).value
            v = sign * abs(draw)
            if not constant_rule_violations(role, v, orig):
                values.append(v)
                break
        else:
            raise GenerationError(
                f"no admissible constant for role {role} after {max_tries} tries"
            )
    return substitute(skeleton, values)


def audit_constant_rules(
    skeleton: Skeleton, original: list[float], values: list[float]
) -> list[str]:
    """All rule violations of a resampled instantiation (empty when clean)."""
    roles = placeholder_roles(skeleton)
    out = []
    for i, (role, orig, v) in enumerate(zip(roles, original, values)):
        for msg in constant_rule_violations(role, v, orig):
            out.append(f"constant {i} ({role}): {msg}")
    return out


# ---------------------------------------------------------------------------
# Skeleton pool
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SkeletonSample:
    """A deduplicated skeleton with the constants it was first drawn with."""

    skeleton: Skeleton
    constants: tuple[float, ...]

    @property
    def key(self) -> str:
        return self.skeleton.key


def sample_skeleton_pool(
    cfg: GenerationConfig,
    target_count: int,
    seed: int,
    max_attempts: int | None = None,
    exclude_keys: frozenset[str] | set[str] = frozenset(),
) -> list[SkeletonSample]:
    """Fill a pool of distinct canonical skeletons.

    Each attempt draws shape -> decoration -> canonical form, rejecting
    constant expressions, out-of-support results, and duplicates.  The
    per-attempt RNG stream depends only on (seed, attempt index).
    """
    if target_count < 1:
        raise ValueError("target_count must be >= 1")
    budget = max_attempts if max_attempts is not None else 10 * target_count
    pool: list[SkeletonSample] = []
    seen: set[str] = set(exclude_keys)
    rejects = {"nonfinite": 0, "constant": 0, "support": 0, "duplicate": 0}
    for attempt in range(budget):
        rng = derive_rng(seed, "pool-attempt", attempt)
        expr = decorate(sample_shape(cfg, rng), cfg, rng)
        simplified = canon.simplify(expr)
        if simplified is None:
            rejects["nonfinite"] += 1
            continue
        if canon.is_constant_expr(simplified):
            rejects["constant"] += 1
            continue
        if not canon.in_support(simplified, cfg.binary_op_names, cfg.unary_op_names):
            rejects["support"] += 1
            continue
        skeleton, constants = skeletonize(simplified)
        if skeleton.key in seen:
            rejects["duplicate"] += 1
            continue
        seen.add(skeleton.key)
        pool.append(SkeletonSample(skeleton, tuple(constants)))
        if len(pool) == target_count:
            return pool
    raise GenerationError(
        f"skeleton pool reached {len(pool)}/{target_count} after {budget} attempts; "
        f"rejections: {rejects}"
    )
