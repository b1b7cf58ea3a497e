import math

import numpy as np
import pytest
from scipy import stats

from _oracles import all_shapes, audit_rules_independent
from symode import canon
from symode.expr import Y, contains_var, skeletonize, to_prefix
from symode.sampler import (
    GenerationConfig,
    GenerationError,
    LEAF,
    SkeletonSample,
    audit_constant_rules,
    count_shapes,
    decorate,
    internal_count,
    placeholder_roles,
    resample_constants,
    sample_shape,
    sample_skeleton_pool,
    shape_key,
)
from symode.seeding import derive_rng


class TestCountShapes:
    def test_first_values(self):
        assert count_shapes(0) == [1]
        assert count_shapes(1) == [1, 2]
        assert count_shapes(2) == [1, 2, 6]

    def test_matches_exhaustive_enumeration(self):
        counts = count_shapes(5)
        for j in range(6):
            shapes = all_shapes(j)
            assert counts[j] == len(shapes)
            assert len(set(shapes)) == len(shapes)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            count_shapes(-1)


class TestSampleShape:
    def test_k0_always_the_leaf(self):
        cfg = GenerationConfig(max_internal_nodes=0)
        rng = derive_rng(0)
        assert all(sample_shape(cfg, rng) == LEAF for _ in range(100))

    def test_k1_three_shapes_equal_frequency(self):
        cfg = GenerationConfig(max_internal_nodes=1)
        rng = derive_rng(1)
        n = 100_000
        hits: dict[str, int] = {}
        for _ in range(n):
            key = shape_key(sample_shape(cfg, rng))
            hits[key] = hits.get(key, 0) + 1
        assert len(hits) == 3
        sigma = math.sqrt((1 / 3) * (2 / 3) / n)
        for count in hits.values():
            assert abs(count / n - 1 / 3) < 3 * sigma

    def test_k3_uniform_over_all_shapes_chi2(self):
        cfg = GenerationConfig(max_internal_nodes=3)
        rng = derive_rng(2)
        universe = [s for j in range(4) for s in all_shapes(j)]
        assert len(universe) == sum(count_shapes(3))  # 31
        index = {shape_key(s): i for i, s in enumerate(universe)}
        n = 100_000
        hits = np.zeros(len(universe))
        for _ in range(n):
            hits[index[shape_key(sample_shape(cfg, rng))]] += 1
        assert hits.min() > 0
        _chi2, p = stats.chisquare(hits)
        assert p > 0.001

    def test_k3_internal_count_histogram(self):
        cfg = GenerationConfig(max_internal_nodes=3)
        rng = derive_rng(3)
        counts = count_shapes(3)
        total = sum(counts)
        n = 100_000
        hist = np.zeros(4)
        for _ in range(n):
            hist[internal_count(sample_shape(cfg, rng))] += 1
        _chi2, p = stats.chisquare(hist, f_exp=[n * c / total for c in counts])
        assert p > 0.001


class TestDecorate:
    def test_forced_constant_leaf_in_range(self):
        cfg = GenerationConfig(p_symbol=0.0)
        rng = derive_rng(4)
        for _ in range(2000):
            e = decorate(LEAF, cfg, rng)
            assert e.kind == "const"
            assert -10 <= e.value <= 10 and e.value != 0

    def test_binary_operator_frequencies(self):
        cfg = GenerationConfig()
        rng = derive_rng(5)
        shape = ("B", LEAF, LEAF)
        n = 100_000
        hits: dict[str, int] = {}
        for _ in range(n):
            e = decorate(shape, cfg, rng)
            hits[e.op] = hits.get(e.op, 0) + 1
        sigma = math.sqrt(0.2 * 0.8 / n)
        assert set(hits) == {"add", "sub", "mul", "div", "pow"}
        for count in hits.values():
            assert abs(count / n - 0.2) < 3 * sigma

    def test_variable_probability(self):
        cfg = GenerationConfig()
        rng = derive_rng(6)
        n = 100_000
        vars_seen = sum(decorate(LEAF, cfg, rng).kind == "var" for _ in range(n))
        sigma = math.sqrt(0.25 / n)
        assert abs(vars_seen / n - 0.5) < 3 * sigma

    def test_integer_real_mix(self):
        cfg = GenerationConfig(p_symbol=0.0)
        rng = derive_rng(7)
        ints = sum(decorate(LEAF, cfg, rng).value.is_integer() for _ in range(20_000))
        assert abs(ints / 20_000 - 0.5) < 0.02


class TestResample:
    def test_role_detection(self):
        skeleton, _ = skeletonize(
            next(iter([__import__("symode.expr", fromlist=["parse_infix"]).parse_infix(
                "2*y + y**3 + y/4 + 5"
            )]))
        )
        assert placeholder_roles(skeleton) == [
            "coefficient", "pow-exponent", "divisor", "plain",
        ]

    def test_coefficient_never_unit(self):
        from symode.expr import parse_infix

        skeleton, original = skeletonize(parse_infix("2.1*y"))
        cfg = GenerationConfig()
        rng = derive_rng(8)
        for _ in range(3000):
            e = resample_constants(skeleton, original, cfg, rng)
            _, constants = skeletonize(e)
            assert constants[0] > 0
            assert constants[0] not in (0.0, 1.0)

    def test_sign_rule_negative_original(self):
        from symode.expr import parse_infix

        skeleton, original = skeletonize(parse_infix("-1.3*y"))
        cfg = GenerationConfig()
        rng = derive_rng(9)
        for _ in range(3000):
            e = resample_constants(skeleton, original, cfg, rng)
            _, constants = skeletonize(e)
            assert constants[0] < 0

    def test_exponent_never_unit(self):
        from symode.expr import parse_infix

        skeleton, original = skeletonize(parse_infix("y**2"))
        cfg = GenerationConfig()
        rng = derive_rng(10)
        for _ in range(10_000):
            e = resample_constants(skeleton, original, cfg, rng)
            _, constants = skeletonize(e)
            assert constants[0] not in (1.0, -1.0)

    def test_audits_agree_and_pass(self, rng):
        from conftest import random_expr

        cfg = GenerationConfig()
        checked = 0
        for trial in range(500):
            e = canon.simplify(random_expr(rng))
            if e is None or not contains_var(e):
                continue
            skeleton, original = skeletonize(e)
            if not original:
                continue
            stream = derive_rng(11, trial)
            try:
                inst = resample_constants(skeleton, list(original), cfg, stream)
            except GenerationError:
                continue
            _, values = skeletonize(inst)
            assert audit_constant_rules(skeleton, list(original), values) == []
            assert audit_rules_independent(skeleton.tree, list(original), values) == []
            checked += 1
        assert checked > 200

    def test_retry_budget_error(self):
        from symode.expr import parse_infix

        # integers only, and the only admissible magnitude is forbidden by role
        cfg = GenerationConfig(p_integer=1.0, int_low=-1, int_high=1)
        skeleton, original = skeletonize(parse_infix("2*y"))
        with pytest.raises(GenerationError):
            resample_constants(skeleton, original, cfg, derive_rng(12))


class TestPool:
    def test_pool_contract(self):
        cfg = GenerationConfig()
        pool = sample_skeleton_pool(cfg, 100, seed=13)
        keys = [s.key for s in pool]
        assert len(pool) == 100
        assert len(set(keys)) == 100
        for sample in pool:
            assert contains_var(sample.skeleton.tree)
            assert canon.in_support(
                __import__("symode.expr", fromlist=["substitute"]).substitute(
                    sample.skeleton, list(sample.constants)
                ),
                cfg.binary_op_names,
                cfg.unary_op_names,
            )

    def test_pool_deterministic(self):
        cfg = GenerationConfig(max_internal_nodes=3)
        a = sample_skeleton_pool(cfg, 40, seed=14)
        b = sample_skeleton_pool(cfg, 40, seed=14)
        assert [s.key for s in a] == [s.key for s in b]
        assert [s.constants for s in a] == [s.constants for s in b]

    def test_budget_exhaustion_is_loud(self):
        cfg = GenerationConfig(max_internal_nodes=1)
        with pytest.raises(GenerationError):
            sample_skeleton_pool(cfg, 10_000, seed=15, max_attempts=500)
