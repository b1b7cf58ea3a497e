import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import naive_eval
from conftest import random_expr
from symode.expr import (
    BINARY_OPS,
    UNARY_OPS,
    ParseError,
    Y,
    add,
    binary,
    complexity,
    const,
    evaluate,
    mul,
    neg,
    operator_histogram,
    parse_infix,
    parse_prefix,
    pow_,
    skeletonize,
    sub,
    substitute,
    to_infix,
    to_prefix,
    unary,
)


def cos(e):
    return unary("cos", e)


class TestParsePrefix:
    def test_simple_product(self):
        e = parse_prefix(["mul", "0.1", "y"])
        assert e == mul(const(0.1, is_int=False), Y)

    def test_single_leaf(self):
        assert parse_prefix(["y"]) == Y

    def test_missing_operand(self):
        with pytest.raises(ParseError) as exc:
            parse_prefix(["add", "y"])
        assert exc.value.position == 2

    def test_trailing_tokens(self):
        with pytest.raises(ParseError):
            parse_prefix(["y", "y"])

    def test_unknown_token(self):
        with pytest.raises(ParseError) as exc:
            parse_prefix(["tan", "y"])
        assert exc.value.position == 0

    def test_roundtrip_hand_built(self):
        e = add(pow_(Y, const(2)), mul(const(1.64, is_int=False), cos(Y)))
        assert parse_prefix(to_prefix(e)) == e


class TestInfix:
    def test_paper_example_printing(self):
        e = add(pow_(Y, const(2)), mul(const(1.64, is_int=False), cos(Y)))
        assert to_infix(e) == "y**2 + 1.64*cos(y)"
        assert parse_infix(to_infix(e)) == e

    def test_logistic_shape_is_left_associative(self):
        e = parse_infix("0.23*y*(1 - y)")
        expected = mul(mul(const(0.23, is_int=False), Y), sub(const(1), Y))
        assert e == expected

    def test_redundant_parens(self):
        assert parse_infix("((y))") == Y

    def test_empty_input(self):
        with pytest.raises(ParseError):
            parse_infix("")

    def test_syntax_error_has_position(self):
        with pytest.raises(ParseError) as exc:
            parse_infix("y + * 2")
        assert exc.value.position == 4

    def test_unknown_identifier(self):
        with pytest.raises(ParseError):
            parse_infix("tan(y)")

    def test_python_compatible_unary_minus(self):
        assert parse_infix("-2**2") == neg(pow_(const(2), const(2)))
        assert parse_infix("-2*y") == mul(const(-2), Y)
        assert parse_infix("y**-2") == pow_(Y, const(-2))

    def test_negative_literal_folding(self):
        assert parse_infix("-2.5") == const(-2.5, is_int=False)
        assert parse_infix("-(2)") == neg(const(2))

    def test_scientific_notation(self):
        assert parse_infix("1e-05") == const(1e-05, is_int=False)
        assert to_infix(const(1e-05, is_int=False)) == "1e-05"

    def test_integers_print_without_decimal_point(self):
        assert to_infix(pow_(Y, const(2))) == "y**2"
        assert to_infix(const(-3)) == "-3"


class TestEvaluate:
    def test_cos_at_zero(self):
        e = parse_infix("y**2 + 1.64*cos(y)")
        assert evaluate(e, 0.0) == 1.64

    def test_logistic_hand_value(self):
        e = parse_infix("0.23*y*(1 - y)")
        assert evaluate(e, 4.9) == pytest.approx(-4.3953, abs=1e-12)

    def test_domain_violations_are_nan(self):
        assert math.isnan(evaluate(parse_infix("log(y)"), -1.0))
        assert math.isnan(evaluate(parse_infix("log(y)"), 0.0))
        assert math.isnan(evaluate(parse_infix("sqrt(y)"), -2.0))
        assert math.isnan(evaluate(parse_infix("1/y"), 0.0))
        assert math.isnan(evaluate(parse_infix("y**0.5"), -4.0))
        assert math.isnan(evaluate(parse_infix("exp(y)"), 1000.0))

    def test_integer_power_semantics(self):
        assert evaluate(parse_infix("y**3"), -2.0) == -8.0
        assert evaluate(parse_infix("y**0"), 0.0) == 1.0
        assert math.isnan(evaluate(parse_infix("y**-1"), 0.0))
        # exponent within 1e-9 of an integer is integer semantics
        assert evaluate(pow_(const(-2), const(3.0 + 1e-10, is_int=False)), 0.0) == -8.0

    def test_nan_propagates(self):
        e = add(Y, unary("log", const(-1, is_int=False)))
        assert math.isnan(evaluate(e, 1.0))

    def test_matches_naive_oracle_bit_for_bit(self, rng):
        for _ in range(10_000):
            e = random_expr(rng, max_depth=4)
            y = float(rng.uniform(-10, 10))
            got = evaluate(e, y)
            want = naive_eval(e, y)
            if math.isnan(want):
                assert math.isnan(got), f"{to_infix(e)} at y={y}"
            else:
                assert got == want, f"{to_infix(e)} at y={y}"


class TestStructure:
    def test_complexity_examples(self):
        assert complexity(Y) == 1
        assert complexity(parse_infix("y**2 + 1.64*cos(y)")) == 8
        assert complexity(parse_infix("0.1*y")) == 3

    def test_complexity_recursion(self, rng):
        for _ in range(50):
            e = random_expr(rng)
            assert complexity(e) == 1 + sum(complexity(c) for c in e.children)

    def test_operator_histogram(self):
        e = parse_infix("y**2 + 1.64*cos(y)")
        assert operator_histogram(e) == {"add": 1, "pow": 1, "mul": 1, "cos": 1}
        assert operator_histogram(Y) == {}
        assert operator_histogram(neg(Y)) == {"neg": 1}


class TestSkeleton:
    def test_riccati_extraction(self):
        # every constant leaf is a placeholder, including the power exponent
        e = parse_infix("0.6*y**2 + 2*y + 0.1")
        skeleton, constants = skeletonize(e)
        assert constants == [0.6, 2.0, 2.0, 0.1]
        assert skeleton.key.count("<c>") == 4
        assert "0.6" not in skeleton.key

    def test_no_constants(self):
        skeleton, constants = skeletonize(Y)
        assert constants == [] and skeleton.key == "y"

    def test_single_constant(self):
        skeleton, constants = skeletonize(unary("sin", const(3.2, is_int=False)))
        assert constants == [3.2] and skeleton.key == "sin <c>"

    def test_substitute_is_identity(self, rng):
        for _ in range(200):
            e = random_expr(rng)
            skeleton, constants = skeletonize(e)
            assert substitute(skeleton, constants) == e

    def test_key_deterministic_for_equal_structures(self):
        a, _ = skeletonize(parse_infix("2*y + 1"))
        b, _ = skeletonize(parse_infix("7*y + 9"))
        assert a.key == b.key


# Hypothesis strategy over expression trees.
_leaves = st.one_of(
    st.just(Y),
    st.builds(
        lambda v: const(v, is_int=False),
        st.floats(min_value=-10, max_value=10, allow_nan=False).filter(lambda v: v != 0),
    ),
    st.builds(
        lambda v: const(float(v), is_int=True),
        st.integers(min_value=-10, max_value=10).filter(lambda v: v != 0),
    ),
)
_exprs = st.recursive(
    _leaves,
    lambda inner: st.one_of(
        st.builds(lambda op, a: unary(op, a), st.sampled_from(UNARY_OPS), inner),
        st.builds(lambda op, a, b: binary(op, a, b), st.sampled_from(BINARY_OPS), inner, inner),
    ),
    max_leaves=12,
)


@settings(max_examples=300, deadline=None)
@given(_exprs)
def test_prefix_roundtrip_property(e):
    assert parse_prefix(to_prefix(e)) == e


@settings(max_examples=300, deadline=None)
@given(_exprs)
def test_infix_roundtrip_property(e):
    assert parse_infix(to_infix(e)) == e
