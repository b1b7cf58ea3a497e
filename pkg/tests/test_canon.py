import math

import numpy as np
import pytest

from conftest import random_expr
from symode.canon import REWRITE_VERSION, in_support, is_constant_expr, simplify
from symode.expr import (
    Y,
    add,
    binary,
    complexity,
    const,
    evaluate,
    mul,
    neg,
    parse_infix,
    sub,
    to_infix,
    unary,
)


class TestIdentities:
    def test_one_times_y_plus_zero(self):
        assert simplify(parse_infix("1*y + 0")) == Y

    def test_constant_folding(self):
        got = simplify(add(Y, add(const(2), const(3))))
        assert got == simplify(add(const(5), Y))
        assert evaluate(got, 1.5) == 6.5

    def test_identities_each(self):
        assert simplify(parse_infix("y - 0")) == Y
        assert simplify(parse_infix("y/1")) == Y
        assert simplify(parse_infix("y**1")) == Y
        assert simplify(parse_infix("y**0")) == const(1)
        assert simplify(parse_infix("0*y")) == const(0)
        assert simplify(neg(neg(Y))) == Y
        assert simplify(neg(const(2.5, is_int=False))) == const(-2.5)

    def test_commutative_ordering(self):
        a = simplify(mul(unary("cos", Y), const(1.64, is_int=False)))
        b = simplify(mul(const(1.64, is_int=False), unary("cos", Y)))
        assert a == b
        assert to_infix(a) == "1.64*cos(y)"

    def test_chain_flattening_collects_constants(self):
        e = parse_infix("2 + y + 3")
        s = simplify(e)
        assert s == add(const(5), Y)

    def test_nonfinite_fold_is_rejected(self):
        assert simplify(parse_infix("exp(800)")) is None
        assert simplify(parse_infix("y + exp(800)")) is None
        assert simplify(parse_infix("log(0 - 1)")) is None

    def test_no_algebraic_cancellation(self):
        s = simplify(parse_infix("y - y"))
        assert s == sub(Y, Y)


class TestProperties:
    def test_idempotent(self, rng):
        for _ in range(300):
            e = random_expr(rng)
            s = simplify(e)
            if s is not None:
                assert simplify(s) == s

    def test_value_preserving(self, rng):
        checked = 0
        for _ in range(1000):
            e = random_expr(rng)
            s = simplify(e)
            if s is None:
                continue
            for y in rng.uniform(-10, 10, size=100):
                v0 = evaluate(e, float(y))
                v1 = evaluate(s, float(y))
                if math.isnan(v0) or math.isnan(v1):
                    continue
                assert abs(v0 - v1) <= 1e-9 * max(1.0, abs(v0)), to_infix(e)
                checked += 1
        assert checked > 10_000  # the tolerance actually got exercised

    def test_never_increases_complexity(self, rng):
        for _ in range(500):
            e = random_expr(rng)
            s = simplify(e)
            if s is not None:
                assert complexity(s) <= complexity(e)


class TestConstantExpr:
    def test_no_variable(self):
        assert is_constant_expr(unary("sin", const(3.2, is_int=False)))

    def test_zero_times_y_folds_constant(self):
        assert is_constant_expr(parse_infix("0*y"))

    def test_y_minus_y_is_not_constant_under_this_rewrite_set(self):
        assert not is_constant_expr(parse_infix("y - y"))

    def test_rejected_fold_with_variable(self):
        assert not is_constant_expr(parse_infix("y + exp(800)"))


class TestInSupport:
    def test_plain_expression(self):
        assert in_support(parse_infix("y**2 + 1.64*cos(y)"))

    def test_operator_outside_configured_support(self):
        e = parse_infix("log(y) + 1")
        assert in_support(e)
        assert not in_support(e, unary_ops=("sin", "cos", "exp", "sqrt"))
        assert not in_support(parse_infix("y**2"), binary_ops=("add", "sub", "mul", "div"))

    def test_unary_minus_always_admitted(self):
        assert in_support(neg(Y), unary_ops=("sin",))

    def test_overflowing_fold_rejected(self):
        assert not in_support(parse_infix("y + exp(800)"))

    def test_rewrite_version_exported(self):
        assert isinstance(REWRITE_VERSION, str) and REWRITE_VERSION
