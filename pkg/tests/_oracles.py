"""Independent oracles for the test suite.

Each oracle re-derives expected values by a different route than the
package: naive recursive evaluation written directly from the documented
semantics, exhaustive enumeration of tree shapes, exact-rational
finite-difference weights from the Taylor linear system, and a from-
scratch audit of the constant resampling rules.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache


# ---------------------------------------------------------------------------
# Naive recursive evaluation (total semantics, NaN as in-band error)
# ---------------------------------------------------------------------------

def naive_pow(a: float, b: float) -> float:
    if math.isnan(a) or math.isnan(b):
        return math.nan
    n = round(b)
    if abs(b - n) <= 1e-9:
        n = int(n)
        if n == 0:
            return 1.0
        if a == 0.0:
            return 0.0 if n > 0 else math.nan
        if abs(n) > 512:
            try:
                p = math.pow(abs(a), abs(n))
            except OverflowError:
                return math.nan
            if a < 0.0 and n % 2:
                p = -p
        else:
            p = 1.0
            for _ in range(abs(n)):
                p *= a
        if not math.isfinite(p):
            return math.nan
        if n < 0:
            if p == 0.0:
                return math.nan
            p = 1.0 / p
        return p if math.isfinite(p) else math.nan
    if a > 0.0:
        try:
            r = math.pow(a, b)
        except (OverflowError, ValueError):
            return math.nan
        return r if math.isfinite(r) else math.nan
    if a == 0.0:
        return 0.0 if b > 0.0 else math.nan
    return math.nan


def naive_eval(e, y: float) -> float:
    """Reference evaluation over symode Expr nodes, written independently."""
    if e.kind == "const":
        return e.value
    if e.kind == "var":
        return float(y)
    if e.kind == "una":
        v = naive_eval(e.children[0], y)
        op = e.op
        if op == "neg":
            return -v
        if math.isnan(v):
            return math.nan
        if op == "sin":
            return math.sin(v)
        if op == "cos":
            return math.cos(v)
        if op == "exp":
            try:
                r = math.exp(v)
            except OverflowError:
                return math.nan
            return r if math.isfinite(r) else math.nan
        if op == "sqrt":
            return math.sqrt(v) if v >= 0.0 else math.nan
        if op == "log":
            return math.log(v) if v > 0.0 else math.nan
        raise AssertionError(op)
    a = naive_eval(e.children[0], y)
    b = naive_eval(e.children[1], y)
    op = e.op
    if op == "add":
        r = a + b
    elif op == "sub":
        r = a - b
    elif op == "mul":
        r = a * b
    elif op == "div":
        if b == 0.0:
            return math.nan
        r = a / b
    elif op == "pow":
        return naive_pow(a, b)
    else:
        raise AssertionError(op)
    return r if math.isfinite(r) else math.nan


# ---------------------------------------------------------------------------
# Exhaustive unary-binary shape enumeration
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def all_shapes(n_internal: int) -> tuple:
    """Every distinct shape with exactly n_internal internal nodes."""
    if n_internal == 0:
        return (("L",),)
    out = [("U", s) for s in all_shapes(n_internal - 1)]
    for left_n in range(n_internal):
        right_n = n_internal - 1 - left_n
        for left in all_shapes(left_n):
            for right in all_shapes(right_n):
                out.append(("B", left, right))
    return tuple(out)


# ---------------------------------------------------------------------------
# Finite-difference weights from the Taylor system, exact rationals
# ---------------------------------------------------------------------------

def taylor_fd_weights(offsets, order: int) -> list[Fraction]:
    """Solve sum_j w_j * o_j^m = m! * [m == order] for m = 0..n-1."""
    offs = [Fraction(o) for o in offsets]
    n = len(offs)
    rows = [[o**m for o in offs] + [Fraction(math.factorial(m) if m == order else 0)]
            for m in range(n)]
    for col in range(n):  # Gaussian elimination with partial pivoting
        pivot = max(range(col, n), key=lambda r: abs(rows[r][col]))
        if rows[pivot][col] == 0:
            raise ValueError("singular stencil")
        rows[col], rows[pivot] = rows[pivot], rows[col]
        for r in range(n):
            if r != col and rows[r][col] != 0:
                factor = rows[r][col] / rows[col][col]
                rows[r] = [x - factor * yv for x, yv in zip(rows[r], rows[col])]
    return [rows[i][n] / rows[i][i] for i in range(n)]


# ---------------------------------------------------------------------------
# Constant-rule audit, written from the rule list
# ---------------------------------------------------------------------------

def audit_rules_independent(skeleton_tree, originals, values) -> list[str]:
    """Walk a skeleton tree and check every placeholder against the six rules."""
    violations: list[str] = []
    slot = iter(range(len(values)))

    def visit(node, parent, child_idx):
        if node.kind == "hole":
            i = next(slot)
            v, orig = values[i], originals[i]
            if v == 0.0:
                violations.append(f"{i}: zero")
            if (v > 0) != (orig > 0):
                violations.append(f"{i}: sign differs from original")
            if parent is not None and parent.kind == "bin":
                if parent.op == "pow" and child_idx == 0 and v == 1.0:
                    violations.append(f"{i}: base 1")
                if parent.op == "pow" and child_idx == 1 and v in (1.0, -1.0):
                    violations.append(f"{i}: exponent +-1")
                if parent.op == "mul" and v in (1.0, -1.0):
                    violations.append(f"{i}: coefficient +-1")
                if parent.op == "div" and child_idx == 1 and v in (1.0, -1.0):
                    violations.append(f"{i}: divisor +-1")
        for j, child in enumerate(node.children):
            visit(child, node, j)

    visit(skeleton_tree, None, 0)
    return violations
