"""Bounded rewrite-based canonicalization of expression trees.

The rewrite set is deliberately small and fully enumerated: constant
folding of all-constant subtrees, identity elimination (x+0, x-0, x*1,
1*x, 0*x, x/1, x**0, x**1, -(-x), neg of a constant), and deterministic
ordering of commutative add/mul chains.  There is no algebraic
cancellation (y-y stays y-y) and no trig/log identities, so two
expressions share one canonical form exactly when this rewrite set can
connect them.  ``REWRITE_VERSION`` is recorded in dataset manifests
because skeleton deduplication is relative to it.
"""

from __future__ import annotations

import functools
import math

from .expr import (
    BINARY_OPS,
    UNARY_OPS,
    Expr,
    binary,
    const,
    contains_var,
    evaluate,
)

REWRITE_VERSION = "symode-rw-1"

MAX_PASSES = 50

_OP_RANK = {op: i for i, op in enumerate(BINARY_OPS + UNARY_OPS)}


def sort_key(e: Expr):
    """Deterministic total order: constants < variable < unary < binary."""
    if e.kind == "hole":
        return (-1,)
    if e.kind == "const":
        return (0, e.value)
    if e.kind == "var":
        return (1,)
    if e.kind == "una":
        return (2, _OP_RANK[e.op], sort_key(e.children[0]))
    return (3, _OP_RANK[e.op], sort_key(e.children[0]), sort_key(e.children[1]))


def _is_const(e: Expr, value: float | None = None) -> bool:
    if e.kind != "const":
        return False
    return value is None or e.value == value


def _fold(e: Expr) -> Expr | None:
    """Fold an all-constant node; None marks a non-finite result."""
    v = evaluate(e, 0.0)
    if not math.isfinite(v):
        return None
    return const(v, is_int=v.is_integer())


def _collect_chain(e: Expr, op: str, out: list[Expr]):
    if e.kind == "bin" and e.op == op:
        _collect_chain(e.children[0], op, out)
        _collect_chain(e.children[1], op, out)
    else:
        out.append(e)


class _Reject(Exception):
    """Raised when folding produces a non-finite constant."""


def _pass(e: Expr) -> Expr:
    if e.is_leaf:
        return e
    children = tuple(_pass(c) for c in e.children)
    node = Expr(e.kind, op=e.op, children=children)

    if all(c.kind == "const" for c in children):
        folded = _fold(node)
        if folded is None:
            raise _Reject
        return folded

    if node.kind == "una":
        child = children[0]
        if node.op == "neg":
            if child.kind == "una" and child.op == "neg":
                return child.children[0]
            if child.kind == "const":  # unreachable after the fold above, kept for clarity
                return const(-child.value, is_int=child.is_int)
        return node

    left, right = children
    op = node.op
    if op == "add":
        if _is_const(left, 0.0):
            return right
        if _is_const(right, 0.0):
            return left
    elif op == "sub":
        if _is_const(right, 0.0):
            return left
    elif op == "mul":
        if _is_const(left, 0.0) or _is_const(right, 0.0):
            return const(0.0, is_int=True)
        if _is_const(left, 1.0):
            return right
        if _is_const(right, 1.0):
            return left
    elif op == "div":
        if _is_const(right, 1.0):
            return left
    elif op == "pow":
        if _is_const(right, 0.0):
            return const(1.0, is_int=True)
        if _is_const(right, 1.0):
            return left

    if op in ("add", "mul"):
        terms: list[Expr] = []
        _collect_chain(node, op, terms)
        ordered = sorted(terms, key=sort_key)
        if ordered != terms:
            return functools.reduce(lambda a, b: binary(op, a, b), ordered)
    return node


def simplify(e: Expr) -> Expr | None:
    """Rewrite to a canonical fixpoint; None flags a non-finite fold."""
    cur = e
    for _ in range(MAX_PASSES):
        try:
            nxt = _pass(cur)
        except _Reject:
            return None
        if nxt == cur:
            return cur
        cur = nxt
    return cur


def is_constant_expr(e: Expr) -> bool:
    """True when the simplified tree has no variable leaf.

    Expressions rejected by :func:`simplify` (a subtree folds to a
    non-finite value) are classified by scanning the unsimplified tree.
    """
    s = simplify(e)
    if s is None:
        return not contains_var(e)
    return not contains_var(s)


def in_support(
    e: Expr,
    binary_ops: tuple[str, ...] = BINARY_OPS,
    unary_ops: tuple[str, ...] = UNARY_OPS,
) -> bool:
    """Check that the simplified expression stays within the operator support.

    Unary minus is always admitted.  Fails when simplification rejects
    the expression (constant folding hit a non-finite value) or any leaf
    is not the variable or a finite constant.
    """
    s = simplify(e)
    if s is None:
        return False
    for node in s.walk():
        if node.kind == "bin" and node.op not in binary_ops:
            return False
        if node.kind == "una" and node.op != "neg" and node.op not in unary_ops:
            return False
        if node.kind == "hole":
            return False
        if node.kind == "const" and not math.isfinite(node.value):
            return False
    return True
