"""Expression trees for right-hand sides of scalar autonomous ODEs y' = f(y).

An expression is an immutable tree over five binary operators
(add, sub, mul, div, pow), six unary operators (neg, sin, cos, exp,
sqrt, log), the single variable ``y`` and finite real constants.
Skeletons are the same trees with every constant replaced by a
placeholder; they are the unit of deduplication for generated corpora.

Evaluation is total: domain violations (log/sqrt of a negative number,
division by zero, fractional powers of negative bases) and overflow
produce a quiet NaN that propagates upward instead of raising.
"""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

BINARY_OPS = ("add", "sub", "mul", "div", "pow")
UNARY_OPS = ("neg", "sin", "cos", "exp", "sqrt", "log")
# neg is never sampled; it only enters through parsing and rewriting.
SAMPLED_UNARY_OPS = ("sin", "cos", "exp", "sqrt", "log")

HOLE_TOKEN = "<c>"

_BIN_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "**"}
_SYMBOL_BIN = {v: k for k, v in _BIN_SYMBOL.items()}

# Exponents this close to an integer are evaluated with integer semantics.
POW_INTEGER_TOL = 1e-9


class ExprError(ValueError):
    """Base class for expression construction/evaluation errors."""


class ParseError(ExprError):
    """Malformed prefix or infix input. ``position`` is the token/char index."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


def _float_bits(v: float) -> bytes:
    return struct.pack("<d", v)


@dataclass(frozen=True, eq=False)
class Expr:
    """One node of an expression tree.

    ``kind`` is one of "bin", "una", "var", "const", "hole".  Constants
    carry a finite 64-bit value plus a flag saying whether they should be
    printed as integers.  Structural equality compares constants by their
    bit pattern and ignores the integer-printing flag.
    """

    kind: str
    op: str | None = None
    value: float | None = None
    is_int: bool = False
    children: tuple["Expr", ...] = ()

    def __post_init__(self):
        if self.kind == "bin":
            if self.op not in BINARY_OPS or len(self.children) != 2:
                raise ExprError(f"bad binary node: {self.op}/{len(self.children)}")
        elif self.kind == "una":
            if self.op not in UNARY_OPS or len(self.children) != 1:
                raise ExprError(f"bad unary node: {self.op}/{len(self.children)}")
        elif self.kind == "var":
            if self.children:
                raise ExprError("variable leaf cannot have children")
        elif self.kind == "const":
            if self.children:
                raise ExprError("constant leaf cannot have children")
            if self.value is None or not math.isfinite(self.value):
                raise ExprError(f"constant must be a finite real, got {self.value}")
        elif self.kind == "hole":
            if self.children:
                raise ExprError("placeholder leaf cannot have children")
        else:
            raise ExprError(f"unknown node kind {self.kind!r}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Expr):
            return NotImplemented
        if self.kind != other.kind or self.op != other.op:
            return False
        if self.kind == "const" and _float_bits(self.value) != _float_bits(other.value):
            return False
        return self.children == other.children

    def __hash__(self) -> int:
        bits = _float_bits(self.value) if self.kind == "const" else None
        return hash((self.kind, self.op, bits, self.children))

    def __repr__(self) -> str:
        return f"Expr({to_infix(self)!r})" if self.kind != "hole" else "Expr(<c>)"

    @property
    def is_leaf(self) -> bool:
        return self.kind in ("var", "const", "hole")

    def walk(self) -> Iterator["Expr"]:
        """Pre-order traversal."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))


Y = Expr("var")
HOLE = Expr("hole")


def const(value: float, is_int: bool | None = None) -> Expr:
    v = float(value)
    if is_int is None:
        is_int = isinstance(value, int) or v.is_integer()
    return Expr("const", value=v, is_int=bool(is_int))


def binary(op: str, left: Expr, right: Expr) -> Expr:
    return Expr("bin", op=op, children=(left, right))


def unary(op: str, child: Expr) -> Expr:
    return Expr("una", op=op, children=(child,))


def add(a, b):
    return binary("add", a, b)


def sub(a, b):
    return binary("sub", a, b)


def mul(a, b):
    return binary("mul", a, b)


def div(a, b):
    return binary("div", a, b)


def pow_(a, b):
    return binary("pow", a, b)


def neg(a):
    return unary("neg", a)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _clamped(v: float) -> float:
    return v if math.isfinite(v) else math.nan


def _eval_add(a, b):
    return _clamped(a + b)


def _eval_sub(a, b):
    return _clamped(a - b)


def _eval_mul(a, b):
    return _clamped(a * b)


def _eval_div(a, b):
    if b == 0.0:
        return math.nan
    return _clamped(a / b)


def _int_pow(a: float, n: int) -> float:
    if n == 0:
        return 1.0  # including 0**0 == 1
    if a == 0.0:
        return 0.0 if n > 0 else math.nan
    if abs(n) > 512:
        # |a| >= something meaningful makes a**n overflow/underflow anyway;
        # fall back to libm on the magnitude and restore the sign.
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
    return _clamped(p)


def _eval_pow(a, b):
    if math.isnan(a) or math.isnan(b):
        return math.nan
    n = round(b)
    if abs(b - n) <= POW_INTEGER_TOL:
        return _int_pow(a, int(n))
    if a > 0.0:
        try:
            return _clamped(math.pow(a, b))
        except (OverflowError, ValueError):
            return math.nan
    if a == 0.0:
        return 0.0 if b > 0.0 else math.nan
    return math.nan  # negative base, fractional exponent


def _eval_neg(a):
    return -a


def _eval_sin(a):
    return math.sin(a) if not math.isnan(a) else math.nan


def _eval_cos(a):
    return math.cos(a) if not math.isnan(a) else math.nan


def _eval_exp(a):
    try:
        return _clamped(math.exp(a))
    except OverflowError:
        return math.nan


def _eval_sqrt(a):
    if math.isnan(a) or a < 0.0:
        return math.nan
    return math.sqrt(a)


def _eval_log(a):
    if math.isnan(a) or a <= 0.0:
        return math.nan
    return _clamped(math.log(a))


_BIN_FN = {
    "add": _eval_add,
    "sub": _eval_sub,
    "mul": _eval_mul,
    "div": _eval_div,
    "pow": _eval_pow,
}
_UNA_FN = {
    "neg": _eval_neg,
    "sin": _eval_sin,
    "cos": _eval_cos,
    "exp": _eval_exp,
    "sqrt": _eval_sqrt,
    "log": _eval_log,
}


def evaluate(e: Expr, y: float) -> float:
    """Evaluate ``e`` at the point y.  Returns a finite float or NaN."""
    k = e.kind
    if k == "const":
        return e.value
    if k == "var":
        return float(y)
    if k == "una":
        return _UNA_FN[e.op](evaluate(e.children[0], y))
    if k == "bin":
        f = _BIN_FN[e.op]
        return f(evaluate(e.children[0], y), evaluate(e.children[1], y))
    raise ExprError("cannot evaluate a skeleton placeholder")


def compile_fn(e: Expr) -> Callable[[float], float]:
    """Build a closure computing exactly what ``evaluate(e, .)`` computes.

    Bit-for-bit identical to :func:`evaluate` (same primitive helpers in
    the same order); used in solver hot loops.
    """
    k = e.kind
    if k == "const":
        v = e.value
        return lambda y: v
    if k == "var":
        return lambda y: float(y)
    if k == "una":
        f = _UNA_FN[e.op]
        c = compile_fn(e.children[0])
        return lambda y: f(c(y))
    if k == "bin":
        f = _BIN_FN[e.op]
        l = compile_fn(e.children[0])
        r = compile_fn(e.children[1])
        return lambda y: f(l(y), r(y))
    raise ExprError("cannot compile a skeleton placeholder")


# ---------------------------------------------------------------------------
# Structure queries
# ---------------------------------------------------------------------------

def complexity(e: Expr) -> int:
    """Total node count: operators + variable leaves + constant leaves."""
    return sum(1 for _ in e.walk())


def operator_histogram(e: Expr) -> dict[str, int]:
    hist: dict[str, int] = {}
    for node in e.walk():
        if node.kind in ("bin", "una"):
            hist[node.op] = hist.get(node.op, 0) + 1
    return hist


def contains_var(e: Expr) -> bool:
    return any(node.kind == "var" for node in e.walk())


# ---------------------------------------------------------------------------
# Prefix notation
# ---------------------------------------------------------------------------

def format_constant(value: float, is_int: bool | None = None) -> str:
    v = float(value)
    if is_int is None:
        is_int = v.is_integer()
    if is_int and v.is_integer():
        return str(int(v))
    return repr(v)


def to_prefix(e: Expr) -> list[str]:
    """Pre-order token list; inverse of :func:`parse_prefix`."""
    out: list[str] = []
    for node in e.walk():
        if node.kind in ("bin", "una"):
            out.append(node.op)
        elif node.kind == "var":
            out.append("y")
        elif node.kind == "const":
            out.append(format_constant(node.value, node.is_int))
        else:
            out.append(HOLE_TOKEN)
    return out


_NUMBER_RE = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?\Z")


def _literal_const(text: str) -> Expr:
    is_int = "." not in text and "e" not in text and "E" not in text
    return const(float(text), is_int=is_int)


def parse_prefix(tokens: Sequence[str], allow_holes: bool = False) -> Expr:
    """Parse a prefix token list into an expression tree."""
    pos = 0

    def parse_node() -> Expr:
        nonlocal pos
        if pos >= len(tokens):
            raise ParseError("unexpected end of input, operand missing", pos)
        tok = tokens[pos]
        pos += 1
        if tok in BINARY_OPS:
            left = parse_node()
            right = parse_node()
            return binary(tok, left, right)
        if tok in UNARY_OPS:
            return unary(tok, parse_node())
        if tok == "y":
            return Y
        if tok == HOLE_TOKEN:
            if not allow_holes:
                raise ParseError("placeholder token not allowed here", pos - 1)
            return HOLE
        if _NUMBER_RE.match(tok):
            return _literal_const(tok)
        raise ParseError(f"unknown token {tok!r}", pos - 1)

    root = parse_node()
    if pos != len(tokens):
        raise ParseError(f"trailing tokens after complete expression", pos)
    return root


# ---------------------------------------------------------------------------
# Infix notation
# ---------------------------------------------------------------------------

# Precedence levels used both for printing and parsing (Python-compatible:
# ** binds tighter than unary minus, which binds tighter than * and /).
_P_ADD, _P_MUL, _P_UNARY, _P_POW, _P_ATOM = 1, 2, 3, 4, 5


def _print_level(e: Expr) -> int:
    if e.kind == "bin":
        if e.op == "pow":
            return _P_POW
        return _P_MUL if e.op in ("mul", "div") else _P_ADD
    if e.kind == "una" and e.op == "neg":
        return _P_UNARY
    if e.kind == "const" and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return _P_UNARY  # negative literals print with a leading minus
    return _P_ATOM


def to_infix(e: Expr) -> str:
    """Precedence-correct infix text; parentheses only where required."""

    def wrap(child: Expr, limit: int) -> str:
        text = to_infix(child)
        return f"({text})" if _print_level(child) < limit else text

    if e.kind == "const":
        return format_constant(e.value, e.is_int)
    if e.kind == "var":
        return "y"
    if e.kind == "hole":
        return HOLE_TOKEN
    if e.kind == "una":
        if e.op != "neg":
            return f"{e.op}({to_infix(e.children[0])})"
        child = e.children[0]
        if child.kind == "const":
            # "-(2)" keeps an explicit neg node distinct from a negative literal
            return f"-({to_infix(child)})"
        return "-" + wrap(child, _P_UNARY)
    left, right = e.children
    if e.op == "pow":
        # ** is right-associative; a parenthesized left side is required even
        # for another pow, and for anything weaker than an atom.
        lhs = to_infix(left)
        if _print_level(left) <= _P_POW:
            lhs = f"({lhs})"
        return f"{lhs}**{wrap(right, _P_UNARY)}"
    level = _P_MUL if e.op in ("mul", "div") else _P_ADD
    lhs = wrap(left, level)
    rhs = wrap(right, level + 1)  # left-associative: right side must bind tighter
    return f"{lhs} {_BIN_SYMBOL[e.op]} {rhs}" if level == _P_ADD else f"{lhs}{_BIN_SYMBOL[e.op]}{rhs}"


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)"
    r"|(?P<op>\*\*|[()+\-*/]))"
)

_FUNCTIONS = {"sin", "cos", "exp", "sqrt", "log"}


def _tokenize_infix(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            raise ParseError(f"unexpected character {stripped[0]!r}", pos)
        if m.lastgroup is None:  # pure whitespace tail
            break
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    return tokens


def parse_infix(text: str) -> Expr:
    """Parse infix text with ``+ - * / **``, function calls, and parentheses."""
    tokens = _tokenize_infix(text)
    if not tokens:
        raise ParseError("empty input", 0)
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else (None, None, len(text))

    def expect(op: str):
        nonlocal pos
        kind, val, at = peek()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r}", at)
        pos += 1

    def parse_sum() -> Expr:
        nonlocal pos
        node = parse_term()
        while True:
            kind, val, _ = peek()
            if kind == "op" and val in ("+", "-"):
                pos += 1
                node = binary(_SYMBOL_BIN[val], node, parse_term())
            else:
                return node

    def parse_term() -> Expr:
        nonlocal pos
        node = parse_factor()
        while True:
            kind, val, _ = peek()
            if kind == "op" and val in ("*", "/"):
                pos += 1
                node = binary(_SYMBOL_BIN[val], node, parse_factor())
            else:
                return node

    def parse_factor() -> Expr:
        nonlocal pos
        kind, val, at = peek()
        if kind == "op" and val == "-":
            pos += 1
            nkind, nval, _ = peek()
            follow = tokens[pos + 1] if pos + 1 < len(tokens) else (None, None, 0)
            if nkind == "num" and not (follow[0] == "op" and follow[1] == "**"):
                # fold the sign into a bare literal, unless ** grabs it first
                pos += 1
                return _literal_const("-" + nval)
            return neg(parse_factor())
        return parse_power()

    def parse_power() -> Expr:
        nonlocal pos
        node = parse_atom()
        kind, val, _ = peek()
        if kind == "op" and val == "**":
            pos += 1
            return binary("pow", node, parse_factor())  # right-associative
        return node

    def parse_atom() -> Expr:
        nonlocal pos
        kind, val, at = peek()
        if kind == "num":
            pos += 1
            return _literal_const(val)
        if kind == "name":
            pos += 1
            if val == "y":
                return Y
            if val in _FUNCTIONS:
                expect("(")
                arg = parse_sum()
                expect(")")
                return unary(val, arg)
            raise ParseError(f"unknown identifier {val!r}", at)
        if kind == "op" and val == "(":
            pos += 1
            node = parse_sum()
            expect(")")
            return node
        raise ParseError("expected a value", at)

    root = parse_sum()
    if pos != len(tokens):
        raise ParseError(f"unexpected trailing input {tokens[pos][1]!r}", tokens[pos][2])
    return root


# ---------------------------------------------------------------------------
# Skeletons
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Skeleton:
    """Expression with every constant replaced by a placeholder leaf.

    ``key`` is the space-joined prefix string; equal keys mean equal
    skeletons, which is what corpus deduplication hashes on.
    """

    tree: Expr
    key: str = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "key", " ".join(to_prefix(self.tree)))

    def n_constants(self) -> int:
        return sum(1 for node in self.tree.walk() if node.kind == "hole")


def skeletonize(e: Expr) -> tuple[Skeleton, list[float]]:
    """Replace constants by placeholders; constants returned in pre-order."""
    constants: list[float] = []

    def strip(node: Expr) -> Expr:
        if node.kind == "const":
            constants.append(node.value)
            return HOLE
        if node.is_leaf:
            return node
        return Expr(node.kind, op=node.op, children=tuple(strip(c) for c in node.children))

    return Skeleton(strip(e)), constants


def substitute(skeleton: Skeleton, constants: Sequence[float]) -> Expr:
    """Fill placeholders (pre-order) with the given constants."""
    values = list(constants)
    pos = 0

    def fill(node: Expr) -> Expr:
        nonlocal pos
        if node.kind == "hole":
            if pos >= len(values):
                raise ExprError("not enough constants for skeleton")
            v = values[pos]
            pos += 1
            return const(v)
        if node.is_leaf:
            return node
        return Expr(node.kind, op=node.op, children=tuple(fill(c) for c in node.children))

    filled = fill(skeleton.tree)
    if pos != len(values):
        raise ExprError(f"skeleton takes {pos} constants, got {len(values)}")
    return filled


def skeleton_from_key(key: str) -> Skeleton:
    """Rebuild a skeleton from its prefix key string."""
    return Skeleton(parse_prefix(key.split(), allow_holes=True))
