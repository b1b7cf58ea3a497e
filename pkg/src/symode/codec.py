"""Input and target encodings for the sequence-to-sequence model.

Inputs: every observed (t, y) pair becomes one row of 128 binary
features, the raw IEEE-754 binary64 bit patterns of t and y
(most-significant bit first).  A learned linear map replaces the usual
token embedding table, so arbitrary magnitudes (and even NaN/inf) are
representable without normalization.

Targets: expressions are tokenized on the symbol level.  Operators and
the variable are one-hot rows; a constant c is a *two-hot* row putting
weights alpha, beta on the neighboring grid tokens x_i <= c < x_{i+1}
with alpha*x_i + beta*x_{i+1} = c, alpha + beta = 1 -- a lossless
encoding of continuous values on the grid range.  Decoding inverts the
scheme from logits: pick the argmax grid token and its stronger
neighbor, renormalize their softmax masses, and blend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .expr import (
    BINARY_OPS,
    UNARY_OPS,
    ParseError,
    format_constant,
    parse_prefix,
)

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"

N_INPUT_BITS = 128


class EncodingError(ValueError):
    """Token or constant not representable in the vocabulary."""


@dataclass(frozen=True)
class Vocabulary:
    """Token inventory: specials, operators, the variable, constant grid.

    Grid tokens are spelled ``c:<value>`` and sit on an equidistant grid
    from grid_low to grid_high inclusive.
    """

    grid_low: float = -10.0
    grid_high: float = 10.0
    grid_size: int = 21

    def __post_init__(self):
        if self.grid_size < 2 or not self.grid_low < self.grid_high:
            raise ValueError("constant grid needs >= 2 increasing points")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.grid_low, self.grid_high, self.grid_size)

    @property
    def tokens(self) -> tuple[str, ...]:
        grid = [f"c:{format_constant(v)}" for v in self.grid]
        return (PAD, BOS, EOS, *BINARY_OPS, *UNARY_OPS, "y", *grid)

    def __len__(self) -> int:
        return 3 + len(BINARY_OPS) + len(UNARY_OPS) + 1 + self.grid_size

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return 1

    @property
    def eos_id(self) -> int:
        return 2

    @property
    def first_grid_id(self) -> int:
        return 3 + len(BINARY_OPS) + len(UNARY_OPS) + 1

    def id_of(self, token: str) -> int:
        try:
            return self.tokens.index(token)
        except ValueError:
            raise EncodingError(f"unknown token {token!r}") from None

    def is_grid_id(self, token_id: int) -> bool:
        return self.first_grid_id <= token_id < self.first_grid_id + self.grid_size

    def grid_value(self, token_id: int) -> float:
        if not self.is_grid_id(token_id):
            raise EncodingError(f"token id {token_id} is not a constant grid token")
        return float(self.grid[token_id - self.first_grid_id])

    def to_json_dict(self) -> dict:
        return {
            "grid_low": self.grid_low,
            "grid_high": self.grid_high,
            "grid_size": self.grid_size,
            "tokens": list(self.tokens),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Vocabulary":
        vocab = cls(
            grid_low=float(d["grid_low"]),
            grid_high=float(d["grid_high"]),
            grid_size=int(d["grid_size"]),
        )
        if "tokens" in d and list(vocab.tokens) != list(d["tokens"]):
            raise EncodingError("serialized token list does not match this build")
        return vocab


DEFAULT_VOCAB = Vocabulary()


# ---------------------------------------------------------------------------
# Input side: IEEE-754 bits
# ---------------------------------------------------------------------------

def encode_input(points: np.ndarray) -> np.ndarray:
    """(n, 2) array of (t, y) pairs -> (n, 128) array of 0/1 bit features.

    Each coordinate contributes its 64 binary64 bits, MSB first; non-finite
    values are valid inputs and encode to their IEEE-754 patterns.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError("expected an (n, 2) array of (t, y) pairs")
    big_endian = np.ascontiguousarray(points, dtype=">f8")
    raw = big_endian.view(np.uint8).reshape(len(points), 16)
    return np.unpackbits(raw, axis=1)


def decode_input_bits(bits: np.ndarray) -> np.ndarray:
    """Inverse of :func:`encode_input`; used to verify the bijection."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.ndim != 2 or bits.shape[1] != N_INPUT_BITS:
        raise ValueError("expected an (n, 128) bit array")
    raw = np.packbits(bits, axis=1)
    return raw.view(">f8").astype(np.float64)


# ---------------------------------------------------------------------------
# Target side: two-hot constants
# ---------------------------------------------------------------------------

def two_hot(c: float, vocab: Vocabulary = DEFAULT_VOCAB) -> tuple[int, float, float]:
    """Cell index i and weights (alpha, beta) with alpha*x_i + beta*x_{i+1} = c.

    Exact grid points give alpha = 1; the upper boundary maps into the
    last cell with beta = 1.  Values outside [x_1, x_m] raise.
    """
    grid = vocab.grid
    if not (grid[0] <= c <= grid[-1]):
        raise EncodingError(f"constant {c!r} outside the grid [{grid[0]}, {grid[-1]}]")
    spacing = (vocab.grid_high - vocab.grid_low) / (vocab.grid_size - 1)
    i = int(math.floor((c - vocab.grid_low) / spacing))
    i = min(max(i, 0), vocab.grid_size - 2)
    if c >= grid[i + 1]:  # guard the floor against rounding at cell edges
        i = min(i + 1, vocab.grid_size - 2)
    alpha = (grid[i + 1] - c) / (grid[i + 1] - grid[i])
    alpha = min(max(alpha, 0.0), 1.0)
    return i, alpha, 1.0 - alpha


@dataclass
class TargetEncoding:
    """Per-position probability rows plus decoder-input blend descriptors.

    rows[k] sums to 1 with at most two nonzero entries.  blend_ids[k]
    and blend_weights[k] describe the decoder input embedding for the
    token at position k: w0*embed(id0) + w1*embed(id1) (one-hot tokens
    use (id, pad) with weights (1, 0)).
    """

    rows: np.ndarray  # (L, V) float64
    blend_ids: np.ndarray  # (L, 2) int64
    blend_weights: np.ndarray  # (L, 2) float64

    def __len__(self) -> int:
        return len(self.rows)


def _one_hot_row(token_id: int, n: int) -> np.ndarray:
    row = np.zeros(n)
    row[token_id] = 1.0
    return row


def encode_target(tokens: Sequence[str], vocab: Vocabulary = DEFAULT_VOCAB) -> TargetEncoding:
    """BOS + one row per prefix token + EOS; constants become two-hot rows."""
    n = len(vocab)
    rows, ids, weights = [], [], []

    def push(token_id: int, row=None, pair=None):
        rows.append(_one_hot_row(token_id, n) if row is None else row)
        if pair is None:
            ids.append((token_id, vocab.pad_id))
            weights.append((1.0, 0.0))
        else:
            ids.append(pair[0])
            weights.append(pair[1])

    push(vocab.bos_id)
    symbol_ids = {tok: i for i, tok in enumerate(vocab.tokens)}
    for tok in tokens:
        if tok in symbol_ids and not tok.startswith("c:"):
            push(symbol_ids[tok])
            continue
        try:
            c = float(tok)
        except ValueError:
            raise EncodingError(f"unknown token {tok!r}") from None
        i, alpha, beta = two_hot(c, vocab)
        lo = vocab.first_grid_id + i
        row = np.zeros(n)
        row[lo] = alpha
        row[lo + 1] = beta
        push(lo, row=row, pair=((lo, lo + 1), (alpha, beta)))
    push(vocab.eos_id)
    return TargetEncoding(
        rows=np.array(rows),
        blend_ids=np.array(ids, dtype=np.int64),
        blend_weights=np.array(weights),
    )


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits)
    e = np.exp(z)
    return e / e.sum()


def decode_step(logits: np.ndarray, vocab: Vocabulary = DEFAULT_VOCAB) -> str | float:
    """One decoding step: a token spelling, or a blended constant value.

    Grid-token argmax: pick the larger-logit neighbor, renormalize the
    two softmax masses to weights alpha, beta, return alpha*x_i + beta*x_n.
    """
    logits = np.asarray(logits, dtype=np.float64)
    best = int(np.argmax(logits))
    if not vocab.is_grid_id(best):
        return vocab.tokens[best]
    lo, hi = vocab.first_grid_id, vocab.first_grid_id + vocab.grid_size - 1
    if best == lo:
        other = best + 1
    elif best == hi:
        other = best - 1
    else:
        other = best - 1 if logits[best - 1] > logits[best + 1] else best + 1
    probs = _softmax(logits)
    p_best, p_other = probs[best], probs[other]
    total = p_best + p_other
    alpha = p_best / total if total > 0 else 1.0
    return alpha * vocab.grid_value(best) + (1.0 - alpha) * vocab.grid_value(other)


def decode_sequence(
    logit_matrix: np.ndarray, vocab: Vocabulary = DEFAULT_VOCAB
) -> tuple[list[str], bool]:
    """Apply decode_step row by row until EOS.

    Returns (prefix tokens, terminated); constants are spelled as decimal
    literals so the list feeds straight into prefix parsing.  A missing
    EOS flags the sequence as unterminated.
    """
    tokens: list[str] = []
    for row in np.asarray(logit_matrix, dtype=np.float64):
        out = decode_step(row, vocab)
        if isinstance(out, float):
            tokens.append(format_constant(out, is_int=float(out).is_integer()))
            continue
        if out == EOS:
            return tokens, True
        tokens.append(out)
    return tokens, False


def tokens_to_expr(tokens: Sequence[str]):
    """Parse decoded prefix tokens; (expr, None) or (None, reason)."""
    if not tokens:
        return None, "empty sequence"
    try:
        return parse_prefix(tokens), None
    except ParseError as exc:
        return None, str(exc)
