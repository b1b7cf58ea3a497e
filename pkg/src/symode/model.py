"""Encoder-decoder attention model from bit-encoded trajectories to expressions.

The encoder consumes 128-bit IEEE-754 rows through a learned linear map
(replacing a token embedding table) plus learned positions.  The decoder
embeds each target token as a weighted blend of up to two vocabulary
embeddings, so two-hot constants enter teacher forcing exactly as
alpha*embed(x_i) + beta*embed(x_{i+1}); the same blending feeds decoded
constants back during autoregressive inference.  Training minimizes
cross-entropy against the (possibly two-hot) target rows.

Checkpoints are a single binary blob: an 8-byte magic, a JSON header
(format version, architecture, vocabulary, tensor index), then raw
little-endian tensor payloads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .codec import (
    N_INPUT_BITS,
    TargetEncoding,
    Vocabulary,
    encode_input,
    encode_target,
    tokens_to_expr,
)
from .expr import Expr, format_constant
from .seeding import derive_rng

CHECKPOINT_MAGIC = b"SYMODEM1"


@dataclass(frozen=True)
class ArchConfig:
    """Network dimensions; defaults are the desk-scale configuration."""

    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    d_model: int = 128
    d_ff: int = 512
    activation: str = "gelu"
    dropout: float = 0.0
    max_src_len: int = 1024
    max_tgt_len: int = 64

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")
        if min(self.enc_layers, self.dec_layers, self.max_src_len, self.max_tgt_len) < 1:
            raise ValueError("layers and maximum lengths must be >= 1")

    def to_json_dict(self) -> dict:
        return {
            "enc_layers": self.enc_layers,
            "dec_layers": self.dec_layers,
            "heads": self.heads,
            "d_model": self.d_model,
            "d_ff": self.d_ff,
            "activation": self.activation,
            "dropout": self.dropout,
            "max_src_len": self.max_src_len,
            "max_tgt_len": self.max_tgt_len,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ArchConfig":
        return cls(
            enc_layers=int(d["enc_layers"]),
            dec_layers=int(d["dec_layers"]),
            heads=int(d["heads"]),
            d_model=int(d["d_model"]),
            d_ff=int(d["d_ff"]),
            activation=d.get("activation", "gelu"),
            dropout=float(d.get("dropout", 0.0)),
            max_src_len=int(d["max_src_len"]),
            max_tgt_len=int(d["max_tgt_len"]),
        )


DESK_ARCH = ArchConfig()
# Full-scale reference dimensions; instantiable, but training it is out of
# desk scope.
PAPER_ARCH = ArchConfig(enc_layers=6, dec_layers=6, heads=16, d_model=512, d_ff=2048)


class Seq2SeqModel(nn.Module):
    """Dense-attention encoder-decoder over the expression vocabulary."""

    def __init__(self, arch: ArchConfig, vocab: Vocabulary):
        super().__init__()
        self.arch = arch
        self.vocab = vocab
        d = arch.d_model
        self.bit_proj = nn.Linear(N_INPUT_BITS, d)
        self.src_pos = nn.Embedding(arch.max_src_len, d)
        self.tok_emb = nn.Embedding(len(vocab), d)
        self.tgt_pos = nn.Embedding(arch.max_tgt_len, d)
        enc_layer = nn.TransformerEncoderLayer(
            d, arch.heads, arch.d_ff, dropout=arch.dropout,
            activation=arch.activation, batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(enc_layer, arch.enc_layers)
        dec_layer = nn.TransformerDecoderLayer(
            d, arch.heads, arch.d_ff, dropout=arch.dropout,
            activation=arch.activation, batch_first=True,
        )
        self.decoder = nn.TransformerDecoder(dec_layer, arch.dec_layers)
        self.out_proj = nn.Linear(d, len(vocab))

    def encode(self, src_bits: torch.Tensor, src_pad_mask: torch.Tensor | None = None):
        n = src_bits.shape[1]
        if n > self.arch.max_src_len:
            raise ValueError(f"input length {n} exceeds max_src_len {self.arch.max_src_len}")
        src_bits = src_bits.to(self.bit_proj.weight.dtype)
        pos = torch.arange(n, device=src_bits.device)
        x = self.bit_proj(src_bits) + self.src_pos(pos)
        return self.encoder(x, src_key_padding_mask=src_pad_mask)

    def decode(
        self,
        memory: torch.Tensor,
        blend_ids: torch.Tensor,
        blend_weights: torch.Tensor,
        tgt_pad_mask: torch.Tensor | None = None,
        memory_pad_mask: torch.Tensor | None = None,
    ):
        t = blend_ids.shape[1]
        if t > self.arch.max_tgt_len:
            raise ValueError(f"target length {t} exceeds max_tgt_len {self.arch.max_tgt_len}")
        blend_weights = blend_weights.to(self.tok_emb.weight.dtype)
        emb = (self.tok_emb(blend_ids) * blend_weights.unsqueeze(-1)).sum(dim=2)
        emb = emb + self.tgt_pos(torch.arange(t, device=blend_ids.device))
        causal = torch.triu(
            torch.ones(t, t, dtype=torch.bool, device=blend_ids.device), diagonal=1
        )
        h = self.decoder(
            emb,
            memory,
            tgt_mask=causal,
            tgt_key_padding_mask=tgt_pad_mask,
            memory_key_padding_mask=memory_pad_mask,
        )
        return self.out_proj(h)

    def forward(self, src_bits, blend_ids, blend_weights, src_pad_mask=None, tgt_pad_mask=None):
        memory = self.encode(src_bits, src_pad_mask)
        return self.decode(memory, blend_ids, blend_weights, tgt_pad_mask, src_pad_mask)


def init_model(arch: ArchConfig, vocab: Vocabulary, seed: int = 0) -> Seq2SeqModel:
    """Deterministic initialization: same (arch, seed) gives identical weights."""
    torch.manual_seed(seed)
    return Seq2SeqModel(arch, vocab)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def soft_cross_entropy(
    logits: torch.Tensor, target_rows: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    """Mean cross-entropy between target rows and softmax(logits).

    ``target_rows`` may be soft (two-hot); positions with mask False
    (padding) do not contribute.  All-masked input yields exactly 0.
    """
    if logits.shape != target_rows.shape:
        raise ValueError(f"shape mismatch: {tuple(logits.shape)} vs {tuple(target_rows.shape)}")
    logp = F.log_softmax(logits, dim=-1)
    ce = -(target_rows.to(logp.dtype) * logp).sum(dim=-1)
    m = mask.to(ce.dtype)
    total = m.sum()
    if total.item() == 0:
        return logits.sum() * 0.0
    return (ce * m).sum() / total


def token_accuracy(logits: torch.Tensor, target_rows: torch.Tensor, mask: torch.Tensor) -> float:
    """Teacher-forced next-token accuracy (argmax vs argmax of the target row)."""
    pred = logits.argmax(dim=-1)
    want = target_rows.argmax(dim=-1)
    hits = ((pred == want) & mask).sum().item()
    total = mask.sum().item()
    return hits / total if total else 0.0


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

def collate_targets(encodings: list[TargetEncoding], vocab: Vocabulary):
    """Teacher-forcing batch: decoder inputs are positions [0, L-2], targets [1, L-1].

    Returns (blend_ids, blend_weights, target_rows, mask) with shapes
    (B, T, 2), (B, T, 2), (B, T, V), (B, T); padded positions carry PAD
    one-hot rows and mask False.
    """
    n_vocab = len(vocab)
    t_max = max(len(enc) for enc in encodings) - 1
    b = len(encodings)
    ids = np.full((b, t_max, 2), vocab.pad_id, dtype=np.int64)
    weights = np.zeros((b, t_max, 2))
    weights[:, :, 0] = 1.0
    rows = np.zeros((b, t_max, n_vocab))
    rows[:, :, vocab.pad_id] = 1.0
    mask = np.zeros((b, t_max), dtype=bool)
    for i, enc in enumerate(encodings):
        t = len(enc) - 1
        ids[i, :t] = enc.blend_ids[:-1]
        weights[i, :t] = enc.blend_weights[:-1]
        rows[i, :t] = enc.rows[1:]
        mask[i, :t] = True
    return (
        torch.from_numpy(ids),
        torch.from_numpy(weights),
        torch.from_numpy(rows),
        torch.from_numpy(mask),
    )


def subsample_indices(n_grid: int, n_points: int, mode: str, rng: np.random.Generator):
    if n_points > n_grid:
        raise ValueError("cannot keep more points than the grid provides")
    if mode == "equidistant":
        return np.round(np.linspace(0, n_grid - 1, n_points)).astype(int)
    if mode == "random":
        return np.sort(rng.choice(n_grid, size=n_points, replace=False))
    raise ValueError(f"unknown subsampling mode {mode!r}")


def observed_points(
    times: np.ndarray,
    values: np.ndarray,
    n_points: int,
    sigma: float,
    mode: str,
    rng: np.random.Generator,
) -> np.ndarray:
    """Subsample a stored trajectory and apply multiplicative Gaussian noise."""
    idx = subsample_indices(len(times), n_points, mode, rng)
    y = values[idx] * rng.normal(1.0, sigma, size=n_points)
    return np.stack([times[idx], y], axis=1)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    """Optimization schedule and input augmentation."""

    batch_size: int = 32
    lr: float = 3e-4
    warmup_steps: int = 200
    epochs: int = 50
    seed: int = 0
    noise_sigma: float = 0.0
    n_points: int = 256
    subsample: str = "equidistant"  # or "random"
    grad_clip: float = 1.0
    threads: int = 1
    stop_token_acc: float | None = None

    def __post_init__(self):
        if self.warmup_steps < 0 or self.noise_sigma < 0:
            raise ValueError("warmup_steps and noise_sigma must be >= 0")
        if self.subsample not in ("equidistant", "random"):
            raise ValueError("subsample must be 'equidistant' or 'random'")

    def to_json_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "lr": self.lr,
            "warmup_steps": self.warmup_steps,
            "epochs": self.epochs,
            "seed": self.seed,
            "noise_sigma": self.noise_sigma,
            "n_points": self.n_points,
            "subsample": self.subsample,
            "grad_clip": self.grad_clip,
            "threads": self.threads,
            "stop_token_acc": self.stop_token_acc,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "TrainConfig":
        kw = {k: d[k] for k in cls().to_json_dict() if k in d}
        return cls(**kw)


def _batch_bits(samples, epoch: int, cfg: TrainConfig, seed_tag: str) -> torch.Tensor:
    mats = []
    for rec_id, times, values, _enc in samples:
        rng = derive_rng(cfg.seed, seed_tag, epoch, rec_id)
        pts = observed_points(times, values, cfg.n_points, cfg.noise_sigma, cfg.subsample, rng)
        mats.append(encode_input(pts))
    return torch.from_numpy(np.stack(mats).astype(np.float32))


def _corpus_samples(manifest, vocab: Vocabulary, max_tgt_len: int):
    samples = []
    for rec in manifest.records:
        enc = encode_target(rec.prefix, vocab)
        if len(enc) > max_tgt_len:
            raise ValueError(
                f"record {rec.id} target length {len(enc)} exceeds max_tgt_len {max_tgt_len}"
            )
        times, values = manifest.trajectory(rec)
        samples.append((rec.id, times, values, enc))
    return samples


def evaluate_token_accuracy(model: Seq2SeqModel, samples, cfg: TrainConfig) -> float:
    """Teacher-forced accuracy over a sample list, with a fixed input view."""
    model.eval()
    hits = total = 0
    with torch.no_grad():
        for start in range(0, len(samples), cfg.batch_size):
            chunk = samples[start : start + cfg.batch_size]
            bits = _batch_bits(chunk, -1, cfg, "eval-aug")
            ids, weights, rows, mask = collate_targets([s[3] for s in chunk], model.vocab)
            logits = model(bits, ids, weights)
            pred = logits.argmax(dim=-1)
            want = rows.argmax(dim=-1)
            hits += ((pred == want) & mask).sum().item()
            total += mask.sum().item()
    model.train()
    return hits / total if total else 0.0


def train(
    model: Seq2SeqModel,
    manifest,
    cfg: TrainConfig,
    log_path: str | Path | None = None,
) -> dict:
    """Mini-batch training with linear warmup then constant learning rate.

    Deterministic for fixed (model init, data, config): single-threaded
    torch, seeded shuffling, and per-(epoch, record) augmentation streams.
    Returns a metrics dict; optionally writes a (step, loss, token_acc) CSV.
    """
    if not manifest.records:
        raise ValueError("training corpus is empty")
    torch.manual_seed(cfg.seed)
    torch.set_num_threads(cfg.threads)
    samples = _corpus_samples(manifest, model.vocab, model.arch.max_tgt_len)

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    schedule = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda step: min(1.0, (step + 1) / max(1, cfg.warmup_steps))
    )
    history: list[tuple[int, float, float]] = []
    step = 0
    final_acc = 0.0
    stopped_epoch = cfg.epochs
    model.train()
    for epoch in range(cfg.epochs):
        order = derive_rng(cfg.seed, "order", epoch).permutation(len(samples))
        for start in range(0, len(order), cfg.batch_size):
            chunk = [samples[i] for i in order[start : start + cfg.batch_size]]
            bits = _batch_bits(chunk, epoch, cfg, "aug")
            ids, weights, rows, mask = collate_targets([s[3] for s in chunk], model.vocab)
            logits = model(bits, ids, weights)
            loss = soft_cross_entropy(logits, rows, mask)
            if not math.isfinite(loss.item()):
                raise RuntimeError(
                    f"non-finite loss at step {step} (epoch {epoch}); "
                    f"records {[s[0] for s in chunk]}"
                )
            optimizer.zero_grad()
            loss.backward()
            if cfg.grad_clip > 0:
                nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            optimizer.step()
            schedule.step()
            history.append((step, loss.item(), token_accuracy(logits, rows, mask)))
            step += 1
        if cfg.stop_token_acc is not None:
            final_acc = evaluate_token_accuracy(model, samples, cfg)
            if final_acc >= cfg.stop_token_acc:
                stopped_epoch = epoch + 1
                break
    if cfg.stop_token_acc is None:
        final_acc = evaluate_token_accuracy(model, samples, cfg)
    model.eval()
    if log_path is not None:
        with open(log_path, "w") as fh:
            fh.write("step,loss,token_acc\n")
            for s, l, a in history:
                fh.write(f"{s},{l:.6f},{a:.6f}\n")
    return {
        "steps": len(history),
        "history": history,
        "final_token_acc": final_acc,
        "stopped_epoch": stopped_epoch,
    }


# ---------------------------------------------------------------------------
# Beam search
# ---------------------------------------------------------------------------

@dataclass
class Candidate:
    """One decoded hypothesis; score is the length-normalized log probability."""

    tokens: list[str]
    score: float
    log_prob: float
    terminated: bool
    expr: Expr | None = None
    parse_error: str | None = None


class _Beam:
    __slots__ = ("ids", "weights", "emitted", "logp")

    def __init__(self, ids, weights, emitted, logp):
        self.ids = ids  # list of (id, id)
        self.weights = weights  # list of (w, w)
        self.emitted = emitted  # list of token spellings
        self.logp = logp


def _finish(beam: _Beam, terminated: bool) -> Candidate:
    length = len(beam.emitted) + (1 if terminated else 0)
    score = beam.logp / max(1, length)
    tokens = list(beam.emitted)
    expr, err = tokens_to_expr(tokens)
    if not terminated and err is None:
        err = "unterminated"
    return Candidate(
        tokens=tokens,
        score=score,
        log_prob=beam.logp,
        terminated=terminated,
        expr=expr,
        parse_error=err,
    )


def beam_search(
    model: Seq2SeqModel,
    src_bits: np.ndarray,
    width: int = 32,
    max_len: int | None = None,
) -> list[Candidate]:
    """Length-normalized beam search; width 1 is greedy decoding.

    Constants are scored through their grid-token logits; once a grid
    token is chosen, its value is decoded from that beam's logits (larger
    -logit neighbor, pair-renormalized softmax weights) and fed back as
    the blended embedding.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    vocab = model.vocab
    if max_len is None:
        max_len = model.arch.max_tgt_len - 1
    max_len = min(max_len, model.arch.max_tgt_len - 1)
    first_grid = vocab.first_grid_id
    last_grid = first_grid + vocab.grid_size - 1

    model.eval()
    with torch.no_grad():
        bits = torch.from_numpy(np.asarray(src_bits, dtype=np.float32))[None]
        memory = model.encode(bits)
        alive = [_Beam([(vocab.bos_id, vocab.pad_id)], [(1.0, 0.0)], [], 0.0)]
        finished: list[Candidate] = []
        for _ in range(max_len):
            if not alive or len(finished) >= width:
                break
            ids = torch.tensor([b.ids for b in alive], dtype=torch.long)
            weights = torch.tensor([b.weights for b in alive], dtype=torch.float32)
            mem = memory.expand(len(alive), -1, -1)
            logits = model.decode(mem, ids, weights)[:, -1, :]
            logp = F.log_softmax(logits.double(), dim=-1)
            logp[:, vocab.pad_id] = -math.inf
            logp[:, vocab.bos_id] = -math.inf
            totals = torch.tensor([b.logp for b in alive], dtype=torch.float64)[:, None] + logp
            flat = totals.flatten()
            k = min(2 * width, flat.numel())
            top = torch.topk(flat, k)
            next_alive: list[_Beam] = []
            n_vocab = len(vocab)
            for score, pos in zip(top.values.tolist(), top.indices.tolist()):
                if score == -math.inf:
                    break
                b_idx, tok = divmod(pos, n_vocab)
                parent = alive[b_idx]
                if tok == vocab.eos_id:
                    if len(finished) < width:
                        done = _Beam(parent.ids, parent.weights, parent.emitted, score)
                        finished.append(_finish(done, terminated=True))
                    continue
                if len(next_alive) >= width:
                    continue
                if first_grid <= tok <= last_grid:
                    row = logits[b_idx].double()
                    if tok == first_grid:
                        other = tok + 1
                    elif tok == last_grid:
                        other = tok - 1
                    else:
                        other = tok - 1 if row[tok - 1] > row[tok + 1] else tok + 1
                    probs = torch.softmax(row, dim=-1)
                    pair = probs[tok] + probs[other]
                    alpha = (probs[tok] / pair).item() if pair.item() > 0 else 1.0
                    value = alpha * vocab.grid_value(tok) + (1 - alpha) * vocab.grid_value(other)
                    spelling = format_constant(value, is_int=float(value).is_integer())
                    blend_id, blend_w = (tok, other), (alpha, 1 - alpha)
                else:
                    spelling = vocab.tokens[tok]
                    blend_id, blend_w = (tok, vocab.pad_id), (1.0, 0.0)
                next_alive.append(
                    _Beam(
                        parent.ids + [blend_id],
                        parent.weights + [blend_w],
                        parent.emitted + [spelling],
                        score,
                    )
                )
            alive = next_alive
        if len(finished) < width:
            finished.extend(_finish(b, terminated=False) for b in alive)
    finished.sort(key=lambda c: c.score, reverse=True)
    return finished[:width]


def predict_candidates(
    model: Seq2SeqModel,
    times: np.ndarray,
    values: np.ndarray,
    width: int = 32,
    max_len: int | None = None,
) -> list[Candidate]:
    """Beam-search candidates for raw (t, y) observations."""
    bits = encode_input(np.stack([times, values], axis=1))
    return beam_search(model, bits, width=width, max_len=max_len)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_model(path: str | Path, model: Seq2SeqModel, meta: dict | None = None):
    """Single-blob checkpoint: magic, JSON header, little-endian tensors."""
    tensors = []
    payloads = []
    offset = 0
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        dtype = arr.dtype.newbyteorder("<")
        raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        tensors.append(
            {"name": name, "dtype": arr.dtype.name, "shape": list(arr.shape), "offset": offset}
        )
        payloads.append(raw)
        offset += len(raw)
    header = {
        "format": 1,
        "arch": model.arch.to_json_dict(),
        "vocab": model.vocab.to_json_dict(),
        "tensors": tensors,
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for raw in payloads:
            fh.write(raw)


def load_model(path: str | Path) -> tuple[Seq2SeqModel, dict]:
    """Rebuild a model bit-compatibly from :func:`save_model` output."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise IOError(f"not a model checkpoint: bad magic {magic!r}")
        size = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(size))
        if header.get("format") != 1:
            raise IOError(f"unsupported checkpoint format {header.get('format')!r}")
        payload = fh.read()
    arch = ArchConfig.from_json_dict(header["arch"])
    vocab = Vocabulary.from_json_dict(header["vocab"])
    model = Seq2SeqModel(arch, vocab)
    state = {}
    for spec in header["tensors"]:
        dtype = np.dtype(spec["dtype"]).newbyteorder("<")
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        start = spec["offset"]
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=start)
        arr = arr.astype(spec["dtype"]).reshape(spec["shape"])
        state[spec["name"]] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    model.eval()
    return model, header["meta"]
