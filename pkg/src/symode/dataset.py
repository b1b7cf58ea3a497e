"""Corpus generation, persistence, statistics, and test-set construction.

Pipeline per corpus: sample a deduplicated skeleton pool; per skeleton
draw up to N_const rule-conforming unique constant sets; per expression
draw up to N_iv initial values; integrate on [0, T]; keep only
status-ok, QC-pass trajectories.  Everything is deterministic in
(config, seed): per-task RNG streams are derived by hashing the seed
with the (skeleton, constant-set, initial-value) index triple, so
results are identical under any parallel schedule.

On disk a dataset is a directory:
  config.json         -- config snapshot, seed, rewrite version, counts
  manifest.jsonl      -- one record per line (see OdeRecord.to_json_dict)
  trajectories.f64le  -- little-endian float64 [times..., values...] blocks;
                         record offsets count float64 elements from the start
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import canon, expr as ex, solver
from .sampler import (
    GenerationConfig,
    GenerationError,
    SkeletonSample,
    resample_constants,
    sample_skeleton_pool,
)
from .seeding import derive_rng
from .solver import SolveConfig, Trajectory, integrate, quality_check

DATASET_FORMAT = 1
MANIFEST_NAME = "manifest.jsonl"
CONFIG_NAME = "config.json"
STORE_NAME = "trajectories.f64le"


@dataclass
class OdeRecord:
    """One training/test instance: expression + initial value + trajectory."""

    id: int
    skeleton_key: str
    infix: str
    prefix: list[str]
    constants: list[float]
    complexity: int
    ops: dict[str, int]
    y0: float
    seed_triple: tuple[int, int, int]
    traj_offset: int = -1
    traj_len: int = 0
    qc_error: float = math.nan
    name: str | None = None

    def expression(self) -> ex.Expr:
        return ex.parse_prefix(self.prefix)

    def to_json_dict(self) -> dict:
        d = {
            "id": self.id,
            "skeleton": self.skeleton_key,
            "infix": self.infix,
            "prefix": self.prefix,
            "constants": self.constants,
            "complexity": self.complexity,
            "ops": self.ops,
            "y0": self.y0,
            "seed": list(self.seed_triple),
            "traj_offset": self.traj_offset,
            "traj_len": self.traj_len,
            "qc_err": self.qc_error,
        }
        if self.name is not None:
            d["name"] = self.name
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "OdeRecord":
        return cls(
            id=int(d["id"]),
            skeleton_key=d["skeleton"],
            infix=d["infix"],
            prefix=list(d["prefix"]),
            constants=[float(v) for v in d["constants"]],
            complexity=int(d["complexity"]),
            ops={k: int(v) for k, v in d["ops"].items()},
            y0=float(d["y0"]),
            seed_triple=tuple(int(v) for v in d["seed"]),
            traj_offset=int(d["traj_offset"]),
            traj_len=int(d["traj_len"]),
            qc_error=float(d["qc_err"]),
            name=d.get("name"),
        )


@dataclass
class DatasetManifest:
    """Records plus everything needed to regenerate them byte-identically."""

    generation: GenerationConfig
    solve: SolveConfig
    seed: int
    n_skeletons: int
    records: list[OdeRecord] = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    rewrite_version: str = canon.REWRITE_VERSION
    store_path: Path | None = None
    _memory: dict[int, tuple[np.ndarray, np.ndarray]] | None = None

    def trajectory(self, rec: OdeRecord) -> tuple[np.ndarray, np.ndarray]:
        """(times, values) for a record, from memory or the binary store."""
        if self._memory is not None and rec.id in self._memory:
            return self._memory[rec.id]
        if self.store_path is None:
            raise ValueError("manifest has no trajectory store attached")
        raw = np.fromfile(
            self.store_path, dtype="<f8", count=2 * rec.traj_len, offset=8 * rec.traj_offset
        )
        if len(raw) != 2 * rec.traj_len:
            raise IOError(f"truncated trajectory store for record {rec.id}")
        return raw[: rec.traj_len].copy(), raw[rec.traj_len :].copy()

    def config_json_dict(self) -> dict:
        return {
            "format": DATASET_FORMAT,
            "seed": self.seed,
            "n_skeletons": self.n_skeletons,
            "rewrite_version": self.rewrite_version,
            "generation": self.generation.to_json_dict(),
            "solve": self.solve.to_json_dict(),
            "counts": self.counts,
        }

    def save(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        offset = 0
        with open(out / STORE_NAME, "wb") as store:
            for rec in self.records:
                times, values = self.trajectory(rec)
                block = np.concatenate([times, values]).astype("<f8")
                store.write(block.tobytes())
                rec.traj_offset = offset
                rec.traj_len = len(times)
                offset += len(block)
        with open(out / MANIFEST_NAME, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.to_json_dict(), sort_keys=True) + "\n")
        with open(out / CONFIG_NAME, "w") as fh:
            json.dump(self.config_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.store_path = out / STORE_NAME
        self._memory = None
        return out

    @classmethod
    def load(cls, in_dir: str | Path) -> "DatasetManifest":
        src = Path(in_dir)
        with open(src / CONFIG_NAME) as fh:
            cfg = json.load(fh)
        if cfg.get("format") != DATASET_FORMAT:
            raise IOError(f"unsupported dataset format {cfg.get('format')!r}")
        records = []
        with open(src / MANIFEST_NAME) as fh:
            for line in fh:
                if line.strip():
                    records.append(OdeRecord.from_json_dict(json.loads(line)))
        return cls(
            generation=GenerationConfig.from_json_dict(cfg["generation"]),
            solve=SolveConfig.from_json_dict(cfg["solve"]),
            seed=int(cfg["seed"]),
            n_skeletons=int(cfg["n_skeletons"]),
            records=records,
            counts=cfg.get("counts", {}),
            rewrite_version=cfg.get("rewrite_version", ""),
            store_path=src / STORE_NAME,
        )


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

_SET_RETRIES = 10  # extra draws per constant set to satisfy uniqueness/stability


def _constants_in_grid(constants, gen_cfg: GenerationConfig) -> bool:
    lo = min(gen_cfg.real_low, gen_cfg.int_low)
    hi = max(gen_cfg.real_high, gen_cfg.int_high)
    return all(lo <= c <= hi for c in constants)


def _draw_expression(
    sample: SkeletonSample,
    gen_cfg: GenerationConfig,
    rng: np.random.Generator,
    seen_sets: set,
    tally,
) -> ex.Expr | None:
    """One rule-conforming, unique, skeleton-stable instantiation (or None)."""
    for _ in range(_SET_RETRIES):
        try:
            inst = resample_constants(sample.skeleton, list(sample.constants), gen_cfg, rng)
        except GenerationError:
            tally("resample-budget")
            return None
        simplified = canon.simplify(inst)
        if simplified is None:
            tally("resample-nonfinite")
            continue
        skeleton, constants = ex.skeletonize(simplified)
        if skeleton.key != sample.key:
            tally("skeleton-drift")
            continue
        key = tuple(constants)
        if key in seen_sets:
            tally("duplicate-constants")
            continue
        if not _constants_in_grid(constants, gen_cfg):
            tally("out-of-grid")
            continue
        seen_sets.add(key)
        return simplified
    return None


def _solve_record(e: ex.Expr, y0: float, solve_cfg: SolveConfig) -> tuple[Trajectory, str]:
    traj = integrate(e, y0, (0.0, solve_cfg.t_end), solve_cfg.n_grid, solve_cfg)
    if traj.status != solver.STATUS_OK:
        return traj, f"solver-{traj.status}"
    passed, max_err = quality_check(traj, e, solve_cfg.qc_threshold)
    traj.qc = "pass" if passed else "fail"
    traj.qc_error = max_err
    if not passed:
        return traj, "qc-fail"
    return traj, "ok"


def generate_dataset(
    gen_cfg: GenerationConfig,
    solve_cfg: SolveConfig,
    n_skeletons: int,
    seed: int,
    out_dir: str | Path | None = None,
    threads: int = 1,
) -> DatasetManifest:
    """Run the full sampling/solving pipeline; optionally persist to disk."""
    pool = sample_skeleton_pool(gen_cfg, n_skeletons, seed)
    failures: dict[str, int] = {}

    def tally(reason: str):
        failures[reason] = failures.get(reason, 0) + 1

    expressions: list[tuple[int, int, ex.Expr]] = []
    for s_idx, sample in enumerate(pool):
        seen_sets: set = set()
        n_sets = gen_cfg.n_constant_sets if sample.skeleton.n_constants() else 1
        for c_idx in range(n_sets):
            rng = derive_rng(seed, "const", s_idx, c_idx)
            e = _draw_expression(sample, gen_cfg, rng, seen_sets, tally)
            if e is not None:
                expressions.append((s_idx, c_idx, e))

    def solve_task(job):
        s_idx, c_idx, iv_idx, e = job
        rng = derive_rng(seed, "iv", s_idx, c_idx, iv_idx)
        y0 = float(rng.uniform(solve_cfg.y0_low, solve_cfg.y0_high))
        traj, outcome = _solve_record(e, y0, solve_cfg)
        return (s_idx, c_idx, iv_idx, e, y0, traj, outcome)

    jobs = [
        (s_idx, c_idx, iv_idx, e)
        for s_idx, c_idx, e in expressions
        for iv_idx in range(gen_cfg.n_initial_values)
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool_exec:
            results = list(pool_exec.map(solve_task, jobs))
    else:
        results = [solve_task(j) for j in jobs]
    results.sort(key=lambda r: (r[0], r[1], r[2]))

    manifest = DatasetManifest(
        generation=gen_cfg, solve=solve_cfg, seed=seed, n_skeletons=n_skeletons
    )
    manifest._memory = {}
    for s_idx, c_idx, iv_idx, e, y0, traj, outcome in results:
        if outcome != "ok":
            tally(outcome)
            continue
        rec_id = len(manifest.records)
        skeleton, constants = ex.skeletonize(e)
        manifest.records.append(
            OdeRecord(
                id=rec_id,
                skeleton_key=skeleton.key,
                infix=ex.to_infix(e),
                prefix=ex.to_prefix(e),
                constants=constants,
                complexity=ex.complexity(e),
                ops=dict(sorted(ex.operator_histogram(e).items())),
                y0=y0,
                seed_triple=(s_idx, c_idx, iv_idx),
                traj_len=len(traj.times),
                qc_error=traj.qc_error,
            )
        )
        manifest._memory[rec_id] = (traj.times, traj.values)
    manifest.counts = {
        "skeletons": len(pool),
        "expressions": len(expressions),
        "records": len(manifest.records),
        "failures": dict(sorted(failures.items())),
    }
    if not manifest.records:
        raise GenerationError(f"empty yield: no solve passed quality control ({failures})")
    if out_dir is not None:
        manifest.save(out_dir)
    return manifest


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

def dataset_stats(manifest: DatasetManifest) -> dict:
    """Complexity histogram, operator totals, trajectory count per skeleton."""
    complexity_hist: dict[int, int] = {}
    op_totals: dict[str, int] = {}
    per_skeleton: dict[str, int] = {}
    for rec in manifest.records:
        complexity_hist[rec.complexity] = complexity_hist.get(rec.complexity, 0) + 1
        for op, n in rec.ops.items():
            op_totals[op] = op_totals.get(op, 0) + n
        per_skeleton[rec.skeleton_key] = per_skeleton.get(rec.skeleton_key, 0) + 1
    return {
        "n_records": len(manifest.records),
        "complexity_hist": {str(k): v for k, v in sorted(complexity_hist.items())},
        "operator_totals": dict(sorted(op_totals.items())),
        "trajectories_per_skeleton": dict(sorted(per_skeleton.items())),
    }


def write_stats(stats: dict, out_dir: str | Path):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "stats.json", "w") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "stats_complexity.csv", "w") as fh:
        fh.write("complexity,count\n")
        for k, v in stats["complexity_hist"].items():
            fh.write(f"{k},{v}\n")
    with open(out / "stats_operators.csv", "w") as fh:
        fh.write("operator,count\n")
        for k, v in stats["operator_totals"].items():
            fh.write(f"{k},{v}\n")


# ---------------------------------------------------------------------------
# Test sets
# ---------------------------------------------------------------------------

def build_large_testset(
    train_manifest: DatasetManifest,
    gen_cfg: GenerationConfig,
    solve_cfg: SolveConfig,
    seed: int,
    target_count: int = 162,
    max_attempts: int | None = None,
    max_per_complexity: int = 10,
) -> DatasetManifest:
    """Held-out set from the training distribution, bias-controlled.

    Rejection sampling enforces: skeletons unseen in training and unique
    within the set, at most ``max_per_complexity`` equations per
    complexity value, solver + QC success.
    """
    train_keys = {rec.skeleton_key for rec in train_manifest.records}
    budget = max_attempts if max_attempts is not None else 1000 * target_count
    used_keys: set[str] = set()
    bucket: dict[int, int] = {}
    manifest = DatasetManifest(
        generation=gen_cfg, solve=solve_cfg, seed=seed, n_skeletons=target_count
    )
    manifest._memory = {}
    failures: dict[str, int] = {}

    def tally(reason):
        failures[reason] = failures.get(reason, 0) + 1

    for attempt in range(budget):
        if len(manifest.records) == target_count:
            break
        rng = derive_rng(seed, "large", attempt)
        from .sampler import decorate, sample_shape  # local import avoids a cycle at module load

        candidate = decorate(sample_shape(gen_cfg, rng), gen_cfg, rng)
        simplified = canon.simplify(candidate)
        if simplified is None or canon.is_constant_expr(simplified):
            tally("rejected-expression")
            continue
        if not canon.in_support(simplified, gen_cfg.binary_op_names, gen_cfg.unary_op_names):
            tally("support")
            continue
        skeleton, constants = ex.skeletonize(simplified)
        if skeleton.key in train_keys or skeleton.key in used_keys:
            tally("duplicate-skeleton")
            continue
        if not _constants_in_grid(constants, gen_cfg):
            tally("out-of-grid")
            continue
        comp = ex.complexity(simplified)
        if bucket.get(comp, 0) >= max_per_complexity:
            tally("complexity-bucket-full")
            continue
        y0 = float(rng.uniform(solve_cfg.y0_low, solve_cfg.y0_high))
        traj, outcome = _solve_record(simplified, y0, solve_cfg)
        if outcome != "ok":
            tally(outcome)
            continue
        used_keys.add(skeleton.key)
        bucket[comp] = bucket.get(comp, 0) + 1
        rec_id = len(manifest.records)
        manifest.records.append(
            OdeRecord(
                id=rec_id,
                skeleton_key=skeleton.key,
                infix=ex.to_infix(simplified),
                prefix=ex.to_prefix(simplified),
                constants=constants,
                complexity=comp,
                ops=dict(sorted(ex.operator_histogram(simplified).items())),
                y0=y0,
                seed_triple=(attempt, 0, 0),
                traj_len=len(traj.times),
                qc_error=traj.qc_error,
            )
        )
        manifest._memory[rec_id] = (traj.times, traj.values)
    if len(manifest.records) < target_count:
        raise GenerationError(
            f"large testset reached {len(manifest.records)}/{target_count} "
            f"after {budget} attempts; rejections: {failures}"
        )
    manifest.counts = {
        "records": len(manifest.records),
        "failures": dict(sorted(failures.items())),
    }
    return manifest


# The built-in curated test set: (name, equation, simplified form, y0).
# The simplified column keeps the printed two-decimal constants; the
# solved/encoded expression is the simplified one.
TEXTBOOK_EQUATIONS: tuple[tuple[str, str, str, float], ...] = (
    ("autonomous Riccati", "0.6*y**2 + 2*y + 0.1", "0.6*y**2 + 2*y + 0.1", -0.2),
    ("autonomous Stuart-Landau", "-2.2/2*y**3 + 1.31*y", "-1.1*y**3 + 1.31*y", 0.1),
    ("autonomous Bernoulli", "-1.3*y + 2.1*y**2.2", "-1.3*y + 2.1*y**2.2", 0.6),
    ("compound interest", "0.1*y", "0.1*y", 4.9),
    ("Newton's law of cooling", "-0.1*(y - 3)", "0.3 - 0.1*y", 4.9),
    ("Logistic equation", "0.23*y*(1 - y)", "0.23*(y - y**2)", 4.9),
    (
        "Logistic equation with harvesting",
        "0.23*y*(1 - 0.33*y) - 0.5",
        "0.23*y - 0.076*y**2 - 0.5",
        3.5,
    ),
    (
        "Logistic equation with harvesting 2",
        "2*y*(1 - y/3) - 0.5",
        "2*y - 0.66*y**2 - 0.5",
        0.7,
    ),
    (
        "Solow-Swan",
        "y**0.5*(0.9*8 - (3 + 2.5)*y**(1 - 0.5))",
        "7.2*y**0.5 - 5.5*y",
        0.1,
    ),
    ("Tank draining", "-sqrt(2*9.81)*(2/9)**2*sqrt(y)", "-0.21*y**0.5", 1.0),
    (
        "Draining water through a funnel",
        "-(0.5**2/4)*sqrt(2*9.81)*(sin(1)/cos(1))**2*y**(-1.5)",
        "-0.67/y**1.5",
        3.0,
    ),
    (
        "velocity of a body thrown vertically upwards",
        "-9.81 - 0.9*y/8.2",
        "-0.1*y - 9.81",
        0.1,
    ),
)


def textbook_testset(solve_cfg: SolveConfig | None = None) -> DatasetManifest:
    """The built-in curated test set, solved and QC-checked."""
    solve_cfg = solve_cfg or SolveConfig()
    manifest = DatasetManifest(
        generation=GenerationConfig(), solve=solve_cfg, seed=0, n_skeletons=0
    )
    manifest._memory = {}
    for idx, (name, _equation, simplified_text, y0) in enumerate(TEXTBOOK_EQUATIONS):
        e = canon.simplify(ex.parse_infix(simplified_text))
        if e is None:
            raise RuntimeError(f"textbook equation {name!r} did not canonicalize")
        traj, outcome = _solve_record(e, y0, solve_cfg)
        if outcome != "ok":
            raise RuntimeError(f"textbook equation {name!r} failed to solve: {outcome}")
        skeleton, constants = ex.skeletonize(e)
        manifest.records.append(
            OdeRecord(
                id=idx,
                skeleton_key=skeleton.key,
                infix=ex.to_infix(e),
                prefix=ex.to_prefix(e),
                constants=constants,
                complexity=ex.complexity(e),
                ops=dict(sorted(ex.operator_histogram(e).items())),
                y0=y0,
                seed_triple=(idx, 0, 0),
                traj_len=len(traj.times),
                qc_error=traj.qc_error,
                name=name,
            )
        )
        manifest._memory[idx] = (traj.times, traj.values)
    manifest.counts = {"records": len(manifest.records), "failures": {}}
    return manifest


def load_equation_list(
    path: str | Path,
    solve_cfg: SolveConfig | None = None,
    seed: int = 0,
    iv_draws: int = 25,
) -> DatasetManifest:
    """Manifest from a text file: one infix expression per line, optional y0.

    Line format ``EXPR`` or ``EXPR, Y0``; blank lines and lines starting
    with '#' are skipped.  Without an explicit y0, initial values are
    drawn from the solve config range until one passes quality control.
    """
    solve_cfg = solve_cfg or SolveConfig()
    manifest = DatasetManifest(
        generation=GenerationConfig(), solve=solve_cfg, seed=seed, n_skeletons=0
    )
    manifest._memory = {}
    failures: dict[str, int] = {}
    with open(path) as fh:
        lines = fh.readlines()
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        text, given_y0 = line, None
        if "," in line:
            head, tail = line.rsplit(",", 1)
            try:
                given_y0 = float(tail)
                text = head
            except ValueError:
                pass  # the comma was not an initial value; parse the whole line
        try:
            e = ex.parse_infix(text)
        except ex.ParseError as exc:
            raise ValueError(f"line {line_no}: {exc}") from exc
        simplified = canon.simplify(e)
        if simplified is None:
            failures[f"line-{line_no}-nonfinite"] = 1
            continue
        rng = derive_rng(seed, "eqlist", line_no)
        candidates = [given_y0] if given_y0 is not None else [
            float(rng.uniform(solve_cfg.y0_low, solve_cfg.y0_high)) for _ in range(iv_draws)
        ]
        kept = None
        for y0 in candidates:
            traj, outcome = _solve_record(simplified, y0, solve_cfg)
            if outcome == "ok":
                kept = (y0, traj)
                break
        if kept is None:
            failures[f"line-{line_no}-unsolvable"] = 1
            continue
        y0, traj = kept
        skeleton, constants = ex.skeletonize(simplified)
        rec_id = len(manifest.records)
        manifest.records.append(
            OdeRecord(
                id=rec_id,
                skeleton_key=skeleton.key,
                infix=ex.to_infix(simplified),
                prefix=ex.to_prefix(simplified),
                constants=constants,
                complexity=ex.complexity(simplified),
                ops=dict(sorted(ex.operator_histogram(simplified).items())),
                y0=y0,
                seed_triple=(line_no, 0, 0),
                traj_len=len(traj.times),
                qc_error=traj.qc_error,
                name=f"line {line_no}",
            )
        )
        manifest._memory[rec_id] = (traj.times, traj.values)
    manifest.counts = {"records": len(manifest.records), "failures": failures}
    return manifest
