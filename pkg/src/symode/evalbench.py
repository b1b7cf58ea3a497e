"""Benchmark protocol: corruption, metrics, candidate selection, reports.

For every (record, noise level, point count): subsample the stored
trajectory at uniformly random time indices, multiply values by
independent Gaussian factors centered on 1, decode candidate equations,
integrate each candidate from the record's initial value and keep the
best R^2 against the noisy observations, then score the selected
equation against the noiseless dense ground truth on the observed span
[0, T] (interpolation) and on the adjacent span [T, T_extra]
(extrapolation, started from the true state at T).

Reported metrics: R^2, L1, L_inf, and the closeness average (fraction of
points with |pred - truth| <= atol + rtol*|truth|).  Non-finite
predictions score as failures (R^2 sentinel -inf).  Zero-variance truth
makes R^2 undefined; such rows are flagged and excluded from medians.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .dataset import DatasetManifest, OdeRecord
from .expr import Expr, complexity, parse_prefix
from .model import Candidate, Seq2SeqModel, predict_candidates
from .seeding import derive_rng
from .solver import STATUS_OK, SolveConfig, Trajectory, integrate, solve_at_times

R2_FAILURE = -math.inf

REGIME_INTERP = "interpolation"
REGIME_EXTRAP = "extrapolation"


class SelectionError(RuntimeError):
    """No candidate could be integrated."""


@dataclass(frozen=True)
class EvalConfig:
    """Noise levels, point counts, closeness tolerances, decoding width."""

    sigmas: tuple[float, ...] = (0.001, 0.005, 0.01, 0.015, 0.02)
    n_points: tuple[int, ...] = (128, 192, 256)
    atol: float = 1e-10
    rtol: float = 0.05
    beam_width: int = 32
    max_len: int | None = None

    def __post_init__(self):
        if any(s < 0 for s in self.sigmas):
            raise ValueError("noise levels must be >= 0")
        if self.atol <= 0 or self.rtol <= 0:
            raise ValueError("closeness tolerances must be positive")

    def to_json_dict(self) -> dict:
        return {
            "sigmas": list(self.sigmas),
            "n_points": list(self.n_points),
            "atol": self.atol,
            "rtol": self.rtol,
            "beam_width": self.beam_width,
            "max_len": self.max_len,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "EvalConfig":
        kw = {}
        if "sigmas" in d:
            kw["sigmas"] = tuple(float(v) for v in d["sigmas"])
        if "n_points" in d:
            kw["n_points"] = tuple(int(v) for v in d["n_points"])
        for k in ("atol", "rtol"):
            if k in d:
                kw[k] = float(d[k])
        if "beam_width" in d:
            kw["beam_width"] = int(d["beam_width"])
        if d.get("max_len") is not None:
            kw["max_len"] = int(d["max_len"])
        return cls(**kw)


# ---------------------------------------------------------------------------
# Corruption
# ---------------------------------------------------------------------------

def corrupt_and_subsample(
    traj_times: np.ndarray,
    traj_values: np.ndarray,
    sigma: float,
    n: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """n uniformly random grid points (time-sorted), multiplicative noise."""
    if n > len(traj_times):
        raise ValueError(f"cannot subsample {n} of {len(traj_times)} points")
    idx = np.sort(rng.choice(len(traj_times), size=n, replace=False))
    factors = rng.normal(1.0, sigma, size=n)
    return traj_times[idx].copy(), traj_values[idx] * factors


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

@dataclass
class MetricResult:
    r2: float
    l1: float
    linf: float
    closeness: float
    flag: str = "ok"  # ok | nonfinite-pred | zero-variance


def metrics(
    pred: np.ndarray, truth: np.ndarray, atol: float = 1e-10, rtol: float = 0.05
) -> MetricResult:
    """R^2, L1, L_inf, closeness average of pred against truth."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or len(pred) < 2:
        raise ValueError("pred and truth must share a length >= 2")
    if not np.all(np.isfinite(truth)):
        raise ValueError("truth values must be finite")
    finite = np.isfinite(pred)
    close = finite & (np.abs(pred - truth) <= atol + rtol * np.abs(truth))
    closeness = float(close.sum() / len(truth))
    if not finite.all():
        return MetricResult(R2_FAILURE, math.inf, math.inf, closeness, "nonfinite-pred")
    diff = pred - truth
    l1 = float(np.sum(np.abs(diff)))
    linf = float(np.max(np.abs(diff)))
    denom = float(np.sum((truth - truth.mean()) ** 2))
    if denom == 0.0:
        return MetricResult(math.nan, l1, linf, closeness, "zero-variance")
    r2 = 1.0 - float(np.sum(diff**2)) / denom
    return MetricResult(r2, l1, linf, closeness)


# ---------------------------------------------------------------------------
# Candidate selection
# ---------------------------------------------------------------------------

def _candidate_r2(e: Expr, t_obs, y_obs, y0: float, solve_cfg: SolveConfig) -> float:
    values, status = solve_at_times(e, y0, 0.0, t_obs, solve_cfg)
    if status != STATUS_OK or not np.all(np.isfinite(values)):
        return R2_FAILURE
    denom = float(np.sum((y_obs - y_obs.mean()) ** 2))
    if denom == 0.0:
        return R2_FAILURE
    return 1.0 - float(np.sum((values - y_obs) ** 2)) / denom


def select_candidate(
    candidates: Sequence[Expr],
    t_obs: np.ndarray,
    y_obs: np.ndarray,
    y0: float,
    solve_cfg: SolveConfig,
) -> tuple[Expr, list[float]]:
    """Integrate every candidate from y0 and keep the best R^2 on the observations."""
    if not candidates:
        raise SelectionError("no parseable candidate")
    scores = [_candidate_r2(e, t_obs, y_obs, y0, solve_cfg) for e in candidates]
    best = int(np.argmax(scores))
    if scores[best] == R2_FAILURE:
        raise SelectionError("every candidate failed to integrate")
    return candidates[best], scores


# ---------------------------------------------------------------------------
# Per-prediction evaluation
# ---------------------------------------------------------------------------

def evaluate_prediction(
    pred: Expr,
    truth_interp: tuple[np.ndarray, np.ndarray],
    truth_extrap: tuple[np.ndarray, np.ndarray],
    y0: float,
    solve_cfg: SolveConfig,
    eval_cfg: EvalConfig,
) -> dict[str, MetricResult]:
    """Metrics per regime against noiseless dense ground truth.

    Interpolation integrates pred from the record's y0 on [0, T];
    extrapolation integrates pred on [T, T_extra] from the true state at
    T, isolating expression quality from accumulated interpolation error.
    """
    out: dict[str, MetricResult] = {}
    t_i, v_i = truth_interp
    interp = integrate(pred, y0, (0.0, solve_cfg.t_end), len(t_i), solve_cfg)
    if interp.status != STATUS_OK:
        out[REGIME_INTERP] = MetricResult(R2_FAILURE, math.inf, math.inf, 0.0, "nonfinite-pred")
    else:
        out[REGIME_INTERP] = metrics(interp.values, v_i, eval_cfg.atol, eval_cfg.rtol)
    t_e, v_e = truth_extrap
    extrap = integrate(
        pred, float(v_i[-1]), (solve_cfg.t_end, solve_cfg.t_extra), len(t_e), solve_cfg
    )
    if extrap.status != STATUS_OK:
        out[REGIME_EXTRAP] = MetricResult(R2_FAILURE, math.inf, math.inf, 0.0, "nonfinite-pred")
    else:
        out[REGIME_EXTRAP] = metrics(extrap.values, v_e, eval_cfg.atol, eval_cfg.rtol)
    return out


# ---------------------------------------------------------------------------
# Predictors
# ---------------------------------------------------------------------------

class Predictor(Protocol):
    def predict(self, record: OdeRecord, t_obs: np.ndarray, y_obs: np.ndarray) -> list[Candidate]:
        ...


class OraclePredictor:
    """Stub that emits the record's own ground-truth expression."""

    def predict(self, record: OdeRecord, t_obs, y_obs) -> list[Candidate]:
        e = record.expression()
        return [
            Candidate(
                tokens=list(record.prefix), score=0.0, log_prob=0.0,
                terminated=True, expr=e, parse_error=None,
            )
        ]


class ModelPredictor:
    """Beam-search candidates from a trained model."""

    def __init__(self, model: Seq2SeqModel, width: int = 32, max_len: int | None = None):
        self.model = model
        self.width = width
        self.max_len = max_len

    def predict(self, record: OdeRecord, t_obs, y_obs) -> list[Candidate]:
        return predict_candidates(self.model, t_obs, y_obs, self.width, self.max_len)


# ---------------------------------------------------------------------------
# Benchmark driver
# ---------------------------------------------------------------------------

EVAL_ROW_FIELDS = (
    "id", "sigma", "n", "regime", "r2", "l1", "linf",
    "isclose", "complexity", "seconds", "status",
)


@dataclass
class EvalRow:
    id: int
    sigma: float
    n: int
    regime: str
    r2: float
    l1: float
    linf: float
    isclose: float
    complexity: int
    seconds: float
    status: str

    def as_csv_dict(self) -> dict:
        return {f: getattr(self, f) for f in EVAL_ROW_FIELDS}


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    config: EvalConfig = field(default_factory=EvalConfig)
    n_cases: int = 0

    def aggregates(self) -> dict:
        """Median of every metric per (sigma, n, regime); flagged R^2 excluded."""
        out: dict[str, dict] = {}
        for sigma in sorted({r.sigma for r in self.rows}):
            for n in sorted({r.n for r in self.rows}):
                for regime in (REGIME_INTERP, REGIME_EXTRAP):
                    rows = [
                        r for r in self.rows
                        if r.sigma == sigma and r.n == n and r.regime == regime
                    ]
                    if not rows:
                        continue
                    r2s = [r.r2 for r in rows if not math.isnan(r.r2)]
                    key = f"sigma={sigma!r},n={n},regime={regime}"
                    out[key] = {
                        "sigma": sigma,
                        "n": n,
                        "regime": regime,
                        "count": len(rows),
                        "median_r2": float(np.median(r2s)) if r2s else math.nan,
                        "median_l1": float(np.median([r.l1 for r in rows])),
                        "median_linf": float(np.median([r.linf for r in rows])),
                        "median_isclose": float(np.median([r.isclose for r in rows])),
                        "median_complexity": float(np.median([r.complexity for r in rows])),
                        "median_seconds": float(np.median([r.seconds for r in rows])),
                    }
        return out


def run_benchmark(
    predictor: Predictor,
    testset: DatasetManifest,
    eval_cfg: EvalConfig,
    seed: int = 0,
) -> EvalReport:
    """Full protocol over a test set; per-record failures become rows, never aborts."""
    solve_cfg = testset.solve
    report = EvalReport(config=eval_cfg)
    extrap_cache: dict[int, tuple[np.ndarray, np.ndarray] | None] = {}
    for rec in testset.records:
        times, values = testset.trajectory(rec)
        if rec.id not in extrap_cache:
            ref = integrate(
                rec.expression(), float(values[-1]),
                (solve_cfg.t_end, solve_cfg.t_extra), solve_cfg.n_grid, solve_cfg,
            )
            extrap_cache[rec.id] = (ref.times, ref.values) if ref.status == STATUS_OK else None
        truth_extrap = extrap_cache[rec.id]
        for sigma in eval_cfg.sigmas:
            for n in eval_cfg.n_points:
                report.n_cases += 1
                rng = derive_rng(seed, "obs", rec.id, repr(float(sigma)), n)
                t_obs, y_obs = corrupt_and_subsample(times, values, sigma, n, rng)
                started = time.perf_counter()
                status = "ok"
                pred = None
                try:
                    cands = predictor.predict(rec, t_obs, y_obs)
                    parseable = [c.expr for c in cands if c.expr is not None]
                    if not parseable:
                        status = "no-candidate"
                    else:
                        pred, _scores = select_candidate(
                            parseable, t_obs, y_obs, rec.y0, solve_cfg
                        )
                except SelectionError:
                    status = "selection-failed"
                seconds = time.perf_counter() - started
                if pred is None or truth_extrap is None:
                    status = status if status != "ok" else "no-extrapolation-reference"
                    for regime in (REGIME_INTERP, REGIME_EXTRAP):
                        report.rows.append(
                            EvalRow(rec.id, sigma, n, regime, R2_FAILURE, math.inf,
                                    math.inf, 0.0, 0, seconds, status)
                        )
                    continue
                per_regime = evaluate_prediction(
                    pred, (times, values), truth_extrap, rec.y0, solve_cfg, eval_cfg
                )
                for regime, m in per_regime.items():
                    report.rows.append(
                        EvalRow(rec.id, sigma, n, regime, m.r2, m.l1, m.linf,
                                m.closeness, complexity(pred), seconds,
                                "ok" if m.flag == "ok" else m.flag)
                    )
    return report


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

def emit_report(report: EvalReport, out_dir: str | Path):
    """rows.csv + aggregates.json + one plot-ready CSV per (regime, metric)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "rows.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=EVAL_ROW_FIELDS)
        writer.writeheader()
        for row in report.rows:
            writer.writerow(row.as_csv_dict())
    aggregates = report.aggregates()
    with open(out / "aggregates.json", "w") as fh:
        json.dump(aggregates, fh, indent=2, sort_keys=True)
        fh.write("\n")
    sigmas = sorted({r.sigma for r in report.rows})
    ns = sorted({r.n for r in report.rows})
    for regime in (REGIME_INTERP, REGIME_EXTRAP):
        for metric in ("r2", "l1", "linf", "isclose", "complexity", "seconds"):
            path = out / f"fig_{regime}_{metric}.csv"
            with open(path, "w") as fh:
                fh.write("sigma," + ",".join(f"n{n}" for n in ns) + "\n")
                for sigma in sigmas:
                    cells = []
                    for n in ns:
                        key = f"sigma={sigma!r},n={n},regime={regime}"
                        agg = aggregates.get(key)
                        cells.append("" if agg is None else repr(agg[f"median_{metric}"]))
                    fh.write(f"{sigma!r}," + ",".join(cells) + "\n")


def load_rows_csv(path: str | Path) -> list[EvalRow]:
    rows = []
    with open(path, newline="") as fh:
        for d in csv.DictReader(fh):
            rows.append(
                EvalRow(
                    id=int(d["id"]), sigma=float(d["sigma"]), n=int(d["n"]),
                    regime=d["regime"], r2=float(d["r2"]), l1=float(d["l1"]),
                    linf=float(d["linf"]), isclose=float(d["isclose"]),
                    complexity=int(d["complexity"]), seconds=float(d["seconds"]),
                    status=d["status"],
                )
            )
    return rows
