"""Numerical integration and the trajectory quality-control filter.

Initial value problems are solved with an explicit embedded
Dormand-Prince 5(4) pair: proportional-integral step-size control
(Hairer's controller), first-same-as-last stage reuse, and a quartic
dense-output polynomial evaluated on the requested grid.  Failures are
reported in-band through ``Trajectory.status`` instead of exceptions:
the corpus pipeline rejects anything the method cannot resolve.

Finite-difference machinery (Fornberg weights, the 9-point first
derivative) supports the quality check: a solution is kept only when
the sup-norm gap between its finite-difference derivative and f
evaluated along it stays below a threshold.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .expr import Expr, compile_fn

STATUS_OK = "ok"
STATUS_NONFINITE = "nonfinite"
STATUS_STEP_FAILURE = "step-failure"
STATUS_BUDGET = "budget-exceeded"


@dataclass(frozen=True)
class SolveConfig:
    """Integration window, grid, tolerances, budgets, and QC threshold."""

    t_end: float = 2.0
    t_extra: float = 4.0
    n_grid: int = 1024
    rtol: float = 1e-9
    atol: float = 1e-9
    y0_low: float = -5.0
    y0_high: float = 5.0
    max_steps: int = 100_000
    time_budget_s: float = 10.0
    qc_threshold: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.t_end < self.t_extra:
            raise ValueError("need 0 < t_end < t_extra")
        if self.n_grid < 16:
            raise ValueError("n_grid must be >= 16")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if not self.y0_low < self.y0_high:
            raise ValueError("initial-value range is empty")

    def to_json_dict(self) -> dict:
        return {
            "t_end": self.t_end,
            "t_extra": self.t_extra,
            "n_grid": self.n_grid,
            "rtol": self.rtol,
            "atol": self.atol,
            "y0_range": [self.y0_low, self.y0_high],
            "max_steps": self.max_steps,
            "time_budget_s": self.time_budget_s,
            "qc_threshold": self.qc_threshold,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SolveConfig":
        kw = {}
        for k in ("t_end", "t_extra", "rtol", "atol", "time_budget_s", "qc_threshold"):
            if k in d:
                kw[k] = float(d[k])
        for k in ("n_grid", "max_steps"):
            if k in d:
                kw[k] = int(d[k])
        if "y0_range" in d:
            kw["y0_low"], kw["y0_high"] = (float(v) for v in d["y0_range"])
        return cls(**kw)


@dataclass
class Trajectory:
    """Solution samples on an equidistant grid, plus solver/QC outcome."""

    times: np.ndarray
    values: np.ndarray
    y0: float
    status: str
    n_steps: int = 0
    qc: str = "not-run"  # pass | fail | not-run
    qc_error: float = math.nan


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4)
# ---------------------------------------------------------------------------

_C = (1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
# Difference between the 5th- and embedded 4th-order weights.
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)
# Quartic dense-output coefficients of the pair (interpolant of order 4).
_P = (
    (1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432),
    (0.0, 0.0, 0.0, 0.0),
    (0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799),
    (0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072),
    (0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632),
    (0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844),
    (0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423),
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_BETA = 0.04  # PI controller: integral gain on the previous error
_EXPO = 0.2 - 0.75 * _BETA


def _initial_step(f, y0: float, f0: float, span: float, rtol: float, atol: float) -> float:
    scale = atol + rtol * abs(y0)
    d0 = abs(y0) / scale
    d1 = abs(f0) / scale
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = f(y0 + h0 * f0)
    if math.isfinite(f1):
        d2 = abs(f1 - f0) / scale / h0
    else:
        d2 = math.inf
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    elif math.isinf(d2):
        h1 = h0 * 1e-3
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span)


def _solve_dense(
    f: Callable[[float], float],
    t0: float,
    t1: float,
    y0: float,
    eval_times: np.ndarray,
    rtol: float,
    atol: float,
    max_steps: int,
    time_budget_s: float,
) -> tuple[np.ndarray, int, str, int]:
    """Integrate y' = f(y) on [t0, t1]; fill values at sorted eval_times.

    Returns (values, n_filled, status, accepted_steps); values beyond
    n_filled are NaN.
    """
    n_eval = len(eval_times)
    out = np.full(n_eval, math.nan)
    idx = 0
    while idx < n_eval and eval_times[idx] <= t0:
        out[idx] = y0
        idx += 1

    k1 = f(y0)
    if not math.isfinite(k1):
        return out, idx, STATUS_NONFINITE, 0

    deadline = time.monotonic() + time_budget_s
    t, y = t0, y0
    h = _initial_step(f, y0, k1, t1 - t0, rtol, atol)
    facold = 1e-4
    rejected = False
    accepted = 0
    k = [0.0] * 7

    for _ in range(max_steps):
        if time.monotonic() > deadline:
            return out, idx, STATUS_BUDGET, accepted
        remaining = t1 - t
        last = h >= remaining
        h_step = remaining if last else h

        k[0] = k1
        yi = y
        for i, (a_row) in enumerate(_A):
            acc = 0.0
            for a, kj in zip(a_row, k):
                acc += a * kj
            yi = y + h_step * acc
            k[i + 1] = f(yi)
        y_new = yi  # stage 7 argument uses the 5th-order weights
        err = 0.0
        for e, kj in zip(_E, k):
            err += e * kj
        err *= h_step

        scale = atol + rtol * max(abs(y), abs(y_new))
        err_norm = abs(err) / scale

        if err_norm <= 1.0:  # NaN fails this test, which is intended
            accepted += 1
            t_old = t
            t = t1 if last else t + h_step
            q = [0.0] * 4
            for i in range(7):
                ki = k[i]
                prow = _P[i]
                for j in range(4):
                    q[j] += ki * prow[j]
            while idx < n_eval and (eval_times[idx] <= t or last):
                th = (eval_times[idx] - t_old) / h_step
                th = 0.0 if th < 0.0 else (1.0 if th > 1.0 else th)
                out[idx] = y + h_step * ((((q[3] * th + q[2]) * th + q[1]) * th + q[0]) * th)
                idx += 1
            y = y_new
            k1 = k[6]
            if last:
                return out, idx, STATUS_OK, accepted
            if not math.isfinite(k1):
                return out, idx, STATUS_NONFINITE, accepted
            fac11 = err_norm**_EXPO
            fac = fac11 / facold**_BETA
            fac = max(1.0 / _MAX_FACTOR, min(1.0 / _MIN_FACTOR, fac / _SAFETY))
            h_new = h_step / fac
            if rejected:
                h_new = min(h_new, h_step)
            facold = max(err_norm, 1e-4)
            rejected = False
            h = h_new
        else:
            rejected = True
            if math.isfinite(err_norm):
                fac11 = err_norm**_EXPO
                h = h_step / min(1.0 / _MIN_FACTOR, fac11 / _SAFETY)
            else:
                h = h_step * _MIN_FACTOR
        if h < 16 * np.finfo(float).eps * max(abs(t), abs(t1)):
            return out, idx, STATUS_STEP_FAILURE, accepted

    return out, idx, STATUS_BUDGET, accepted


def _as_callable(e: Expr | Callable[[float], float]) -> Callable[[float], float]:
    return compile_fn(e) if isinstance(e, Expr) else e


def integrate(
    e: Expr | Callable[[float], float],
    y0: float,
    span: tuple[float, float],
    n_points: int,
    cfg: SolveConfig,
) -> Trajectory:
    """Solve y' = f(y) from y(t_start) = y0 on an equidistant grid."""
    t_start, t_end = span
    if not t_start < t_end:
        raise ValueError("need t_start < t_end")
    if not math.isfinite(y0):
        raise ValueError("initial value must be finite")
    times = np.linspace(t_start, t_end, n_points)
    values, n_filled, status, n_steps = _solve_dense(
        _as_callable(e), t_start, t_end, float(y0), times,
        cfg.rtol, cfg.atol, cfg.max_steps, cfg.time_budget_s,
    )
    if status != STATUS_OK:
        times = times[:n_filled]
        values = values[:n_filled]
    return Trajectory(times=times, values=values, y0=float(y0), status=status, n_steps=n_steps)


def solve_at_times(
    e: Expr | Callable[[float], float],
    y0: float,
    t_start: float,
    eval_times: np.ndarray,
    cfg: SolveConfig,
) -> tuple[np.ndarray, str]:
    """Dense-output values at arbitrary sorted times >= t_start."""
    eval_times = np.asarray(eval_times, dtype=float)
    if len(eval_times) == 0:
        return np.empty(0), STATUS_OK
    if np.any(np.diff(eval_times) < 0) or eval_times[0] < t_start:
        raise ValueError("eval times must be sorted and >= t_start")
    t_end = float(eval_times[-1])
    if t_end <= t_start:  # all requested points sit at the start
        return np.full(len(eval_times), float(y0)), STATUS_OK
    values, _, status, _ = _solve_dense(
        _as_callable(e), t_start, t_end, float(y0), eval_times,
        cfg.rtol, cfg.atol, cfg.max_steps, cfg.time_budget_s,
    )
    return values, status


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

def fd_weights(offsets: Sequence[float], derivative_order: int) -> np.ndarray:
    """Finite-difference weights on an arbitrary stencil (Fornberg recurrence).

    Weights approximate the derivative at 0 from samples at the given
    offsets, for unit grid spacing; the caller divides by h**order.
    """
    x = [float(o) for o in offsets]
    n = len(x)
    if derivative_order < 0:
        raise ValueError("derivative order must be >= 0")
    if n <= derivative_order:
        raise ValueError("need more stencil points than the derivative order")
    if len(set(x)) != n:
        raise ValueError("stencil offsets must be distinct")

    m_max = derivative_order
    delta = np.zeros((m_max + 1, n, n))
    delta[0, 0, 0] = 1.0
    c1 = 1.0
    for i in range(1, n):
        c2 = 1.0
        for nu in range(i):
            c3 = x[i] - x[nu]
            c2 *= c3
            for m in range(min(i, m_max) + 1):
                prev = delta[m - 1, i - 1, nu] if m > 0 else 0.0
                delta[m, i, nu] = (x[i] * delta[m, i - 1, nu] - m * prev) / c3
        for m in range(min(i, m_max) + 1):
            prev = delta[m - 1, i - 1, i - 1] if m > 0 else 0.0
            delta[m, i, i] = c1 / c2 * (m * prev - x[i - 1] * delta[m, i - 1, i - 1])
        c1 = c2
    return delta[m_max, n - 1, :].copy()


@lru_cache(maxsize=None)
def _nine_point_stencils() -> tuple[np.ndarray, list[np.ndarray]]:
    central = fd_weights(tuple(range(-4, 5)), 1)
    onesided = [fd_weights(tuple(range(-i, 9 - i)), 1) for i in range(9)]
    return central, onesided


def nine_point_derivative(values: np.ndarray, dt: float) -> np.ndarray:
    """First derivative on an equidistant grid with 9-point stencils.

    Central stencil {-4..4} in the interior; shifted one-sided 9-point
    stencils within 4 points of each boundary.
    """
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n < 9:
        raise ValueError("need at least 9 points for the 9-point stencil")
    central, onesided = _nine_point_stencils()
    deriv = np.empty(n)
    deriv[4 : n - 4] = np.convolve(values, central[::-1], mode="valid")
    for i in range(4):
        deriv[i] = onesided[i] @ values[:9]
    for i in range(n - 4, n):
        shift = 8 - (n - 1 - i)
        deriv[i] = onesided[shift] @ values[n - 9 :]
    return deriv / dt


def approx_derivative(traj: Trajectory) -> np.ndarray:
    """Finite-difference time derivative of a solved trajectory."""
    if traj.status != STATUS_OK:
        raise ValueError(f"trajectory status is {traj.status!r}, not ok")
    dt = (traj.times[-1] - traj.times[0]) / (len(traj.times) - 1)
    return nine_point_derivative(traj.values, dt)


def quality_check(
    traj: Trajectory, e: Expr | Callable[[float], float], eps: float
) -> tuple[bool, float]:
    """Compare the finite-difference derivative with f along the solution.

    Returns (passed, max_error) with the sup-norm error; any NaN fails.
    """
    f = _as_callable(e)
    fd = approx_derivative(traj)
    rhs = np.array([f(v) for v in traj.values])
    gaps = np.abs(fd - rhs)
    if not np.all(np.isfinite(gaps)):
        return False, math.nan
    max_err = float(np.max(gaps))
    return max_err <= eps, max_err
