"""Least-squares identification of the jump-augmented SIS model.

The sampled model is linear in its parameters, so a trajectory plus a release
schedule yields a linear system

    y = Psi @ theta,    y[k] = x[k+1] - x[k],   k = 0 .. final_step - 1,

with theta = [beta0, gamma0, alpha1, beta1, gamma1, ...] and Psi block
diagonal, one block per interval:

  block 0 (2 columns) holds the ordinary rows of the opening interval,
      row k = [ h (1 - x[k]) x[k],  -h x[k] ];
  block i >= 1 (3 columns) opens with the release row
      row T_i - 1 = [ x[T_i - 1],  0,  0 ]
  followed by its ordinary rows in the trailing two columns.

Ordinary rows of interval i cover k = T_i .. T_{i+1} - 2, except that the
last interval keeps its tail and runs through final_step - 1 (the range is
produced by UpdateSchedule.sis_index_range, which owns that asymmetry).

A block is uniquely solvable exactly when
  * it has at least 2 ordinary rows (3-column blocks also need their release
    row, which every scheduled release provides),
  * two ordinary rows differ:  x[k1] (1 - x[k2]) x[k2] != x[k2] (1 - x[k1]) x[k1],
    which reduces to x[k1] x[k2] (x[k1] - x[k2]) != 0, so two distinct
    nonzero shares suffice,
  * the release row is nonzero: x[T_i - 1] != 0.
check_identifiability evaluates these condition by condition and also reports
numeric ranks so the two views can be compared.

Solving is per block (the blocks share no columns, so this is exactly the
full least-squares solution) through LAPACK's column-pivoted complete
orthogonal factorization (gelsy), which returns the minimum-norm solution on
rank-deficient blocks.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import (
    HybridModelSpec,
    IntervalParams,
    Trajectory,
    UpdateSchedule,
    parameter_names,
    theta_unpack,
)
from .simulate import _sis_rate

__all__ = [
    "VARIATION_TOL",
    "RANK_RTOL",
    "BlockSlice",
    "RegressionSystem",
    "build_regression",
    "IntervalConditions",
    "IdentifiabilityReport",
    "check_identifiability",
    "RankDeficiencyWarning",
    "EstimationResult",
    "estimate",
    "MetricEntry",
    "ErrorMetrics",
    "error_metrics",
    "forecast",
]

# a share is treated as zero below this, and two shares as equal when their
# difference is below this relative to max(1, |x1|, |x2|)
VARIATION_TOL = 1e-12
# singular values below RANK_RTOL * sigma_max count as zero in numeric ranks
RANK_RTOL = 1e-10


class RankDeficiencyWarning(UserWarning):
    """A regression block was numerically rank deficient."""


@dataclass(frozen=True)
class BlockSlice:
    """Row/column extent of one interval's diagonal block (half-open)."""

    interval: int
    row_start: int
    row_stop: int
    col_start: int
    col_stop: int


@dataclass(frozen=True)
class RegressionSystem:
    y: np.ndarray
    psi: np.ndarray
    blocks: tuple[BlockSlice, ...]

    @property
    def n_updates(self) -> int:
        return len(self.blocks) - 1

    def block_matrix(self, i: int) -> np.ndarray:
        b = self.blocks[i]
        return self.psi[b.row_start : b.row_stop, b.col_start : b.col_stop]

    def block_rhs(self, i: int) -> np.ndarray:
        b = self.blocks[i]
        return self.y[b.row_start : b.row_stop]


def _check_step_sizes(traj: Trajectory, schedule: UpdateSchedule) -> None:
    h1, h2 = traj.step_size, schedule.step_size
    if abs(h1 - h2) > 1e-9 * max(1.0, abs(h1), abs(h2)):
        raise ValueError(
            f"trajectory step size {h1!r} does not match schedule step size {h2!r}"
        )


def build_regression(traj: Trajectory, schedule: UpdateSchedule) -> RegressionSystem:
    """Assemble y and the block-diagonal Psi for a trajectory and schedule."""
    _check_step_sizes(traj, schedule)
    x = traj.values
    m = schedule.n_updates
    n_rows = schedule.final_step
    for i in range(m + 1):
        need = schedule.sis_index_range(i).stop  # highest sample index used + 0/1
        if i > 0:
            need = max(need, schedule.jump_step(i))
        if len(traj) - 1 < need:
            raise ValueError(
                f"interval {i} needs samples through index {need} but the "
                f"trajectory ends at index {len(traj) - 1}"
            )
    h = schedule.step_size

    y = np.diff(x[: n_rows + 1])
    psi = np.zeros((n_rows, 2 + 3 * m), dtype=float)
    blocks: list[BlockSlice] = []
    for i in range(m + 1):
        ks = schedule.sis_index_range(i)
        if i == 0:
            col = 0
            row_start = 0
            bcol, gcol = col, col + 1
            col_stop = 2
        else:
            col = 2 + 3 * (i - 1)
            row_start = schedule.jump_step(i) - 1
            psi[row_start, col] = x[row_start]  # release row, pre-release share
            bcol, gcol = col + 1, col + 2
            col_stop = col + 3
        if len(ks) > 0:
            xk = x[ks.start : ks.stop]
            psi[ks.start : ks.stop, bcol] = h * (1.0 - xk) * xk
            psi[ks.start : ks.stop, gcol] = -h * xk
        # ks.stop bounds the block's rows in every case: an empty ordinary
        # range leaves interval 0 with no rows and a later interval with just
        # its release row
        row_stop = ks.stop
        blocks.append(
            BlockSlice(
                interval=i,
                row_start=row_start,
                row_stop=row_stop,
                col_start=col if i > 0 else 0,
                col_stop=col_stop,
            )
        )
    return RegressionSystem(y=y, psi=psi, blocks=tuple(blocks))


def _svd_rank(a: np.ndarray, rtol: float = RANK_RTOL) -> int:
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rtol * s[0]))


def _has_variation(values: np.ndarray) -> bool:
    """Two usable (nonzero) shares that actually differ, at tolerance.

    The exact condition is x1 x2 (x1 - x2) != 0 for some pair; numerically a
    share counts as nonzero above VARIATION_TOL and a pair as distinct when
    the difference clears VARIATION_TOL relative to max(1, |x1|, |x2|).  The
    extreme pair (min, max) of the usable subset decides, because every other
    pair differs less while facing the same floor.
    """
    usable = values[np.abs(values) > VARIATION_TOL]
    if usable.size < 2:
        return False
    lo = float(usable.min())
    hi = float(usable.max())
    return (hi - lo) > VARIATION_TOL * max(1.0, abs(lo), abs(hi))


@dataclass(frozen=True)
class IntervalConditions:
    interval: int
    length_ok: bool
    variation_ok: bool
    jump_state_ok: bool
    rank: int
    required_rank: int

    @property
    def ok(self) -> bool:
        return self.length_ok and self.variation_ok and self.jump_state_ok

    def to_dict(self) -> dict:
        return {
            "interval": self.interval,
            "length_ok": self.length_ok,
            "variation_ok": self.variation_ok,
            "jump_state_ok": self.jump_state_ok,
            "ok": self.ok,
            "rank": self.rank,
            "required_rank": self.required_rank,
        }


@dataclass(frozen=True)
class IdentifiabilityReport:
    intervals: tuple[IntervalConditions, ...]
    overall: bool
    psi_rank: int
    required_rank: int

    def failed_intervals(self) -> tuple[int, ...]:
        return tuple(c.interval for c in self.intervals if not c.ok)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "psi_rank": self.psi_rank,
            "required_rank": self.required_rank,
            "intervals": [c.to_dict() for c in self.intervals],
        }


def check_identifiability(
    system: RegressionSystem, traj: Trajectory, schedule: UpdateSchedule
) -> IdentifiabilityReport:
    """Evaluate, per interval, the exact conditions for a unique solution.

    length_ok: at least two ordinary rows in the interval's block.
    variation_ok: two distinct nonzero shares among its ordinary-row states.
    jump_state_ok: nonzero share entering the interval's release (intervals
    >= 1; vacuously true for interval 0).

    All three hold for every interval exactly when the full system has a
    unique least-squares solution; the report also carries the numeric rank
    of each block and of Psi so the algebraic verdict can be cross-checked.
    """
    _check_step_sizes(traj, schedule)
    x = traj.values
    conditions = []
    for i in range(schedule.n_updates + 1):
        ks = schedule.sis_index_range(i)
        states = x[ks.start : ks.stop]
        length_ok = len(ks) >= 2
        variation_ok = _has_variation(states)
        if i == 0:
            jump_ok = True
        else:
            jump_ok = abs(float(x[schedule.jump_step(i) - 1])) > VARIATION_TOL
        conditions.append(
            IntervalConditions(
                interval=i,
                length_ok=length_ok,
                variation_ok=variation_ok,
                jump_state_ok=jump_ok,
                rank=_svd_rank(system.block_matrix(i)),
                required_rank=2 if i == 0 else 3,
            )
        )
    required = 2 + 3 * schedule.n_updates
    return IdentifiabilityReport(
        intervals=tuple(conditions),
        overall=all(c.ok for c in conditions),
        psi_rank=_svd_rank(system.psi),
        required_rank=required,
    )


@dataclass
class EstimationResult:
    theta_hat: np.ndarray
    intervals_hat: tuple[IntervalParams, ...]
    r0_hat: tuple[float, ...]
    residual_norm: float
    block_ranks: tuple[int, ...]
    unique: bool

    def to_dict(self) -> dict:
        return {
            "theta": [float(v) for v in self.theta_hat],
            "intervals": [
                (
                    {"beta": p.beta, "gamma": p.gamma}
                    if p.alpha is None
                    else {"alpha": p.alpha, "beta": p.beta, "gamma": p.gamma}
                )
                for p in self.intervals_hat
            ],
            "r0": [v if np.isfinite(v) else None for v in self.r0_hat],
            "residual_norm": float(self.residual_norm),
            "unique": self.unique,
            "block_ranks": list(self.block_ranks),
        }


def estimate(system: RegressionSystem) -> EstimationResult:
    """Solve each diagonal block by column-pivoted orthogonal factorization.

    Blocks decouple, so per-block solves give the full least-squares answer
    at better conditioning than one stacked solve.  A block whose numeric
    rank falls short gets the minimum-norm solution and the result is flagged
    non-unique (with a RankDeficiencyWarning).
    """
    n_cols = system.psi.shape[1]
    theta = np.zeros(n_cols, dtype=float)
    ranks: list[int] = []
    unique = True
    for i, b in enumerate(system.blocks):
        a = system.block_matrix(i)
        rhs = system.block_rhs(i)
        width = b.col_stop - b.col_start
        if a.shape[0] == 0:
            sol = np.zeros(width)
            rank = 0
        else:
            sol, _, rank, _ = scipy.linalg.lstsq(
                a, rhs, cond=RANK_RTOL, lapack_driver="gelsy"
            )
            rank = _svd_rank(a)  # report ranks on the same footing everywhere
        if rank < width:
            unique = False
            warnings.warn(
                f"interval {i}: regression block has rank {rank} < {width}; "
                "returning the minimum-norm solution",
                RankDeficiencyWarning,
                stacklevel=2,
            )
        theta[b.col_start : b.col_stop] = sol
        ranks.append(rank)
    intervals = theta_unpack(theta)
    r0 = tuple(
        (p.beta / p.gamma) if p.gamma != 0.0 else float("nan") for p in intervals
    )
    residual = float(np.linalg.norm(system.y - system.psi @ theta))
    return EstimationResult(
        theta_hat=theta,
        intervals_hat=intervals,
        r0_hat=r0,
        residual_norm=residual,
        block_ranks=tuple(ranks),
        unique=unique,
    )


@dataclass(frozen=True)
class MetricEntry:
    """One compared quantity.  error is relative when the true value is
    nonzero, absolute otherwise (relative=False marks that case)."""

    name: str
    true: float
    estimate: float
    error: float
    relative: bool

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "true": self.true,
            "estimate": self.estimate,
            "error": self.error if np.isfinite(self.error) else None,
            "relative": self.relative,
        }


def _entry(name: str, true: float, est: float) -> MetricEntry:
    if true != 0.0 and np.isfinite(true):
        return MetricEntry(name, true, est, abs(est - true) / abs(true), True)
    return MetricEntry(name, true, est, abs(est - true), False)


@dataclass(frozen=True)
class ErrorMetrics:
    params: tuple[MetricEntry, ...]
    r0: tuple[MetricEntry, ...]

    @property
    def max_param_error(self) -> float:
        return max(e.error for e in self.params)

    @property
    def max_r0_error(self) -> float:
        return max(e.error for e in self.r0)

    def to_dict(self) -> dict:
        return {
            "params": [e.to_dict() for e in self.params],
            "r0": [e.to_dict() for e in self.r0],
        }


def error_metrics(result: EstimationResult, truth: HybridModelSpec) -> ErrorMetrics:
    """Per-parameter and per-interval reproduction-number errors vs truth."""
    theta_true = truth.theta
    if theta_true.size != result.theta_hat.size:
        raise ValueError(
            f"truth has {theta_true.size} parameters, estimate has {result.theta_hat.size}"
        )
    names = parameter_names(truth.schedule.n_updates)
    params = tuple(
        _entry(n, float(t), float(e))
        for n, t, e in zip(names, theta_true, result.theta_hat)
    )
    r0_entries = []
    for i, p in enumerate(truth.intervals):
        r0_true = p.beta / p.gamma if p.gamma != 0.0 else float("nan")
        r0_entries.append(_entry(f"r0_{i}", r0_true, float(result.r0_hat[i])))
    return ErrorMetrics(params=params, r0=tuple(r0_entries))


def forecast(
    spec: HybridModelSpec,
    x_start: float,
    horizon: int,
    *,
    start_step: int = 0,
    beyond: str = "extend",
) -> Trajectory:
    """Run the sampled model forward from x_start at sample index start_step.

    Scheduled releases inside the horizon apply their alpha; no release is
    ever invented past the schedule.  Beyond final_step the last interval's
    rates continue when beyond="extend" (default); beyond="stop" truncates
    the forecast at the schedule's end instead.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if start_step < 0:
        raise ValueError(f"start_step must be >= 0, got {start_step}")
    if not 0.0 <= x_start <= 1.0:
        raise ValueError(f"x_start must lie in [0, 1], got {x_start}")
    if beyond not in ("extend", "stop"):
        raise ValueError(f"unknown beyond-schedule policy {beyond!r}")
    sched = spec.schedule
    h = sched.step_size
    if beyond == "stop":
        horizon = min(horizon, max(0, sched.final_step - start_step))
        if horizon < 1:
            raise ValueError(
                f"nothing to forecast: the schedule ends at step {sched.final_step} "
                f"and the start step is {start_step}"
            )
    jump_alpha = {
        sched.jump_step(i): spec.intervals[i].alpha for i in range(1, sched.n_intervals)
    }
    values = [float(x_start)]
    x = float(x_start)
    for j in range(horizon):
        k = start_step + j
        if (k + 1) in jump_alpha:
            x = (1.0 + jump_alpha[k + 1]) * x
        else:
            if k < sched.final_step:
                p = spec.intervals[sched.active_interval(k)]
            else:
                p = spec.intervals[-1]
            x = x + h * _sis_rate(x, p.beta, p.gamma)
        values.append(x)
    return Trajectory(values=np.asarray(values), step_size=h)
