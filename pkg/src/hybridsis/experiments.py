"""Study harnesses: step-size/noise sweeps and real-data fitting.

The sweep harness compares estimates against known truth across sampling
step sizes under three data regimes:

  noiseless    the continuous flow, sampled at h;
  observation  the same samples plus i.i.d. measurement noise;
  process      one stochastic demand path per trial, sampled at h.

Truth data is generated once per regime (and per trial for the stochastic
regime) on a fine master grid and subsampled to every coarser h, so all step
sizes see the same underlying path.  That matters for the process regime,
where re-simulating per h would change the realization, and it reproduces how
a single recorded history would be thinned in practice.  The master step is
min(h) / fine_substeps; every swept h and every release time must land
exactly on the master grid, which is validated up front.

All randomness flows from one base seed.  Per-cell generator seeds are the
first 8 bytes of sha256("<seed>:<regime>:[<h>:]<trial>"), so any cell can be
reproduced in isolation and results are independent of iteration order.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimate import (
    EstimationResult,
    IdentifiabilityReport,
    build_regression,
    check_identifiability,
    estimate,
)
from .ingest import AlignedDataset
from .model import (
    HybridModelSpec,
    Scenario,
    Trajectory,
    UpdateSchedule,
    parameter_names,
    scenario_from_dict,
    scenario_to_dict,
)
from .simulate import SimulationConfig, _sis_rate, add_observation_noise, simulate_ct, simulate_sde

__all__ = [
    "REGIMES",
    "ExperimentPlan",
    "load_plan",
    "derive_seed",
    "StudyCell",
    "NoiseStudyResult",
    "run_noise_study",
    "FitReport",
    "HoldoutResult",
    "run_realdata_study",
]

REGIMES = ("noiseless", "observation", "process")


def derive_seed(base: int, *parts) -> int:
    """Stable per-cell seed: first 8 bytes of sha256 over seed and coordinates."""
    key = ":".join([str(int(base))] + [str(p) for p in parts])
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")


def _h_key(h: float) -> str:
    return format(h, ".17g")


def _near_int(x: float, what: str) -> int:
    r = round(x)
    if abs(x - r) > 1e-9 * max(1.0, abs(x)):
        raise ValueError(f"{what}: {x!r} is not an integer")
    return int(r)


@dataclass(frozen=True)
class ExperimentPlan:
    """What to sweep.  Defaults mirror the bundled two-release study."""

    scenario: Scenario
    regimes: tuple[str, ...] = REGIMES
    h_values: tuple[float, ...] = (1.0, 0.5, 0.2, 0.1, 0.05, 0.02)
    sigma: float = 0.02
    trials: int = 32
    seed: int = 0
    fine_substeps: int = 10

    def __post_init__(self) -> None:
        object.__setattr__(self, "regimes", tuple(self.regimes))
        object.__setattr__(self, "h_values", tuple(float(h) for h in self.h_values))
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "trials", int(self.trials))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "fine_substeps", int(self.fine_substeps))
        if not self.regimes:
            raise ValueError("at least one regime is required")
        for r in self.regimes:
            if r not in REGIMES:
                raise ValueError(f"unknown regime {r!r}; expected one of {REGIMES}")
        if len(set(self.regimes)) != len(self.regimes):
            raise ValueError("duplicate regimes in plan")
        if not self.h_values:
            raise ValueError("at least one step size is required")
        if any(h <= 0 for h in self.h_values):
            raise ValueError("step sizes must be positive")
        if len(set(self.h_values)) != len(self.h_values):
            raise ValueError("duplicate step sizes in plan")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        if self.fine_substeps < 1:
            raise ValueError(f"fine_substeps must be >= 1, got {self.fine_substeps}")
        _grid(self)  # validate alignment eagerly


def _grid(plan: ExperimentPlan):
    """Master schedule and, per swept h, (schedule at h, subsample stride).

    Validates that release times and the final time are integer multiples of
    every swept h and that every h is an integer multiple of the master step.
    """
    sched0 = plan.scenario.spec.schedule
    h0 = sched0.step_size
    t_updates = [t * h0 for t in sched0.update_steps]
    t_final = sched0.final_step * h0
    h_min = min(plan.h_values)
    h_master = h_min / plan.fine_substeps

    master_updates = tuple(
        _near_int(t / h_master, f"release time {t} over master step {h_master}")
        for t in t_updates
    )
    master_final = _near_int(t_final / h_master, f"final time {t_final} over master step")

    per_h: dict[float, tuple[UpdateSchedule, int]] = {}
    for h in plan.h_values:
        stride = _near_int(h / h_master, f"step {h} over master step {h_master}")
        updates = tuple(
            _near_int(t / h, f"release time {t} over step {h}") for t in t_updates
        )
        final = _near_int(t_final / h, f"final time {t_final} over step {h}")
        for u, mu in zip(updates, master_updates):
            if u * stride != mu:
                raise ValueError(f"release at step {u} (h={h}) misses the master grid")
        if final * stride != master_final:
            raise ValueError(f"final step {final} (h={h}) misses the master grid")
        per_h[h] = (UpdateSchedule(update_steps=updates, final_step=final, step_size=h), stride)

    master_sched = UpdateSchedule(
        update_steps=master_updates, final_step=master_final, step_size=h_master
    )
    return master_sched, per_h


def load_plan(path: str | Path) -> ExperimentPlan:
    """Read a study plan JSON: a 'scenario' object plus optional overrides
    for regimes, h_values, sigma, trials, seed and fine_substeps."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise ValueError(f"{path}: expected a JSON object")
    allowed = {"scenario", "regimes", "h_values", "sigma", "trials", "seed", "fine_substeps"}
    extra = set(d) - allowed
    if extra:
        raise ValueError(f"{path}: unknown fields {sorted(extra)}")
    if "scenario" not in d:
        raise ValueError(f"{path}: missing field 'scenario'")
    kwargs = {"scenario": scenario_from_dict(d["scenario"])}
    for key in ("regimes", "h_values", "sigma", "trials", "seed", "fine_substeps"):
        if key in d:
            kwargs[key] = tuple(d[key]) if key in ("regimes", "h_values") else d[key]
    return ExperimentPlan(**kwargs)


def _rel_errors(true: np.ndarray, hat: np.ndarray) -> np.ndarray:
    """Relative error entrywise, absolute where the true value is zero."""
    out = np.abs(hat - true)
    nz = true != 0.0
    out[nz] = out[nz] / np.abs(true[nz])
    return out


@dataclass
class StudyCell:
    """All trials of one (regime, step size) combination."""

    regime: str
    h: float
    theta_true: np.ndarray
    r0_true: np.ndarray
    theta_hats: list[np.ndarray] = field(default_factory=list)
    failed: bool = False
    failure: IdentifiabilityReport | None = None

    @property
    def n_trials(self) -> int:
        return len(self.theta_hats)

    @property
    def n_intervals(self) -> int:
        return self.r0_true.size

    def theta_matrix(self) -> np.ndarray:
        return np.vstack(self.theta_hats)

    def r0_matrix(self) -> np.ndarray:
        """Per-trial reproduction numbers, one column per interval."""
        thetas = self.theta_matrix()
        cols = []
        for i in range(self.n_intervals):
            b = thetas[:, 0] if i == 0 else thetas[:, 2 + 3 * (i - 1) + 1]
            g = thetas[:, 1] if i == 0 else thetas[:, 2 + 3 * (i - 1) + 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                cols.append(np.where(g != 0.0, b / g, np.nan))
        return np.column_stack(cols)

    def param_rel_errors(self) -> np.ndarray:
        return np.vstack([_rel_errors(self.theta_true, t) for t in self.theta_hats])

    def r0_rel_errors(self) -> np.ndarray:
        r0s = self.r0_matrix()
        return np.vstack([_rel_errors(self.r0_true, row) for row in r0s])

    def median_param_rel_errors(self) -> np.ndarray:
        return np.median(self.param_rel_errors(), axis=0)

    def median_r0_rel_errors(self) -> np.ndarray:
        return np.median(self.r0_rel_errors(), axis=0)

    def max_r0_rel_errors(self) -> np.ndarray:
        return np.max(self.r0_rel_errors(), axis=0)


@dataclass
class NoiseStudyResult:
    plan: ExperimentPlan
    cells: list[StudyCell]

    def cell(self, regime: str, h: float) -> StudyCell:
        for c in self.cells:
            if c.regime == regime and c.h == h:
                return c
        raise KeyError(f"no cell for regime={regime!r}, h={h}")

    def param_rows(self):
        """Rows regime,h,trial,param,true,estimate,rel_error."""
        names = parameter_names(self.plan.scenario.spec.schedule.n_updates)
        for c in self.cells:
            if c.failed:
                continue
            for trial, hat in enumerate(c.theta_hats):
                errs = _rel_errors(c.theta_true, hat)
                for name, t, e, r in zip(names, c.theta_true, hat, errs):
                    yield (c.regime, c.h, trial, name, float(t), float(e), float(r))

    def r0_rows(self):
        """Rows regime,h,interval,r0_true,r0_est,rel_error (one per trial)."""
        for c in self.cells:
            if c.failed:
                continue
            r0s = c.r0_matrix()
            for row in r0s:
                errs = _rel_errors(c.r0_true, row)
                for i in range(c.n_intervals):
                    yield (c.regime, c.h, i, float(c.r0_true[i]), float(row[i]), float(errs[i]))

    def summary(self) -> dict:
        names = parameter_names(self.plan.scenario.spec.schedule.n_updates)
        cells = []
        for c in self.cells:
            if c.failed:
                cells.append(
                    {
                        "regime": c.regime,
                        "h": c.h,
                        "failed": True,
                        "identifiability": c.failure.to_dict() if c.failure else None,
                    }
                )
                continue
            perr = c.param_rel_errors()
            r0err = c.r0_rel_errors()
            cells.append(
                {
                    "regime": c.regime,
                    "h": c.h,
                    "failed": False,
                    "trials": c.n_trials,
                    "param_rel_error": {
                        name: {
                            "median": float(np.median(perr[:, j])),
                            "max": float(np.max(perr[:, j])),
                        }
                        for j, name in enumerate(names)
                    },
                    "r0_rel_error": {
                        f"interval_{i}": {
                            "median": float(np.median(r0err[:, i])),
                            "max": float(np.max(r0err[:, i])),
                        }
                        for i in range(c.n_intervals)
                    },
                }
            )
        return {
            "seed": self.plan.seed,
            "sigma": self.plan.sigma,
            "trials": self.plan.trials,
            "fine_substeps": self.plan.fine_substeps,
            "regimes": list(self.plan.regimes),
            "h_values": list(self.plan.h_values),
            "cells": cells,
        }

    def write(self, out_dir: str | Path) -> list[Path]:
        """Write params.csv, r0.csv and summary.json; returns the paths."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []

        p = out / "params.csv"
        with open(p, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["regime", "h", "trial", "param", "true", "estimate", "rel_error"])
            for regime, h, trial, name, t, e, r in self.param_rows():
                w.writerow([regime, _h_key(h), trial, name, _g17(t), _g17(e), _g17(r)])
        paths.append(p)

        p = out / "r0.csv"
        with open(p, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["regime", "h", "interval", "r0_true", "r0_est", "rel_error"])
            for regime, h, i, t, e, r in self.r0_rows():
                w.writerow([regime, _h_key(h), i, _g17(t), _g17(e), _g17(r)])
        paths.append(p)

        p = out / "summary.json"
        with open(p, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2)
            fh.write("\n")
        paths.append(p)
        return paths


def _g17(x: float) -> str:
    return format(x, ".17g")


def _subsampled(master: Trajectory, stride: int, h: float) -> Trajectory:
    return Trajectory(values=master.values[::stride], step_size=h)


def _run_cell_trial(cell: StudyCell, traj: Trajectory, schedule: UpdateSchedule) -> None:
    """Estimate one trial into a cell; an identifiability failure marks the
    whole cell failed and later trials are skipped."""
    if cell.failed:
        return
    system = build_regression(traj, schedule)
    report = check_identifiability(system, traj, schedule)
    if not report.overall:
        cell.failed = True
        cell.failure = report
        cell.theta_hats.clear()
        return
    cell.theta_hats.append(estimate(system).theta_hat)


def run_noise_study(plan: ExperimentPlan) -> NoiseStudyResult:
    """Run every (regime, h, trial) cell of the plan.  Deterministic for a
    given plan; failed cells carry their identifiability report and do not
    stop the sweep."""
    master_sched, per_h = _grid(plan)
    spec0 = plan.scenario.spec
    master_spec = HybridModelSpec(schedule=master_sched, intervals=spec0.intervals)
    x0 = plan.scenario.x0
    theta_true = spec0.theta
    r0_true = np.array(
        [p.beta / p.gamma if p.gamma != 0.0 else np.nan for p in spec0.intervals]
    )

    clean_master: Trajectory | None = None
    if "noiseless" in plan.regimes or "observation" in plan.regimes:
        clean_master = simulate_ct(
            master_spec, x0, SimulationConfig(fine_substeps=1), method="rk4"
        )

    cells: list[StudyCell] = []
    for regime in plan.regimes:
        n_trials = 1 if regime == "noiseless" else plan.trials
        regime_cells = {
            h: StudyCell(regime=regime, h=h, theta_true=theta_true, r0_true=r0_true)
            for h in plan.h_values
        }
        if regime == "process":
            # one stochastic path per trial, shared across all step sizes
            for trial in range(n_trials):
                cfg = SimulationConfig(
                    seed=derive_seed(plan.seed, "process", trial),
                    sigma=plan.sigma,
                    fine_substeps=1,
                )
                master = simulate_sde(master_spec, x0, cfg)
                for h in plan.h_values:
                    sched_h, stride = per_h[h]
                    _run_cell_trial(regime_cells[h], _subsampled(master, stride, h), sched_h)
        else:
            assert clean_master is not None
            for h in plan.h_values:
                sched_h, stride = per_h[h]
                base = _subsampled(clean_master, stride, h)
                for trial in range(n_trials):
                    if regime == "observation":
                        traj = add_observation_noise(
                            base,
                            plan.sigma,
                            derive_seed(plan.seed, "observation", _h_key(h), trial),
                        )
                    else:
                        traj = base
                    _run_cell_trial(regime_cells[h], traj, sched_h)
        cells.extend(regime_cells[h] for h in plan.h_values)
    return NoiseStudyResult(plan=plan, cells=cells)


# --- real-data fitting ------------------------------------------------------


def _resimulate(schedule: UpdateSchedule, intervals, x0: float) -> np.ndarray:
    """The sampled recursion on raw parameter records.

    Same arithmetic as simulate_dt, without range policing: least-squares
    estimates may fall outside the generative parameter ranges, and the
    recursion is still well defined there.
    """
    h = schedule.step_size
    xs = np.empty(schedule.n_samples, dtype=float)
    x = float(x0)
    xs[0] = x
    for i, p in enumerate(intervals):
        if i > 0:
            x = (1.0 + p.alpha) * x
            xs[schedule.jump_step(i)] = x
        for k in schedule.sis_index_range(i):
            x = x + h * _sis_rate(x, p.beta, p.gamma)
            xs[k + 1] = x
    return xs


def _interval_of_sample(schedule: UpdateSchedule, n_samples: int) -> np.ndarray:
    """Interval owning each sample index; a release sample belongs to the
    interval it opens."""
    return np.searchsorted(
        np.asarray(schedule.update_steps), np.arange(n_samples), side="right"
    )


@dataclass
class HoldoutResult:
    cut_step: int
    horizon: int
    ok: bool
    identifiability: IdentifiabilityReport
    estimation: EstimationResult | None
    forecast_values: np.ndarray | None
    forecast_rmse_counts: float | None

    def to_dict(self) -> dict:
        return {
            "cut_step": self.cut_step,
            "horizon": self.horizon,
            "ok": self.ok,
            "identifiability": self.identifiability.to_dict(),
            "estimation": self.estimation.to_dict() if self.estimation else None,
            "forecast_rmse_counts": self.forecast_rmse_counts,
        }


@dataclass
class FitReport:
    dataset: AlignedDataset
    ok: bool
    identifiability: IdentifiabilityReport
    estimation: EstimationResult | None = None
    rmse_counts: float | None = None
    per_interval_rmse_counts: tuple[float, ...] | None = None
    fitted: Scenario | None = None
    holdout: HoldoutResult | None = None

    def to_dict(self) -> dict:
        d = {
            "ok": self.ok,
            "population": self.dataset.population,
            "start_date": self.dataset.start_date.isoformat(),
            "h": self.dataset.schedule.step_size,
            "update_steps": list(self.dataset.schedule.update_steps),
            "final_step": self.dataset.schedule.final_step,
            "smoothed": self.dataset.smoothed,
            "start_at_update": self.dataset.start_at_update,
            "identifiability": self.identifiability.to_dict(),
            "estimation": self.estimation.to_dict() if self.estimation else None,
            "rmse_counts": self.rmse_counts,
            "per_interval_rmse_counts": (
                list(self.per_interval_rmse_counts)
                if self.per_interval_rmse_counts is not None
                else None
            ),
            "fitted_scenario": scenario_to_dict(self.fitted) if self.fitted else None,
        }
        if self.holdout is not None:
            d["holdout"] = self.holdout.to_dict()
        return d


def run_realdata_study(dataset: AlignedDataset, holdout: int | None = None) -> FitReport:
    """Fit all intervals of an aligned dataset at once and score the fit.

    The fit quality score re-runs the sampled recursion from the first data
    point using only the estimated parameters, and reports root-mean-square
    deviation in user-count units, overall and per interval.

    With holdout = n, the model is refit on the data minus its last n samples
    (releases falling inside the held-out tail are dropped, never invented)
    and the held-out tail is forecast by continuing the last fitted
    interval's rates from the cut; the tail RMSE is reported.  The truncated
    prefix must itself pass the identifiability conditions or the holdout
    result is marked not ok.
    """
    traj = dataset.trajectory
    sched = dataset.schedule
    n = dataset.population
    system = build_regression(traj, sched)
    report = check_identifiability(system, traj, sched)
    if not report.overall:
        return FitReport(dataset=dataset, ok=False, identifiability=report)

    result = estimate(system)
    sim = _resimulate(sched, result.intervals_hat, traj.values[0])
    diff = (sim - traj.values) * n
    rmse = float(np.sqrt(np.mean(diff**2)))
    owner = _interval_of_sample(sched, len(traj))
    per_interval = tuple(
        float(np.sqrt(np.mean(diff[owner == i] ** 2))) for i in range(sched.n_intervals)
    )
    fitted = None
    try:
        fitted = Scenario(
            spec=HybridModelSpec(schedule=sched, intervals=result.intervals_hat),
            x0=float(traj.values[0]),
            population=n,
        )
    except ValueError:
        pass  # estimates outside the generative ranges; raw theta still reported

    holdout_result = None
    if holdout is not None:
        holdout = int(holdout)
        cut = sched.final_step - holdout
        if holdout < 1 or cut < 2:
            raise ValueError(
                f"holdout {holdout} leaves no usable prefix (cut at step {cut})"
            )
        kept = tuple(t for t in sched.update_steps if t < cut)
        prefix_sched = UpdateSchedule(
            update_steps=kept, final_step=cut, step_size=sched.step_size
        )
        prefix_traj = Trajectory(
            values=traj.values[: cut + 1], step_size=traj.step_size, population=n
        )
        prefix_system = build_regression(prefix_traj, prefix_sched)
        prefix_report = check_identifiability(prefix_system, prefix_traj, prefix_sched)
        if not prefix_report.overall:
            holdout_result = HoldoutResult(
                cut_step=cut,
                horizon=holdout,
                ok=False,
                identifiability=prefix_report,
                estimation=None,
                forecast_values=None,
                forecast_rmse_counts=None,
            )
        else:
            prefix_est = estimate(prefix_system)
            last = prefix_est.intervals_hat[-1]
            x = float(traj.values[cut])
            fc = [x]
            hstep = sched.step_size
            for _ in range(holdout):
                x = x + hstep * _sis_rate(x, last.beta, last.gamma)
                fc.append(x)
            fc_arr = np.asarray(fc)
            tail = traj.values[cut : sched.final_step + 1]
            fc_rmse = float(np.sqrt(np.mean(((fc_arr[1:] - tail[1:]) * n) ** 2)))
            holdout_result = HoldoutResult(
                cut_step=cut,
                horizon=holdout,
                ok=True,
                identifiability=prefix_report,
                estimation=prefix_est,
                forecast_values=fc_arr,
                forecast_rmse_counts=fc_rmse,
            )

    return FitReport(
        dataset=dataset,
        ok=True,
        identifiability=report,
        estimation=result,
        rmse_counts=rmse,
        per_interval_rmse_counts=per_interval,
        fitted=fitted,
        holdout=holdout_result,
    )
