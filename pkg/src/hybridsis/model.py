"""Domain types for the jump-augmented SIS demand model.

A product's active-user share x in [0, 1] follows SIS dynamics

    dx/dt = beta * (1 - x) * x - gamma * x

between releases, and an instantaneous jump x -> (1 + alpha) * x at each
release time.  m releases split the horizon into m + 1 intervals; interval 0
runs from the start and carries only (beta, gamma), every later interval i
additionally carries the jump scale alpha_i of the release that opened it.

The sampled (step h) counterpart used for identification is

    x[k+1] = x[k] + h * (beta_i * (1 - x[k]) * x[k] - gamma_i * x[k])

for ordinary steps, and x[T_i] = (1 + alpha_i) * x[T_i - 1] across a release
scheduled at sample index T_i.  Note the release step carries no factor h.

The flat parameter vector used by the estimator is

    theta = [beta_0, gamma_0, alpha_1, beta_1, gamma_1, ..., alpha_m, beta_m, gamma_m]

with length 2 + 3 m.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "IntervalParams",
    "UpdateSchedule",
    "HybridModelSpec",
    "Trajectory",
    "Scenario",
    "theta_pack",
    "theta_unpack",
    "parameter_names",
    "reproduction_number",
    "load_scenario",
    "save_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
    "load_schedule",
]


@dataclass(frozen=True)
class IntervalParams:
    """Per-interval rates; alpha is None exactly for the opening interval.

    The record itself does not range-check: unconstrained least-squares
    estimates (which may go negative under heavy noise) travel through the
    same type.  Range validation happens where a simulatable model is
    assembled, in HybridModelSpec.
    """

    beta: float
    gamma: float
    alpha: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "gamma", float(self.gamma))
        if self.alpha is not None:
            object.__setattr__(self, "alpha", float(self.alpha))


def reproduction_number(params: IntervalParams) -> float:
    """Basic reproduction number beta / gamma of one interval.

    Raises ValueError when gamma is zero, where the ratio is undefined.
    """
    if params.gamma == 0.0:
        raise ValueError("reproduction number undefined: gamma is zero")
    return params.beta / params.gamma


@dataclass(frozen=True)
class UpdateSchedule:
    """Release sample indices 0 < T_1 < ... < T_m < final_step, plus step size.

    final_step is the index of the last sample, so a trajectory matching this
    schedule holds final_step + 1 values.
    """

    update_steps: tuple[int, ...]
    final_step: int
    step_size: float

    def __post_init__(self) -> None:
        steps = tuple(int(t) for t in self.update_steps)
        object.__setattr__(self, "update_steps", steps)
        object.__setattr__(self, "final_step", int(self.final_step))
        object.__setattr__(self, "step_size", float(self.step_size))
        if self.step_size <= 0.0:
            raise ValueError(f"step size must be positive, got {self.step_size}")
        if self.final_step < 1:
            raise ValueError(f"final step must be at least 1, got {self.final_step}")
        for a, b in zip(steps, steps[1:]):
            if b <= a:
                raise ValueError(f"update steps must be strictly increasing, got {steps}")
        if steps and steps[0] < 1:
            raise ValueError(f"first update step must be positive, got {steps[0]}")
        if steps and steps[-1] >= self.final_step:
            raise ValueError(
                f"last update step {steps[-1]} must lie before final step {self.final_step}"
            )

    @property
    def n_updates(self) -> int:
        return len(self.update_steps)

    @property
    def n_intervals(self) -> int:
        return len(self.update_steps) + 1

    @property
    def n_samples(self) -> int:
        return self.final_step + 1

    def jump_step(self, interval: int) -> int:
        """Sample index at which interval `interval` (>= 1) opens."""
        if not 1 <= interval <= self.n_updates:
            raise ValueError(f"interval {interval} has no opening release")
        return self.update_steps[interval - 1]

    def interval_start(self, interval: int) -> int:
        return 0 if interval == 0 else self.update_steps[interval - 1]

    def sis_index_range(self, interval: int) -> range:
        """Sample indices k whose step k -> k+1 is an ordinary SIS step of
        the given interval.

        For every interval but the last the range stops at T_{i+1} - 2: the
        difference ending at T_{i+1} belongs to the next interval's release.
        The last interval has no later release, so its range keeps the tail
        and runs through final_step - 1.  This asymmetry is encoded here and
        nowhere else.
        """
        m = self.n_updates
        if not 0 <= interval <= m:
            raise ValueError(f"interval index {interval} out of range 0..{m}")
        start = self.interval_start(interval)
        if interval < m:
            stop = self.update_steps[interval] - 1
        else:
            stop = self.final_step
        return range(start, stop)

    def active_interval(self, step: int) -> int:
        """Interval whose parameters govern the SIS step `step` -> `step` + 1."""
        if not 0 <= step < self.final_step:
            raise ValueError(f"step {step} outside 0..{self.final_step - 1}")
        # largest i with T_i <= step; update_steps is sorted
        return int(np.searchsorted(np.asarray(self.update_steps), step, side="right"))


def theta_pack(intervals: Sequence[IntervalParams]) -> np.ndarray:
    """Flatten per-interval parameters into the estimator's theta layout."""
    if not intervals:
        raise ValueError("at least one interval is required")
    if intervals[0].alpha is not None:
        raise ValueError("interval 0 opens the record and must not carry alpha")
    out = [intervals[0].beta, intervals[0].gamma]
    for i, p in enumerate(intervals[1:], start=1):
        if p.alpha is None:
            raise ValueError(f"interval {i} follows a release and must carry alpha")
        out.extend((p.alpha, p.beta, p.gamma))
    return np.asarray(out, dtype=float)


def theta_unpack(theta: Sequence[float] | np.ndarray) -> tuple[IntervalParams, ...]:
    """Inverse of theta_pack.  Length must be 2 + 3 m for some m >= 0."""
    vec = np.asarray(theta, dtype=float).ravel()
    if vec.size < 2 or (vec.size - 2) % 3 != 0:
        raise ValueError(f"theta length {vec.size} is not 2 + 3m for any m >= 0")
    intervals = [IntervalParams(beta=vec[0], gamma=vec[1])]
    for j in range(2, vec.size, 3):
        intervals.append(IntervalParams(alpha=vec[j], beta=vec[j + 1], gamma=vec[j + 2]))
    return tuple(intervals)


def parameter_names(n_updates: int) -> list[str]:
    """Names matching the theta layout: beta0, gamma0, alpha1, beta1, ..."""
    names = ["beta0", "gamma0"]
    for i in range(1, n_updates + 1):
        names.extend((f"alpha{i}", f"beta{i}", f"gamma{i}"))
    return names


@dataclass(frozen=True)
class HybridModelSpec:
    """A simulatable model: schedule plus one parameter record per interval.

    Construction validates what simulation needs: rates non-negative,
    alpha >= -1 (a release cannot remove more than the whole user base), and
    the structural rule that exactly interval 0 lacks alpha.
    """

    schedule: UpdateSchedule
    intervals: tuple[IntervalParams, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "intervals", tuple(self.intervals))
        want = self.schedule.n_intervals
        if len(self.intervals) != want:
            raise ValueError(
                f"schedule defines {want} intervals but {len(self.intervals)} parameter records given"
            )
        if self.intervals[0].alpha is not None:
            raise ValueError("interval 0 must not carry alpha")
        for i, p in enumerate(self.intervals):
            if i > 0 and p.alpha is None:
                raise ValueError(f"interval {i} must carry alpha")
            if p.beta < 0.0 or p.gamma < 0.0:
                raise ValueError(f"interval {i}: rates must be non-negative, got {p}")
            if p.alpha is not None and p.alpha < -1.0:
                raise ValueError(f"interval {i}: alpha must be >= -1, got {p.alpha}")

    @property
    def theta(self) -> np.ndarray:
        return theta_pack(self.intervals)

    @classmethod
    def from_theta(
        cls, theta: Sequence[float] | np.ndarray, schedule: UpdateSchedule
    ) -> "HybridModelSpec":
        return cls(schedule=schedule, intervals=theta_unpack(theta))


@dataclass(frozen=True)
class Trajectory:
    """A sampled share trajectory.  values[k] is the share at time k * step_size.

    The value array is copied and frozen on construction.  population, when
    set, gives the unit scale for converting shares to user counts.
    clamp_count records how many samples a producing routine had to clamp
    back into range (noise injection, SDE floor at zero).
    """

    values: np.ndarray
    step_size: float
    population: int | None = None
    clamp_count: int = 0

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=float)
        if arr.ndim != 1:
            raise ValueError(f"trajectory values must be one-dimensional, got shape {arr.shape}")
        if arr.size < 2:
            raise ValueError(f"a trajectory needs at least 2 samples, got {arr.size}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "step_size", float(self.step_size))
        if self.step_size <= 0.0:
            raise ValueError(f"step size must be positive, got {self.step_size}")
        if self.population is not None:
            pop = int(self.population)
            if pop <= 0:
                raise ValueError(f"population must be positive, got {pop}")
            object.__setattr__(self, "population", pop)
        object.__setattr__(self, "clamp_count", int(self.clamp_count))

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def n_steps(self) -> int:
        return int(self.values.size) - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.size) * self.step_size

    def to_counts(self) -> np.ndarray:
        """Share values scaled to rounded user counts.  Requires population."""
        if self.population is None:
            raise ValueError("trajectory has no population scale")
        return np.rint(self.values * self.population).astype(np.int64)

    def subsample(self, stride: int, step_size: float | None = None) -> "Trajectory":
        """Every stride-th sample.  (len - 1) must be divisible by stride so
        the final sample is kept.  step_size overrides the float product
        stride * step_size when the caller knows the exact coarse step."""
        stride = int(stride)
        if stride < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")
        if self.n_steps % stride != 0:
            raise ValueError(f"stride {stride} does not divide {self.n_steps} steps")
        h = self.step_size * stride if step_size is None else float(step_size)
        return Trajectory(
            values=self.values[::stride],
            step_size=h,
            population=self.population,
            clamp_count=self.clamp_count,
        )


@dataclass(frozen=True)
class Scenario:
    """A runnable setup: model, starting share, optional population scale."""

    spec: HybridModelSpec
    x0: float
    population: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "x0", float(self.x0))
        if not 0.0 <= self.x0 <= 1.0:
            raise ValueError(f"x0 must lie in [0, 1], got {self.x0}")
        if self.population is not None:
            pop = int(self.population)
            if pop <= 0:
                raise ValueError(f"population must be positive, got {pop}")
            object.__setattr__(self, "population", pop)


def _interval_to_dict(p: IntervalParams) -> dict:
    d: dict = {}
    if p.alpha is not None:
        d["alpha"] = p.alpha
    d["beta"] = p.beta
    d["gamma"] = p.gamma
    return d


def _interval_from_dict(d: dict, index: int) -> IntervalParams:
    allowed = {"alpha", "beta", "gamma"}
    extra = set(d) - allowed
    if extra:
        raise ValueError(f"interval {index}: unknown fields {sorted(extra)}")
    for key in ("beta", "gamma"):
        if key not in d:
            raise ValueError(f"interval {index}: missing field '{key}'")
    if index == 0:
        if "alpha" in d:
            raise ValueError("interval 0 must not carry 'alpha'")
        return IntervalParams(beta=d["beta"], gamma=d["gamma"])
    if "alpha" not in d:
        raise ValueError(f"interval {index}: missing field 'alpha'")
    return IntervalParams(alpha=d["alpha"], beta=d["beta"], gamma=d["gamma"])


def scenario_to_dict(scenario: Scenario) -> dict:
    sched = scenario.spec.schedule
    d = {
        "h": sched.step_size,
        "update_steps": list(sched.update_steps),
        "final_step": sched.final_step,
        "intervals": [_interval_to_dict(p) for p in scenario.spec.intervals],
        "x0": scenario.x0,
    }
    if scenario.population is not None:
        d["population"] = scenario.population
    return d


def scenario_from_dict(d: dict) -> Scenario:
    allowed = {"h", "update_steps", "final_step", "intervals", "x0", "population"}
    extra = set(d) - allowed
    if extra:
        raise ValueError(f"scenario: unknown fields {sorted(extra)}")
    for key in ("h", "update_steps", "final_step", "intervals", "x0"):
        if key not in d:
            raise ValueError(f"scenario: missing field '{key}'")
    schedule = UpdateSchedule(
        update_steps=tuple(d["update_steps"]),
        final_step=d["final_step"],
        step_size=d["h"],
    )
    raw = d["intervals"]
    if not isinstance(raw, list):
        raise ValueError("scenario: 'intervals' must be a list")
    intervals = tuple(_interval_from_dict(entry, i) for i, entry in enumerate(raw))
    spec = HybridModelSpec(schedule=schedule, intervals=intervals)
    return Scenario(spec=spec, x0=d["x0"], population=d.get("population"))


def load_scenario(path: str | Path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return scenario_from_dict(d)


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(scenario), fh, indent=2)
        fh.write("\n")


def load_schedule(path: str | Path) -> UpdateSchedule:
    """Read just the sampling schedule from a scenario-shaped JSON file.

    Accepts any object carrying 'h', 'update_steps' and 'final_step';
    parameter fields, when present, are ignored here.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise ValueError(f"{path}: expected a JSON object")
    for key in ("h", "update_steps", "final_step"):
        if key not in d:
            raise ValueError(f"{path}: missing field '{key}'")
    return UpdateSchedule(
        update_steps=tuple(d["update_steps"]),
        final_step=d["final_step"],
        step_size=d["h"],
    )
