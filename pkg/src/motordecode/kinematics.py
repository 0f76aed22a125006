"""Jerk-based movement smoothness (NARJ) and trial outcome classification."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Optional

import numpy as np

__all__ = [
    "KinematicsError",
    "Trajectory",
    "NarjScore",
    "TrialStatus",
    "TrialOutcome",
    "PLANNING_MOVE_LIMIT_M",
    "REACH_RADIUS_M",
    "GO_TIMEOUT_S",
    "finite_difference",
    "compute_jerk",
    "narj",
    "feedback_score",
    "validate_trial",
]

PLANNING_MOVE_LIMIT_M = 0.04
REACH_RADIUS_M = 0.035
GO_TIMEOUT_S = 10.0

JERK_ORDER = 3
ROUNDOFF_FACTOR = 64.0


class KinematicsError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled 3-D positions (metres) of the tracked arm marker."""

    sample_rate: float
    samples: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float)
        if samples.ndim != 2 or samples.shape[1] != 3:
            raise KinematicsError(f"samples must have shape (n, 3), got {samples.shape}")
        if not self.sample_rate > 0:
            raise KinematicsError(f"sample_rate must be positive, got {self.sample_rate}")
        if samples.shape[0] < JERK_ORDER + 1:
            raise KinematicsError(
                f"trajectory needs at least {JERK_ORDER + 1} samples, got {samples.shape[0]}")
        if not np.all(np.isfinite(samples)):
            raise KinematicsError("trajectory contains non-finite coordinates")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def duration_s(self) -> float:
        return (self.n_samples - 1) / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_samples) / self.sample_rate


@dataclass(frozen=True)
class NarjScore:
    narj: float
    duration_s: float
    log_narj: Optional[float] = None
    log_defined: bool = field(default=False)

    @classmethod
    def from_value(cls, value, duration_s):
        if value > 0:
            return cls(float(value), float(duration_s), float(np.log(value)), True)
        return cls(float(value), float(duration_s), None, False)


class TrialStatus(str, enum.Enum):
    SUCCESS = "Success"
    FAILED_PLANNING_MOVE = "FailedPlanningMove"
    FAILED_TIMEOUT = "FailedTimeout"


@dataclass(frozen=True)
class TrialOutcome:
    status: TrialStatus
    planning_displacement_m: float
    reach_residual_m: float
    go_duration_s: float

    @property
    def succeeded(self) -> bool:
        return self.status is TrialStatus.SUCCESS


@lru_cache(maxsize=64)
def _stencil(offsets, order):
    # weights c with sum_j c_j f(x + o_j h) = h**order f^(order)(x) for polynomials
    # up to degree len(offsets) - 1
    offs = np.asarray(offsets, dtype=float)
    k = offs.size
    vander = offs[None, :] ** np.arange(k)[:, None]
    rhs = np.zeros(k)
    rhs[order] = float(np.prod(np.arange(1, order + 1)))
    weights = np.linalg.solve(vander, rhs)
    # the exact weights are small-denominator rationals; drop solver round-off
    weights = np.array([float(Fraction(w).limit_denominator(10_000)) for w in weights])
    weights.setflags(write=False)
    return weights


def _central_halfwidth(order):
    return (order + 1) // 2


def finite_difference(series, order, dt):
    """Derivative of `order` by finite differences, same length as `series`.

    Interior samples use the narrowest symmetric stencil (second-order
    accurate); the first and last ``(order + 1) // 2`` samples use one-sided
    stencils of ``order + 2`` points. The result is exact, up to rounding, for
    polynomials of degree ``order + 1``.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise KinematicsError("finite_difference expects a 1-D series")
    order = int(order)
    if order < 1:
        raise KinematicsError(f"order must be a positive integer, got {order}")
    if not dt > 0:
        raise KinematicsError(f"dt must be positive, got {dt}")
    n = x.size
    if n <= order:
        raise KinematicsError(f"series of length {n} is too short for a derivative of order {order}")
    if not np.all(np.isfinite(x)):
        raise KinematicsError("series contains non-finite values")

    p = _central_halfwidth(order)
    out = np.empty(n)
    scale = dt ** order

    if n >= 2 * p + 1:
        w = _stencil(tuple(range(-p, p + 1)), order)
        acc = np.zeros(n - 2 * p)
        for j, wj in enumerate(w):
            acc += wj * x[j:n - 2 * p + j]
        out[p:n - p] = acc / scale
        edge = range(p)
    else:
        edge = range(n)

    width = min(order + 2, n)
    for i in edge:
        for idx in {i, n - 1 - i}:
            start = min(max(idx - width // 2, 0), n - width)
            offsets = tuple(range(start - idx, start - idx + width))
            w = _stencil(offsets, order)
            out[idx] = np.dot(w, x[start:start + width]) / scale
    return out


def _moving_average(samples, window):
    if window <= 1:
        return samples
    kernel = np.ones(window) / window
    pad = window // 2
    padded = np.pad(samples, ((pad, window - 1 - pad), (0, 0)), mode="edge")
    return np.column_stack([np.convolve(padded[:, k], kernel, mode="valid") for k in range(3)])


def compute_jerk(traj: Trajectory, smoothing_window: int = 0) -> np.ndarray:
    """Per-sample jerk (third derivative of position), shape ``(n, 3)``, m/s**3."""
    pos = _moving_average(traj.samples, int(smoothing_window))
    jerk = np.column_stack(
        [finite_difference(pos[:, k], JERK_ORDER, traj.dt) for k in range(3)])
    # differences of rounded positions are noise at this level; a straight
    # line at constant speed must score exactly zero
    floor = ROUNDOFF_FACTOR * np.finfo(float).eps * np.max(np.abs(pos)) / traj.dt ** JERK_ORDER
    jerk[np.abs(jerk) <= floor] = 0.0
    return jerk


def narj(traj: Trajectory, smoothing_window: int = 0) -> NarjScore:
    """Normalised averaged rectified jerk of a movement.

    ``T**3`` times the time-average of the jerk magnitude, the average taken as
    the mean over interior samples (boundary stencils are excluded). ``T`` is
    the trajectory duration in seconds.
    """
    jerk = compute_jerk(traj, smoothing_window)
    p = _central_halfwidth(JERK_ORDER)
    interior = jerk[p:traj.n_samples - p] if traj.n_samples > 2 * p else jerk
    magnitude = np.sqrt(np.sum(interior ** 2, axis=1))
    T = traj.duration_s
    return NarjScore.from_value(T ** 3 * float(np.mean(magnitude)), T)


def feedback_score(narj_value, cohort_min, cohort_max):
    """Map NARJ onto a 0-100 score where smoother (lower NARJ) scores higher."""
    if not np.isfinite(narj_value):
        raise KinematicsError(f"narj_value must be finite, got {narj_value}")
    if not cohort_min < cohort_max:
        raise KinematicsError(f"cohort_min ({cohort_min}) must be below cohort_max ({cohort_max})")
    clamped = min(max(float(narj_value), cohort_min), cohort_max)
    return 100.0 * (cohort_max - clamped) / (cohort_max - cohort_min)


def validate_trial(planning_traj: Trajectory, go_traj: Trajectory, target) -> TrialOutcome:
    """Classify a trial using the planning-drift and reach-timeout rules."""
    target = np.asarray(target, dtype=float)
    if target.shape != (3,) or not np.all(np.isfinite(target)):
        raise KinematicsError(f"target must be a finite (x, y, z) triple, got {target!r}")

    drift = np.linalg.norm(planning_traj.samples - planning_traj.samples[0], axis=1)
    planning_displacement = float(drift.max())

    elapsed = np.arange(go_traj.n_samples) / go_traj.sample_rate
    within = elapsed <= GO_TIMEOUT_S
    dist = np.linalg.norm(go_traj.samples[within] - target, axis=1)
    reached = np.flatnonzero(dist < REACH_RADIUS_M)
    residual = float(dist.min())

    if planning_displacement > PLANNING_MOVE_LIMIT_M:
        status = TrialStatus.FAILED_PLANNING_MOVE
        go_duration = float(elapsed[reached[0]]) if reached.size else GO_TIMEOUT_S
    elif reached.size == 0:
        status = TrialStatus.FAILED_TIMEOUT
        go_duration = GO_TIMEOUT_S
    else:
        status = TrialStatus.SUCCESS
        go_duration = float(elapsed[reached[0]])
    return TrialOutcome(status, planning_displacement, residual, go_duration)
