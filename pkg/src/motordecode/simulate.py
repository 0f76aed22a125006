"""Synthetic ground truth: trajectories, EEG, protocol sessions and cohorts."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .features import EegRecording, FeatureTensor, canonical_channels
from .kinematics import (
    GO_TIMEOUT_S,
    PLANNING_MOVE_LIMIT_M,
    REACH_RADIUS_M,
    TrialStatus,
    Trajectory,
)
from .spectral import CANONICAL_BANDS, BandDefinition

__all__ = [
    "SimulationError",
    "NyquistViolation",
    "CohortConfig",
    "SimulatedSubject",
    "Cohort",
    "SessionTrial",
    "gen_min_jerk_trajectory",
    "gen_synthetic_eeg",
    "gen_cohort",
    "gen_adaptation_curve",
    "gen_session",
    "gen_single_driver_subject",
    "expected_snr",
]

# per-band log-power baselines, roughly 1/f shaped
_BAND_BASELINE = {"delta": 3.0, "theta": 2.4, "alpha": 2.2, "beta": 1.2, "high_gamma": -0.8}


class SimulationError(ValueError):
    pass


class NyquistViolation(SimulationError):
    pass


def _rng(seed, *stream):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))


def gen_min_jerk_trajectory(duration_s, start, end, sample_rate=960.0, noise_std_m=0.0, seed=0):
    """Minimum-jerk point-to-point reach sampled on ``[0, duration_s]``."""
    if not duration_s > 0:
        raise SimulationError(f"duration must be positive, got {duration_s}")
    if not sample_rate > 0:
        raise SimulationError(f"sample_rate must be positive, got {sample_rate}")
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    n = int(round(duration_s * sample_rate)) + 1
    tau = np.arange(n) / sample_rate / duration_s
    shape = 10 * tau ** 3 - 15 * tau ** 4 + 6 * tau ** 5
    pos = start + np.outer(shape, end - start)
    if noise_std_m > 0:
        pos = pos + _rng(seed, 1).normal(0.0, noise_std_m, size=pos.shape)
    return Trajectory(sample_rate, pos)


def gen_synthetic_eeg(band_amplitudes: Mapping[str, float], n_channels=118, duration_s=10.0,
                      fs=500.0, seed=0, bands: Sequence[BandDefinition] = CANONICAL_BANDS,
                      channel_labels=None):
    """Sinusoids at band centres with random phases plus unit white noise.

    `band_amplitudes` maps band names to sinusoid amplitudes; bands left out
    get amplitude zero.
    """
    by_name = {b.name: b for b in bands}
    unknown = set(band_amplitudes) - set(by_name)
    if unknown:
        raise SimulationError(f"unknown bands: {sorted(unknown)}")
    top = max(b.hi_hz for b in bands)
    if not fs > 2 * top:
        raise NyquistViolation(f"fs={fs} Hz cannot represent band edges up to {top} Hz")
    rng = _rng(seed, 2)
    n = int(round(duration_s * fs))
    t = np.arange(n) / fs
    data = rng.normal(size=(n_channels, n))
    for name, amp in band_amplitudes.items():
        if amp == 0:
            continue
        phase = rng.uniform(0, 2 * np.pi, size=(n_channels, 1))
        data += amp * np.sin(2 * np.pi * by_name[name].center_hz * t + phase)
    if channel_labels is None:
        canon = canonical_channels()
        channel_labels = canon[:n_channels] if n_channels <= len(canon) else \
            tuple(f"ch{i}" for i in range(n_channels))
    return EegRecording(fs, tuple(channel_labels), data)


def gen_adaptation_curve(n_trials, initial_level, final_level, time_constant_trials,
                         noise_std=0.0, seed=0):
    """Exponential approach from `initial_level` to `final_level` over trials."""
    if n_trials < 1:
        raise SimulationError(f"n_trials must be >= 1, got {n_trials}")
    if not time_constant_trials > 0:
        raise SimulationError(f"time constant must be positive, got {time_constant_trials}")
    t = np.arange(n_trials, dtype=float)
    y = final_level + (initial_level - final_level) * np.exp(-t / time_constant_trials)
    if noise_std > 0:
        y = y + _rng(seed, 3).normal(0.0, noise_std, size=n_trials)
    return y


@dataclass
class CohortConfig:
    """Generative settings for a synthetic cohort of feature/log-NARJ data.

    Subject weights are ``mask * (population_mean + deviation)`` with a sparse
    mask shared across subjects. Features combine a subject-level offset, a
    shared low-rank factor structure and independent noise.
    """

    n_subjects: int = 26
    n_trials: Optional[int] = None
    trials_range: tuple = (89, 98)
    n_channels: int = 118
    bands: tuple = CANONICAL_BANDS
    k_update: int = 20
    weight_mean_scale: float = 0.05
    weight_cov: float = 0.2 ** 2
    noise_std: float = 0.5
    sparsity: float = 0.05
    band_mask: Optional[tuple] = None
    factor_rank: int = 10
    factor_scale: float = 0.5
    subject_offset_std: float = 0.5
    offset_factor_std: float = 2.0
    intercept: float = 3.0
    seed: int = 0

    def __post_init__(self):
        self.bands = tuple(self.bands)
        self.trials_range = tuple(self.trials_range)
        if self.n_subjects < 1 or self.n_channels < 1 or not self.bands:
            raise SimulationError("subject, channel and band counts must be >= 1")
        if self.n_trials is not None and self.n_trials < 1:
            raise SimulationError(f"n_trials must be >= 1, got {self.n_trials}")
        lo, hi = self.trials_range
        if not 1 <= lo <= hi:
            raise SimulationError(f"invalid trials_range {self.trials_range}")
        if self.noise_std < 0 or np.any(np.asarray(self.weight_cov) < 0):
            raise SimulationError("noise_std and weight_cov must be non-negative")
        if not 0 < self.sparsity <= 1:
            raise SimulationError(f"sparsity must lie in (0, 1], got {self.sparsity}")
        if self.factor_rank < 0:
            raise SimulationError("factor_rank must be >= 0")
        if self.band_mask is not None:
            names = {b.name for b in self.bands}
            bad = set(self.band_mask) - names
            if bad:
                raise SimulationError(f"band_mask names unknown bands: {sorted(bad)}")

    @property
    def n_features(self):
        return self.n_channels * len(self.bands)

    def to_dict(self):
        d = asdict(self)
        d["bands"] = [b.to_dict() for b in self.bands]
        d["trials_range"] = list(self.trials_range)
        d["band_mask"] = None if self.band_mask is None else list(self.band_mask)
        d["weight_cov"] = np.asarray(self.weight_cov).tolist()
        return d


@dataclass
class SimulatedSubject:
    subject_id: str
    features: FeatureTensor
    log_narj: np.ndarray
    true_weights: np.ndarray
    true_intercept: float

    @property
    def noiseless(self):
        return self.features.flatten() @ self.true_weights + self.true_intercept


@dataclass
class Cohort:
    config: CohortConfig
    subjects: list
    population_mean: np.ndarray
    support: np.ndarray = field(repr=False)


def _channel_labels(n):
    canon = canonical_channels()
    return canon[:n] if n <= len(canon) else tuple(f"ch{i:03d}" for i in range(n))


def gen_cohort(config: CohortConfig) -> Cohort:
    """Draw a cohort with known per-subject weights.

    Subject `s` draws from a stream seeded with ``(seed, s)`` and population
    quantities from a separate fixed stream, so the cohort is reproducible bit
    for bit and subjects can be generated independently.
    """
    C, B = config.n_channels, len(config.bands)
    F = C * B
    pop = _rng(config.seed, 10_000_000)

    allowed = np.ones((C, B), dtype=bool)
    if config.band_mask is not None:
        keep = [b.name in config.band_mask for b in config.bands]
        allowed[:] = np.asarray(keep)[None, :]
    candidates = np.flatnonzero(allowed.ravel())
    n_support = max(1, int(round(config.sparsity * F)))
    n_support = min(n_support, candidates.size)
    support = np.sort(pop.choice(candidates, size=n_support, replace=False))
    mask = np.zeros(F)
    mask[support] = 1.0

    mu_star = np.zeros(F)
    mu_star[support] = pop.normal(0.0, config.weight_mean_scale, size=n_support)
    loadings = pop.normal(0.0, config.factor_scale, size=(F, config.factor_rank)) \
        / np.sqrt(max(config.factor_rank, 1))
    baseline = np.tile([_BAND_BASELINE.get(b.name, 0.0) for b in config.bands], C)
    weight_sd = np.sqrt(np.broadcast_to(np.asarray(config.weight_cov, dtype=float), (F,)))

    labels = _channel_labels(C)
    subjects = []
    for s in range(config.n_subjects):
        rng = _rng(config.seed, s)
        if config.n_trials is not None:
            n = config.n_trials
        else:
            n = int(rng.integers(config.trials_range[0], config.trials_range[1] + 1))
        w = mask * (mu_star + weight_sd * rng.normal(size=F))
        offset = (baseline + loadings @ (config.offset_factor_std * rng.normal(size=config.factor_rank))
                  + config.subject_offset_std * rng.normal(size=F))
        factors = rng.normal(size=(n, config.factor_rank))
        X = offset + factors @ loadings.T + rng.normal(size=(n, F))
        y = X @ w + config.intercept + config.noise_std * rng.normal(size=n)
        ft = FeatureTensor(tuple(f"t{i:03d}" for i in range(n)), X.reshape(n, C, B), labels,
                           config.bands)
        subjects.append(SimulatedSubject(f"S{s + 1:02d}", ft, y, w, config.intercept))
    return Cohort(config, subjects, mu_star, support)


def expected_snr(config: CohortConfig) -> float:
    """Average within-subject ratio var(X w) / noise variance implied by `config`."""
    n_support = max(1, int(round(config.sparsity * config.n_features)))
    weight_var = config.weight_mean_scale ** 2 + float(np.mean(config.weight_cov))
    feature_var = 1.0 + config.factor_scale ** 2
    return n_support * weight_var * feature_var / max(config.noise_std, 1e-12) ** 2


def gen_single_driver_subject(config: Optional[CohortConfig] = None, driver=None, snr=None,
                              n_trials=None, seed=0):
    """One subject whose log-NARJ depends on a single channel-band feature.

    Features follow the cohort feature model of `config`. The driver (a flat
    feature index, random by default) gets the weight that gives signal to
    noise ratio `snr`, which defaults to `expected_snr(config)`.

    Returns
    -------
    subject : SimulatedSubject
    driver : int
    """
    config = config or CohortConfig()
    C, B = config.n_channels, len(config.bands)
    F = C * B
    rng = _rng(seed, 5)
    if driver is None:
        driver = int(rng.integers(F))
    if not 0 <= driver < F:
        raise SimulationError(f"driver index {driver} outside 0..{F - 1}")
    snr = expected_snr(config) if snr is None else float(snr)
    n = n_trials or int(rng.integers(config.trials_range[0], config.trials_range[1] + 1))

    loadings = rng.normal(0.0, config.factor_scale, size=(F, config.factor_rank)) \
        / np.sqrt(max(config.factor_rank, 1))
    baseline = np.tile([_BAND_BASELINE.get(b.name, 0.0) for b in config.bands], C)
    X = (baseline + config.subject_offset_std * rng.normal(size=F)
         + rng.normal(size=(n, config.factor_rank)) @ loadings.T + rng.normal(size=(n, F)))
    w = np.zeros(F)
    feature_var = 1.0 + float(loadings[driver] @ loadings[driver])
    w[driver] = config.noise_std * np.sqrt(snr / feature_var) * rng.choice([-1.0, 1.0])
    y = X @ w + config.intercept + config.noise_std * rng.normal(size=n)
    ft = FeatureTensor(tuple(f"t{i:03d}" for i in range(n)), X.reshape(n, C, B),
                       _channel_labels(C), config.bands)
    return SimulatedSubject("S01", ft, y, w, config.intercept), driver


@dataclass
class SessionTrial:
    trial_id: str
    planted_status: TrialStatus
    planning: Trajectory
    go: Trajectory
    target: np.ndarray


def gen_session(n_trials=100, failure_range=(2, 11), sample_rate=120.0, seed=0):
    """Simulate one session of reaching trials with a planted number of failures.

    The failure count is uniform over `failure_range`, so after exclusion the
    number of successful trials lies in
    ``[n_trials - failure_range[1], n_trials - failure_range[0]]``. Failed
    trials are split between planning-phase drift and go-phase timeouts.
    """
    rng = _rng(seed, 4)
    n_fail = int(rng.integers(failure_range[0], failure_range[1] + 1))
    fail_idx = set(rng.choice(n_trials, size=n_fail, replace=False).tolist())
    home = np.array([0.0, -0.4, 0.0])
    trials = []
    for i in range(n_trials):
        target = home + rng.uniform([-0.25, 0.2, 0.15], [0.25, 0.5, 0.45])
        plan_s = rng.uniform(2.5, 4.0)
        n_plan = int(plan_s * sample_rate)
        planning = home + rng.normal(0.0, 0.002, size=(n_plan, 3))
        status = TrialStatus.SUCCESS
        reach_s = rng.uniform(0.8, 2.5)
        end = target + rng.normal(0.0, 0.005, size=3)
        if i in fail_idx:
            if rng.random() < 0.5:
                status = TrialStatus.FAILED_PLANNING_MOVE
                drift = rng.uniform(1.5, 3.0) * PLANNING_MOVE_LIMIT_M
                planning[n_plan // 2:] += np.array([drift, 0.0, 0.0])
            else:
                status = TrialStatus.FAILED_TIMEOUT
                # sideways miss so the straight path never crosses the target zone
                reach_dir = (target - home) / np.linalg.norm(target - home)
                direction = rng.normal(size=3)
                direction -= direction.dot(reach_dir) * reach_dir
                direction /= np.linalg.norm(direction)
                end = target + rng.uniform(2.0, 4.0) * REACH_RADIUS_M * direction
                reach_s = GO_TIMEOUT_S + 0.5
        reach = gen_min_jerk_trajectory(reach_s, home, end, sample_rate)
        trials.append(SessionTrial(f"trial{i + 1:03d}", status,
                                   Trajectory(sample_rate, planning), reach, target))
    return trials
