"""Permutation tests used to validate the decoders.

Three procedures are provided: a subject-order permutation test on the
across-subject correlation, a trial-order permutation test on the mean
magnitude-squared coherence of one subject, and a group-level test of whether
a set of p-values departs from the standard uniform distribution.

Resampling is organised in fixed-size blocks. Block ``j`` of a test draws from
a generator seeded with ``(seed, j)``, so a test can be split across workers
block by block and still give the same p-value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import (
    COHERENCE_OVERLAP,
    _msc_from_spectra,
    _segment_spectra,
    coherence_segment_len,
    magnitude_squared_coherence,
)

__all__ = [
    "StatsError",
    "PermutationTestResult",
    "BLOCK_SIZE",
    "block_rng",
    "pearson",
    "subject_order_permutation_test",
    "trial_coherence_permutation_test",
    "cdf_deviation",
    "group_uniformity_test",
]

BLOCK_SIZE = 1000
# permuted statistics within this relative distance of the observed one count as ties
TIE_RTOL = 1e-12


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class PermutationTestResult:
    statistic_kind: str
    observed_statistic: float
    n_permutations: int
    p_value: float
    seed: int
    provenance: dict = field(default_factory=dict)

    def to_dict(self):
        d = {
            "statistic_kind": self.statistic_kind,
            "observed": self.observed_statistic,
            "n_permutations": self.n_permutations,
            "seed": self.seed,
            "p_value": self.p_value,
        }
        if self.provenance:
            d["provenance"] = dict(self.provenance)
        return d


def block_rng(seed, block):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(block)]))


def _blocks(n_total):
    for j, start in enumerate(range(0, n_total, BLOCK_SIZE)):
        yield j, min(BLOCK_SIZE, n_total - start)


def _permutation_rows(rng, m, n):
    return rng.permuted(np.tile(np.arange(n), (m, 1)), axis=1)


def _p_value(hits, n):
    return (1.0 + hits) / (1.0 + n)


def _count_ge(stats, observed):
    return int(np.sum(stats >= observed - TIE_RTOL * max(1.0, abs(observed))))


def pearson(x, y):
    """Sample Pearson correlation coefficient."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise StatsError(f"need two 1-D sequences of equal length, got {x.shape} and {y.shape}")
    if x.size < 3:
        raise StatsError(f"need at least 3 pairs, got {x.size}")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = xc @ xc
    syy = yc @ yc
    if sxx == 0 or syy == 0:
        raise StatsError("correlation undefined for a zero-variance input")
    return float(np.clip(xc @ yc / np.sqrt(sxx * syy), -1.0, 1.0))


def _abs_corr_rows(P, y):
    # |corr| of every row of P with y
    Pc = P - P.mean(axis=-1, keepdims=True)
    yc = y - y.mean()
    num = Pc @ yc
    den = np.sqrt(np.sum(Pc ** 2, axis=-1) * (yc @ yc))
    return np.abs(num / den)


def subject_order_permutation_test(predicted_means, observed_means, n_perm=10_000, seed=0):
    """Two-sided test of the across-subject correlation by shuffling subjects.

    The statistic is ``|pearson(predicted, observed)|``; only the predicted
    values are permuted.
    """
    pred = np.asarray(predicted_means, dtype=float)
    obs = np.asarray(observed_means, dtype=float)
    if pred.shape != obs.shape or pred.ndim != 1:
        raise StatsError("predicted and observed means must be 1-D and of equal length")
    if pred.size < 5:
        raise StatsError(f"need at least 5 subjects, got {pred.size}")
    pearson(pred, obs)  # validates variance
    observed = float(_abs_corr_rows(pred[None, :], obs)[0])
    hits = 0
    for j, m in _blocks(n_perm):
        perms = _permutation_rows(block_rng(seed, j), m, pred.size)
        hits += _count_ge(_abs_corr_rows(pred[perms], obs), observed)
    return PermutationTestResult("abs_correlation", observed, int(n_perm),
                                 _p_value(hits, n_perm), int(seed))


def trial_coherence_permutation_test(predicted, observed, n_perm=10_000, seed=0,
                                     segment_len=None, overlap_fraction=COHERENCE_OVERLAP):
    """Test the mean magnitude-squared coherence by shuffling trial order.

    The predicted series is permuted; the observed series and the segment
    layout stay fixed. Coherence is non-negative, so the test is one-sided.
    """
    pred = np.asarray(predicted, dtype=float)
    obs = np.asarray(observed, dtype=float)
    if pred.shape != obs.shape or pred.ndim != 1:
        raise StatsError("predicted and observed series must be 1-D and of equal length")
    if segment_len is None:
        segment_len = coherence_segment_len(pred.size)
    if pred.size < 2 * segment_len or segment_len < 2:
        raise StatsError(
            f"series of length {pred.size} is too short for two coherence segments")
    _, observed_stat = magnitude_squared_coherence(pred, obs, segment_len, overlap_fraction)

    sy, _ = _segment_spectra(obs, segment_len, overlap_fraction)
    hits = 0
    for j, m in _blocks(n_perm):
        perms = _permutation_rows(block_rng(seed, j), m, pred.size)
        sx, _ = _segment_spectra(pred[perms], segment_len, overlap_fraction)
        stats = _msc_from_spectra(sx, sy)[..., 1:].mean(axis=-1)
        hits += _count_ge(stats, observed_stat)
    return PermutationTestResult("mean_msc", float(observed_stat), int(n_perm),
                                 _p_value(hits, n_perm), int(seed),
                                 {"segment_len": int(segment_len),
                                  "overlap_fraction": float(overlap_fraction)})


def cdf_deviation(samples, n_bins=100):
    """Sum over bin right edges of |ECDF - uniform CDF|.

    `samples` may be 2-D, one sample set per row.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    edges = np.arange(1, n_bins + 1) / n_bins
    ecdf = np.mean(samples[:, :, None] <= edges, axis=1)
    out = np.sum(np.abs(ecdf - edges), axis=-1)
    return out if out.size > 1 else float(out[0])


def group_uniformity_test(p_values, n_bins=100, n_samples=1000, seed=0):
    """Are per-subject p-values consistent with a standard uniform law?

    The observed statistic compares the ECDF of `p_values` with the analytic
    uniform CDF; the null distribution is built from `n_samples` uniform
    samples of the same size.
    """
    p = np.asarray(p_values, dtype=float).ravel()
    if p.size < 5:
        raise StatsError(f"need at least 5 p-values, got {p.size}")
    if np.any(~np.isfinite(p)) or np.any(p <= 0) or np.any(p > 1):
        raise StatsError("p-values must lie in (0, 1]")
    observed = cdf_deviation(p, n_bins)
    hits = 0
    for j, m in _blocks(n_samples):
        draws = block_rng(seed, j).uniform(size=(m, p.size))
        hits += _count_ge(np.atleast_1d(cdf_deviation(draws, n_bins)), observed)
    return PermutationTestResult("cdf_deviation", float(observed), int(n_samples),
                                 _p_value(hits, n_samples), int(seed),
                                 {"reference_cdf": "analytic_uniform", "n_bins": int(n_bins)})
