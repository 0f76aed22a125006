"""Encoding topographies: per channel-band correlation of features with predictions."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import FeatureTensor

__all__ = [
    "EncodingError",
    "EncodingTopography",
    "encoding_topography",
    "mean_topography",
    "pairwise_cosine_similarity",
    "write_topography_csv",
    "read_topography_csv",
]


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class EncodingTopography:
    values: np.ndarray
    channel_labels: tuple
    band_names: tuple
    subject_id: str = ""
    zero_variance: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.channel_labels), len(self.band_names)):
            raise EncodingError(f"values shape {values.shape} does not match labels")
        flags = self.zero_variance
        flags = np.zeros(values.shape, dtype=bool) if flags is None else np.asarray(flags, dtype=bool)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "zero_variance", flags)
        object.__setattr__(self, "channel_labels", tuple(self.channel_labels))
        object.__setattr__(self, "band_names", tuple(self.band_names))

    def to_dict(self):
        return {
            "subject_id": self.subject_id,
            "channel_labels": list(self.channel_labels),
            "band_names": list(self.band_names),
            "values": self.values.tolist(),
        }


def encoding_topography(predictions, features: FeatureTensor, subject_id="") -> EncodingTopography:
    """Pearson correlation between predictions and every channel-band feature.

    Features that are constant across trials get 0.0 and are marked in
    ``zero_variance``.
    """
    yhat = np.asarray(predictions, dtype=float).ravel()
    if yhat.size != features.n_trials:
        raise EncodingError(f"{yhat.size} predictions for {features.n_trials} trials")
    yc = yhat - yhat.mean()
    syy = yc @ yc
    if not syy > 0:
        raise EncodingError("predictions have zero variance")
    X = features.values
    Xc = X - X.mean(axis=0)
    sxx = np.einsum("tcb,tcb->cb", Xc, Xc)
    sxy = np.einsum("tcb,t->cb", Xc, yc)
    flags = sxx <= 0
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(flags, 0.0, sxy / np.sqrt(np.where(flags, 1.0, sxx) * syy))
    return EncodingTopography(np.clip(rho, -1.0, 1.0), features.channel_labels,
                              tuple(b.name for b in features.bands), subject_id, flags)


def mean_topography(topos: Sequence[EncodingTopography], subject_id="mean") -> EncodingTopography:
    """Elementwise mean of per-subject correlation maps."""
    if not topos:
        raise EncodingError("no topographies to average")
    first = topos[0]
    for t in topos[1:]:
        if t.channel_labels != first.channel_labels or t.band_names != first.band_names:
            raise EncodingError("topographies differ in channel or band layout")
    values = np.mean([t.values for t in topos], axis=0)
    flags = np.all([t.zero_variance for t in topos], axis=0)
    return EncodingTopography(values, first.channel_labels, first.band_names, subject_id, flags)


def pairwise_cosine_similarity(topos: Sequence[EncodingTopography]):
    """Cosine similarity between the flattened maps of every pair of subjects."""
    V = np.stack([t.values.ravel() for t in topos])
    norms = np.linalg.norm(V, axis=1)
    norms = np.where(norms > 0, norms, 1.0)
    U = V / norms[:, None]
    return U @ U.T


def write_topography_csv(topo: EncodingTopography, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel", *topo.band_names])
        for label, row in zip(topo.channel_labels, topo.values):
            writer.writerow([label, *(repr(float(v)) for v in row)])
    return path


def read_topography_csv(path, subject_id=""):
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "channel":
        raise EncodingError(f"{path}: not a topography CSV")
    bands = tuple(rows[0][1:])
    labels = tuple(r[0] for r in rows[1:])
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return EncodingTopography(values, labels, bands, subject_id)
