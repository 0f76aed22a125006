"""EEG preprocessing and the channels x bands log-bandpower feature tensor."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Sequence

import numpy as np

from .spectral import (
    CANONICAL_BANDS,
    EEG_OVERLAP,
    EEG_SEGMENT_LEN,
    BandDefinition,
    log_bandpowers,
)

__all__ = [
    "FeatureError",
    "UnknownChannel",
    "WindowOutOfBounds",
    "UnknownStrategy",
    "EegRecording",
    "FeatureTensor",
    "GO_WINDOW_S",
    "FLATTENING_ORDER",
    "canonical_channels",
    "select_channels",
    "common_average_reference",
    "extract_go_window",
    "artifact_removal_hook",
    "build_feature_tensor",
]

#: Trial-relative start and end of the analysed go-phase window, in seconds.
GO_WINDOW_S = (7.5, 17.5)

FLATTENING_ORDER = "channel_major"

ARTIFACT_STRATEGIES = ("passthrough",)


class FeatureError(ValueError):
    pass


class UnknownChannel(FeatureError, KeyError):
    pass


class WindowOutOfBounds(FeatureError):
    pass


class UnknownStrategy(FeatureError):
    pass


def canonical_channels():
    """The 118 10-5 system labels retained for analysis."""
    text = resources.files("motordecode").joinpath("data/channels_118.txt").read_text()
    return tuple(line.strip() for line in text.splitlines() if line.strip())


@dataclass(frozen=True)
class EegRecording:
    """Continuous multichannel EEG.

    `trial_markers` holds ``(trial_id, start_sample)`` pairs where the start
    sample is the first sample of the trial (its task baseline), not the go cue.
    """

    sample_rate: float
    channel_labels: tuple
    data: np.ndarray
    trial_markers: tuple = ()
    provenance: tuple = field(default=())

    def __post_init__(self):
        labels = tuple(self.channel_labels)
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise FeatureError(f"data must be channels x samples, got shape {data.shape}")
        if len(set(labels)) != len(labels):
            raise FeatureError("channel labels must be unique")
        if data.shape[0] != len(labels):
            raise FeatureError(f"{data.shape[0]} data rows but {len(labels)} channel labels")
        if not self.sample_rate > 0:
            raise FeatureError(f"sample_rate must be positive, got {self.sample_rate}")
        markers = tuple((str(tid), int(start)) for tid, start in self.trial_markers)
        for tid, start in markers:
            if not 0 <= start < data.shape[1]:
                raise FeatureError(f"marker for trial {tid} at sample {start} is outside the data")
        object.__setattr__(self, "channel_labels", labels)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "trial_markers", markers)
        object.__setattr__(self, "provenance", tuple(self.provenance))

    @property
    def n_channels(self):
        return self.data.shape[0]

    @property
    def n_samples(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class FeatureTensor:
    trial_ids: tuple
    values: np.ndarray
    channel_labels: tuple
    bands: tuple = CANONICAL_BANDS

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 3:
            raise FeatureError(f"values must be trials x channels x bands, got {values.shape}")
        if values.shape != (len(self.trial_ids), len(self.channel_labels), len(self.bands)):
            raise FeatureError(
                f"values shape {values.shape} disagrees with "
                f"{len(self.trial_ids)} trials, {len(self.channel_labels)} channels, "
                f"{len(self.bands)} bands")
        if not np.all(np.isfinite(values)):
            raise FeatureError("feature tensor contains non-finite values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "trial_ids", tuple(str(t) for t in self.trial_ids))
        object.__setattr__(self, "channel_labels", tuple(self.channel_labels))
        object.__setattr__(self, "bands", tuple(self.bands))

    @property
    def n_trials(self):
        return self.values.shape[0]

    @property
    def n_features(self):
        return self.values.shape[1] * self.values.shape[2]

    def flatten(self):
        """Trials x (channels * bands); feature ``c * n_bands + b``."""
        return self.values.reshape(self.n_trials, self.n_features)

    def feature_names(self):
        return [f"{c}:{b.name}" for c in self.channel_labels for b in self.bands]

    def subset(self, index):
        index = np.asarray(index)
        ids = tuple(np.asarray(self.trial_ids, dtype=object)[index])
        return replace(self, trial_ids=ids, values=self.values[index])


def select_channels(rec: EegRecording, keep: Sequence[str]) -> EegRecording:
    """Keep only the channels in `keep`, in that order."""
    lookup = {label: i for i, label in enumerate(rec.channel_labels)}
    missing = [label for label in keep if label not in lookup]
    if missing:
        raise UnknownChannel(f"channels not in recording: {', '.join(missing)}")
    rows = [lookup[label] for label in keep]
    return replace(rec, channel_labels=tuple(keep), data=rec.data[rows])


def common_average_reference(rec: EegRecording) -> EegRecording:
    if rec.n_channels < 2:
        raise FeatureError("common average reference needs at least 2 channels")
    data = rec.data - rec.data.mean(axis=0, keepdims=True)
    return replace(rec, data=data, provenance=rec.provenance + ("reference=common_average",))


def extract_go_window(rec: EegRecording, trial_id, window_s=GO_WINDOW_S) -> EegRecording:
    """Cut the trial-relative go-phase window ``[7.5 s, 17.5 s)`` out of `rec`."""
    starts = dict(rec.trial_markers)
    trial_id = str(trial_id)
    if trial_id not in starts:
        raise FeatureError(f"no marker for trial {trial_id!r}")
    lo = starts[trial_id] + int(round(window_s[0] * rec.sample_rate))
    hi = starts[trial_id] + int(round(window_s[1] * rec.sample_rate))
    if hi > rec.n_samples:
        raise WindowOutOfBounds(
            f"trial {trial_id}: window [{lo}, {hi}) exceeds recording of {rec.n_samples} samples")
    return replace(rec, data=rec.data[:, lo:hi], trial_markers=((trial_id, 0),))


def artifact_removal_hook(rec: EegRecording, strategy="passthrough") -> EegRecording:
    """Extension point for artifact cleaning; only ``passthrough`` ships."""
    if strategy not in ARTIFACT_STRATEGIES:
        raise UnknownStrategy(f"unknown artifact removal strategy {strategy!r}")
    return replace(rec, provenance=rec.provenance + (f"artifact_removal={strategy}",))


def build_feature_tensor(windows: Sequence[EegRecording], bands=CANONICAL_BANDS,
                         segment_len=EEG_SEGMENT_LEN, overlap_fraction=EEG_OVERLAP,
                         channel_labels=None) -> FeatureTensor:
    """Log-bandpower of every channel and band for each trial window.

    `channel_labels` is only needed to shape an empty tensor when `windows`
    is empty.
    """
    bands = tuple(bands)
    if not windows:
        labels = tuple(channel_labels or ())
        return FeatureTensor((), np.zeros((0, len(labels), len(bands))), labels, bands)
    labels = windows[0].channel_labels
    fs = windows[0].sample_rate
    for w in windows[1:]:
        if w.channel_labels != labels:
            raise FeatureError("trial windows do not share one channel layout")
        if w.sample_rate != fs:
            raise FeatureError("trial windows do not share one sample rate")
    values = np.stack([log_bandpowers(w.data, fs, bands, segment_len, overlap_fraction)
                       for w in windows])
    trial_ids = tuple(w.trial_markers[0][0] if w.trial_markers else str(i)
                      for i, w in enumerate(windows))
    return FeatureTensor(trial_ids, values, labels, bands)
