"""Readers and writers for trajectories, EEG, feature tensors, NARJ records and models.

File formats
------------
Trajectory CSV
    Header ``t,x,y,z``; time in seconds (strictly increasing, uniform
    sampling), positions in metres.
EEG CSV
    Header row of channel labels, then one sample per line. An optional JSON
    sidecar ``<file>.json`` carries ``sample_rate`` and ``markers``.
EEG binary
    Little-endian float32, laid out channel-major (all samples of the first
    channel, then the next channel). The JSON sidecar ``<file>.json`` holds
    ``sample_rate``, ``labels`` and ``markers`` (``[[trial_id, start_sample], ...]``).
Feature tensor
    ``<stem>.bin`` with little-endian float64 values of shape
    trials x channels x bands in C order, plus ``<stem>.json`` with
    ``trial_ids``, ``labels``, ``bands``, ``shape``, ``dtype`` and
    ``flattening_order``.
NARJ records
    JSON list of ``{trial_id, status, narj, log_narj, duration_s}``.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .features import FLATTENING_ORDER, EegRecording, FeatureTensor
from .kinematics import Trajectory
from .spectral import BandDefinition
from .transfer import LinearModel, PersonalizedModel, PriorModel, Standardization

__all__ = [
    "DataFormatError",
    "read_trajectory_csv",
    "write_trajectory_csv",
    "read_eeg",
    "write_eeg_csv",
    "write_eeg_binary",
    "read_feature_tensor",
    "write_feature_tensor",
    "read_narj_records",
    "write_json",
    "model_to_dict",
    "model_from_dict",
    "file_digest",
]

SAMPLING_JITTER_RTOL = 0.01


class DataFormatError(ValueError):
    pass


def write_json(obj, path):
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2) + "\n")
    return path


def file_digest(paths):
    """SHA-256 over the bytes of `paths`, in the given order."""
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def read_trajectory_csv(path) -> Trajectory:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    if header != ["t", "x", "y", "z"]:
        raise DataFormatError(f"{path}:1: expected header t,x,y,z, got {','.join(header)}")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise DataFormatError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
        try:
            values.append([float(c) for c in row])
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    data = np.asarray(values)
    if data.shape[0] < 4:
        raise DataFormatError(f"{path}: need at least 4 samples, got {data.shape[0]}")
    if not np.all(np.isfinite(data)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(data), axis=1))[0]) + 2
        raise DataFormatError(f"{path}:{bad}: non-finite value")
    dt = np.diff(data[:, 0])
    if np.any(dt <= 0):
        bad = int(np.flatnonzero(dt <= 0)[0]) + 3
        raise DataFormatError(f"{path}:{bad}: time is not strictly increasing")
    step = float(np.median(dt))
    if np.max(np.abs(dt - step)) > SAMPLING_JITTER_RTOL * step:
        raise DataFormatError(f"{path}: sampling interval is not uniform")
    return Trajectory(1.0 / step, data[:, 1:], t0=float(data[0, 0]))


def write_trajectory_csv(traj: Trajectory, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "z"])
        for t, (x, y, z) in zip(traj.times, traj.samples):
            writer.writerow([repr(float(t)), repr(float(x)), repr(float(y)), repr(float(z))])
    return path


def _sidecar(path):
    return Path(str(path) + ".json")


def read_eeg(path) -> EegRecording:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    meta_path = _sidecar(path)
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    markers = tuple(tuple(m) for m in meta.get("markers", ()))
    if path.suffix == ".csv":
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise DataFormatError(f"{path}: file is empty")
        labels = tuple(h.strip() for h in rows[0])
        try:
            data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
        except ValueError as exc:
            raise DataFormatError(f"{path}: {exc}") from None
        if "sample_rate" not in meta:
            raise DataFormatError(f"{meta_path}: sidecar with sample_rate is required")
        return EegRecording(float(meta["sample_rate"]), labels, data.T.reshape(len(labels), -1),
                            markers, (f"source={path.name}",))
    if not meta:
        raise DataFormatError(f"{meta_path}: binary EEG needs a JSON sidecar")
    try:
        labels = tuple(meta["labels"])
        fs = float(meta["sample_rate"])
    except KeyError as exc:
        raise DataFormatError(f"{meta_path}: missing key {exc}") from None
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % len(labels):
        raise DataFormatError(f"{path}: {raw.size} values do not fill {len(labels)} channels")
    data = raw.reshape(len(labels), -1).astype(float)
    return EegRecording(fs, labels, data, markers, (f"source={path.name}",))


def _eeg_meta(rec):
    return {"sample_rate": rec.sample_rate, "labels": list(rec.channel_labels),
            "markers": [[tid, start] for tid, start in rec.trial_markers],
            "layout": "channel_major", "dtype": "<f4"}


def write_eeg_binary(rec: EegRecording, path):
    path = Path(path)
    np.ascontiguousarray(rec.data, dtype="<f4").tofile(path)
    write_json(_eeg_meta(rec), _sidecar(path))
    return path


def write_eeg_csv(rec: EegRecording, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(rec.channel_labels)
        for frame in rec.data.T:
            writer.writerow([repr(float(v)) for v in frame])
    meta = _eeg_meta(rec)
    del meta["layout"], meta["dtype"]
    write_json(meta, _sidecar(path))
    return path


def _with(stem, suffix):
    return Path(str(stem) + suffix)


def write_feature_tensor(ft: FeatureTensor, stem):
    np.ascontiguousarray(ft.values, dtype="<f8").tofile(_with(stem, ".bin"))
    meta = {
        "trial_ids": list(ft.trial_ids),
        "labels": list(ft.channel_labels),
        "bands": [b.to_dict() for b in ft.bands],
        "shape": list(ft.values.shape),
        "dtype": "<f8",
        "flattening_order": FLATTENING_ORDER,
    }
    write_json(meta, _with(stem, ".json"))
    return _with(stem, ".bin")


def read_feature_tensor(stem) -> FeatureTensor:
    bin_path, meta_path = _with(stem, ".bin"), _with(stem, ".json")
    for p in (bin_path, meta_path):
        if not p.exists():
            raise FileNotFoundError(f"{p}: no such file")
    meta = json.loads(meta_path.read_text())
    if meta.get("flattening_order", FLATTENING_ORDER) != FLATTENING_ORDER:
        raise DataFormatError(f"{meta_path}: unsupported flattening order")
    values = np.fromfile(bin_path, dtype=meta.get("dtype", "<f8")).astype(float)
    shape = tuple(meta["shape"])
    if values.size != int(np.prod(shape)):
        raise DataFormatError(f"{bin_path}: {values.size} values, sidecar shape {shape}")
    bands = tuple(BandDefinition(b["name"], b["lo_hz"], b["hi_hz"]) for b in meta["bands"])
    return FeatureTensor(tuple(meta["trial_ids"]), values.reshape(shape), tuple(meta["labels"]), bands)


def read_narj_records(path):
    """Load NARJ records, keeping successful trials with a defined log-NARJ."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    records = json.loads(path.read_text())
    if not isinstance(records, list):
        raise DataFormatError(f"{path}: expected a JSON list of records")
    kept = []
    for i, rec in enumerate(records):
        missing = {"trial_id", "status", "narj", "log_narj"} - set(rec)
        if missing:
            raise DataFormatError(f"{path}: record {i} lacks {sorted(missing)}")
        if rec["status"] == "Success" and rec["log_narj"] is not None:
            kept.append(rec)
    return kept


def model_to_dict(model, provenance=None):
    """Serialise a LinearModel, PersonalizedModel or PriorModel to plain JSON types."""
    out = {"flattening_order": FLATTENING_ORDER}
    if isinstance(model, PriorModel):
        out.update({
            "kind": "prior",
            "feature_dim": model.n_features,
            "weights": model.mu.tolist(),
            "intercept": model.intercept,
            "standardization": model.standardization.to_dict(),
            "prior": {
                "mu": model.mu.tolist(),
                "sigma_encoding": model.sigma_encoding,
                "sigma": model.sigma.tolist(),
                "noise_variance": model.noise_variance,
                "contributing_subjects": model.contributing_subjects,
            },
        })
    else:
        base = model.base if isinstance(model, PersonalizedModel) else model
        out.update({
            "kind": "personalized" if isinstance(model, PersonalizedModel) else "linear",
            "feature_dim": base.n_features,
            "weights": base.weights.tolist(),
            "intercept": base.intercept,
            "standardization": base.standardization.to_dict(),
        })
        if isinstance(model, PersonalizedModel):
            out["prior_ref"] = model.prior_ref
            out["n_update_trials"] = model.n_update_trials
    out["provenance"] = dict(provenance or {})
    return out


def model_from_dict(d):
    try:
        std = Standardization.from_dict(d["standardization"])
        if d.get("kind") == "prior":
            p = d["prior"]
            sigma = np.asarray(p["sigma"], dtype=float)
            return PriorModel(np.asarray(p["mu"], dtype=float), sigma, float(p["noise_variance"]),
                              int(p["contributing_subjects"]), float(d["intercept"]), std,
                              p["sigma_encoding"])
        base = LinearModel(np.asarray(d["weights"], dtype=float), float(d["intercept"]), std)
        if d.get("kind") == "personalized":
            return PersonalizedModel(base, d["prior_ref"], int(d["n_update_trials"]))
        return base
    except KeyError as exc:
        raise DataFormatError(f"model file lacks field {exc}") from None
