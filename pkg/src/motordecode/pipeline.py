"""End-to-end orchestration: cohort loading, LOSO evaluation, tests, encoding, reports."""

from __future__ import annotations

import csv
import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import io
from .encoding import (
    encoding_topography,
    mean_topography,
    pairwise_cosine_similarity,
    write_topography_csv,
)
from .features import FeatureTensor
from .simulate import CohortConfig, gen_cohort
from .spectral import CANONICAL_BANDS, BandDefinition
from .stats import (
    group_uniformity_test,
    pearson,
    subject_order_permutation_test,
    trial_coherence_permutation_test,
)
from .transfer import SubjectData, loso_evaluate

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "SchemaError",
    "RunConfig",
    "CohortSubject",
    "SUMMARY_SCHEMA",
    "load_config",
    "derive_seed",
    "load_cohort_dir",
    "write_cohort_dir",
    "simulate_cohort",
    "run_pipeline",
    "write_outputs",
    "validate_summary",
    "write_report_csvs",
    "format_summary_table",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = "motordecode.summary/1"
MODELS = ("personalized", "prior")

#: Required keys of the summary JSON, by dotted path.
SUMMARY_SCHEMA = (
    "schema",
    "config",
    "provenance",
    "provenance.seed",
    "provenance.input_sha256",
    "n_subjects",
    "results",
    *(f"results.{m}.{k}" for m in MODELS for k in (
        "subject_correlation", "subject_correlation.rho", "subject_correlation.p_value",
        "mean_coherence", "coherence_tests", "group_test", "group_test.p_value", "mean_mse")),
    "subjects",
    "topographies",
    "topographies.band_names",
    "topographies.channel_labels",
    "topographies.subjects",
    "topographies.mean",
    "topographies.mean_pairwise_cosine",
)


class ConfigError(ValueError):
    pass


class SchemaError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    k_update: int = 20
    eval_window: int = 50
    n_permutations: int = 10_000
    n_group_samples: int = 1_000
    n_bins: int = 100
    lam: float = 10.0
    shrinkage: float = 0.9
    sigma_floor: float = 1e-6
    sigma_encoding: str = "dense"
    bands: tuple = CANONICAL_BANDS
    eeg_segment_len: int = 500
    eeg_overlap: float = 0.5
    coherence_max_segment: int = 32
    coherence_overlap: float = 0.5
    artifact_removal: str = "passthrough"
    encoding_target: str = "predictions"
    encoding_trials: str = "evaluation"
    simulate: dict = field(default_factory=dict)
    # execution settings; not part of the serialised provenance
    input_dir: Optional[str] = None
    out_dir: str = "out"
    workers: int = 1

    RUNTIME_FIELDS = ("input_dir", "out_dir", "workers")

    def __post_init__(self):
        self.bands = tuple(b if isinstance(b, BandDefinition) else BandDefinition(**b)
                           for b in self.bands)
        if self.encoding_target not in ("predictions", "observed"):
            raise ConfigError("encoding_target must be 'predictions' or 'observed'")
        if self.encoding_trials not in ("evaluation", "all"):
            raise ConfigError("encoding_trials must be 'evaluation' or 'all'")
        for name in ("k_update", "eval_window", "n_permutations", "n_group_samples", "n_bins"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)
             if f.name not in self.RUNTIME_FIELDS}
        d["bands"] = [b.to_dict() for b in self.bands]
        d["simulate"] = dict(self.simulate)
        return d

    def cohort_config(self):
        opts = dict(self.simulate)
        opts.setdefault("seed", self.seed)
        opts.setdefault("k_update", self.k_update)
        opts.setdefault("bands", self.bands)
        opts["bands"] = tuple(b if isinstance(b, BandDefinition) else BandDefinition(**b)
                              for b in opts["bands"])
        try:
            return CohortConfig(**opts)
        except TypeError as exc:
            raise ConfigError(f"[simulate]: {exc}") from None


# TOML section/key -> RunConfig attribute
_CONFIG_KEYS = {
    ("run", "seed"): "seed",
    ("run", "k_update"): "k_update",
    ("run", "eval_window"): "eval_window",
    ("run", "n_permutations"): "n_permutations",
    ("run", "n_group_samples"): "n_group_samples",
    ("run", "n_bins"): "n_bins",
    ("run", "workers"): "workers",
    ("model", "lambda"): "lam",
    ("model", "shrinkage"): "shrinkage",
    ("model", "sigma_floor"): "sigma_floor",
    ("model", "sigma_encoding"): "sigma_encoding",
    ("features", "bands"): "bands",
    ("features", "segment_len"): "eeg_segment_len",
    ("features", "overlap"): "eeg_overlap",
    ("features", "artifact_removal"): "artifact_removal",
    ("coherence", "max_segment"): "coherence_max_segment",
    ("coherence", "overlap"): "coherence_overlap",
    ("encoding", "target"): "encoding_target",
    ("encoding", "trials"): "encoding_trials",
    ("paths", "input"): "input_dir",
    ("paths", "output"): "out_dir",
}


def load_config(path=None, **overrides) -> RunConfig:
    """Read a TOML run configuration; keyword overrides (e.g. from flags) win."""
    values = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"{path}: no such file")
        try:
            doc = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section, table in doc.items():
            if section == "simulate":
                values["simulate"] = dict(table)
                continue
            if not isinstance(table, dict):
                raise ConfigError(f"{path}: top-level key {section!r} must be a table")
            for key, value in table.items():
                attr = _CONFIG_KEYS.get((section, key))
                if attr is None:
                    raise ConfigError(f"{path}: unknown key [{section}] {key}")
                values[attr] = value
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def derive_seed(seed, *labels):
    """Stable 63-bit seed derived from a base seed and string/int labels."""
    h = hashlib.sha256(repr((int(seed),) + tuple(labels)).encode())
    return int.from_bytes(h.digest()[:8], "little") >> 1


@dataclass
class CohortSubject:
    subject_id: str
    features: FeatureTensor
    log_narj: np.ndarray


def write_cohort_dir(subjects, path):
    """Write ``<id>.features.{bin,json}`` and ``<id>.narj.json`` per subject."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for subj in subjects:
        io.write_feature_tensor(subj.features, path / f"{subj.subject_id}.features")
        records = [{"trial_id": tid, "status": "Success", "narj": float(np.exp(v)),
                    "log_narj": float(v), "duration_s": None}
                   for tid, v in zip(subj.features.trial_ids, subj.log_narj)]
        io.write_json(records, path / f"{subj.subject_id}.narj.json")
    return path


def load_cohort_dir(path):
    """Load a cohort directory; trials are matched by id and failed trials dropped.

    Returns the subjects and the SHA-256 of all input files.
    """
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"{path}: not a directory")
    stems = sorted(p.name[: -len(".features.json")] for p in path.glob("*.features.json"))
    if not stems:
        raise io.DataFormatError(f"{path}: no *.features.json files")
    subjects, files = [], []
    for sid in stems:
        ft = io.read_feature_tensor(path / f"{sid}.features")
        records = io.read_narj_records(path / f"{sid}.narj.json")
        by_id = {str(r["trial_id"]): float(r["log_narj"]) for r in records}
        keep = [i for i, tid in enumerate(ft.trial_ids) if tid in by_id]
        ft = ft.subset(keep)
        y = np.array([by_id[tid] for tid in ft.trial_ids])
        subjects.append(CohortSubject(sid, ft, y))
        files += [path / f"{sid}.features.bin", path / f"{sid}.features.json",
                  path / f"{sid}.narj.json"]
    return subjects, io.file_digest(files)


def simulate_cohort(cfg: RunConfig):
    """Synthetic cohort for `cfg`, plus a digest of its arrays."""
    cohort = gen_cohort(cfg.cohort_config())
    h = hashlib.sha256()
    subjects = []
    for s in cohort.subjects:
        h.update(np.ascontiguousarray(s.features.values, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(s.log_narj, dtype="<f8").tobytes())
        subjects.append(CohortSubject(s.subject_id, s.features, s.log_narj))
    return subjects, h.hexdigest(), cohort


def _coherence_job(args):
    pred, obs, n_perm, seed, seg, overlap = args
    return trial_coherence_permutation_test(pred, obs, n_perm, seed, seg, overlap)


def _final_window(ev, window):
    n = min(window, ev.observed.size)
    return slice(ev.observed.size - n, ev.observed.size)


def run_pipeline(cfg: RunConfig, subjects, input_digest):
    """LOSO evaluation, all statistical tests and encoding maps for a cohort.

    Returns ``(summary, topographies)`` where `summary` follows
    `SUMMARY_SCHEMA` and `topographies` maps subject ids (and ``"mean"``) to
    `EncodingTopography` objects.
    """
    data = [SubjectData(s.subject_id, s.features.flatten(), s.log_narj) for s in subjects]
    log.info("LOSO evaluation over %d subjects", len(data))
    evals = loso_evaluate(data, cfg.k_update, cfg.lam, cfg.shrinkage, cfg.sigma_floor,
                          cfg.sigma_encoding, workers=cfg.workers)

    windows = [_final_window(ev, cfg.eval_window) for ev in evals]
    observed_means = np.array([ev.observed[w].mean() for ev, w in zip(evals, windows)])

    jobs = []
    for model in MODELS:
        for i, ev in enumerate(evals):
            pred = getattr(ev, f"{model}_pred")
            seg = min(cfg.coherence_max_segment, pred.size // 2)
            jobs.append((pred, ev.observed, cfg.n_permutations,
                         derive_seed(cfg.seed, "coherence", model, i), seg, cfg.coherence_overlap))
    log.info("running %d trial-order coherence tests", len(jobs))
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            coh = list(pool.map(_coherence_job, jobs))
    else:
        coh = [_coherence_job(j) for j in jobs]

    results = {}
    for m_idx, model in enumerate(MODELS):
        preds = [getattr(ev, f"{model}_pred") for ev in evals]
        pred_means = np.array([p[w].mean() for p, w in zip(preds, windows)])
        corr = subject_order_permutation_test(pred_means, observed_means, cfg.n_permutations,
                                              derive_seed(cfg.seed, "subject_order", model))
        tests = coh[m_idx * len(evals):(m_idx + 1) * len(evals)]
        group = group_uniformity_test([t.p_value for t in tests], cfg.n_bins,
                                      cfg.n_group_samples, derive_seed(cfg.seed, "group", model))
        mse = [float(np.mean((p - ev.observed) ** 2)) for p, ev in zip(preds, evals)]
        results[model] = {
            "subject_correlation": {
                "rho": pearson(pred_means, observed_means),
                "p_value": corr.p_value,
                "test": corr.to_dict(),
            },
            "mean_coherence": float(np.mean([t.observed_statistic for t in tests])),
            "coherence_tests": [
                {"subject_id": ev.subject_id, "mean_msc": t.observed_statistic,
                 "p_value": t.p_value, "seed": t.seed}
                for ev, t in zip(evals, tests)],
            "group_test": group.to_dict(),
            "mean_mse": float(np.mean(mse)),
        }
    results["personalized_mse_wins"] = int(sum(
        ev.personalized_mse < ev.prior_mse for ev in evals))

    topographies = {}
    for subj, ev in zip(subjects, evals):
        if cfg.encoding_trials == "evaluation":
            ft = subj.features.subset(ev.eval_index)
            target = ev.personalized_pred if cfg.encoding_target == "predictions" else ev.observed
        else:
            ft = subj.features
            target = (ev.personalized.predict(ft.flatten()) if cfg.encoding_target == "predictions"
                      else subj.log_narj)
        topographies[ev.subject_id] = encoding_topography(target, ft, ev.subject_id)
    per_subject = list(topographies.values())
    topographies["mean"] = mean_topography(per_subject)
    cos = pairwise_cosine_similarity(per_subject)
    off_diag = cos[~np.eye(len(per_subject), dtype=bool)]

    first = per_subject[0]
    summary = {
        "schema": SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "provenance": {
            "seed": cfg.seed,
            "input_sha256": input_digest,
            "standardized_features": True,
            "reference_cdf": "analytic_uniform",
            "artifact_removal": cfg.artifact_removal,
            "encoding_target": cfg.encoding_target,
            "encoding_trials": cfg.encoding_trials,
        },
        "n_subjects": len(evals),
        "results": results,
        "subjects": [
            {
                "subject_id": ev.subject_id,
                "n_trials": int(subj.log_narj.size),
                "observed_all": subj.log_narj.tolist(),
                "eval_index": ev.eval_index.tolist(),
                "observed": ev.observed.tolist(),
                "personalized_pred": ev.personalized_pred.tolist(),
                "prior_pred": ev.prior_pred.tolist(),
                "observed_final_mean": float(observed_means[i]),
                "personalized_final_mean": float(ev.personalized_pred[windows[i]].mean()),
                "prior_final_mean": float(ev.prior_pred[windows[i]].mean()),
                "personalized_mse": ev.personalized_mse,
                "prior_mse": ev.prior_mse,
            }
            for i, (subj, ev) in enumerate(zip(subjects, evals))],
        "topographies": {
            "band_names": list(first.band_names),
            "channel_labels": list(first.channel_labels),
            "subjects": {sid: t.values.tolist() for sid, t in topographies.items() if sid != "mean"},
            "mean": topographies["mean"].values.tolist(),
            "mean_pairwise_cosine": float(off_diag.mean()) if off_diag.size else 1.0,
        },
    }
    return summary, topographies, evals


def write_outputs(summary, topographies, evals, out_dir):
    """Write summary.json, topography CSVs and personalized model files."""
    out = Path(out_dir)
    (out / "topographies").mkdir(parents=True, exist_ok=True)
    (out / "models").mkdir(parents=True, exist_ok=True)
    for sid, topo in topographies.items():
        write_topography_csv(topo, out / "topographies" / f"{sid}.csv")
    for ev in evals:
        io.write_json(io.model_to_dict(ev.personalized, {
            "seed": summary["config"]["seed"], "lambda": summary["config"]["lam"],
            "gamma": summary["config"]["shrinkage"], "k_update": summary["config"]["k_update"],
        }), out / "models" / f"{ev.subject_id}.personalized.json")
    return io.write_json(summary, out / "summary.json")


def validate_summary(summary):
    for dotted in SUMMARY_SCHEMA:
        node = summary
        for part in dotted.split("."):
            if not isinstance(node, dict) or part not in node:
                raise SchemaError(f"summary is missing field '{dotted}'")
            node = node[part]
    return summary


def _write_csv(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return Path(path)


def write_report_csvs(summary, out_dir):
    """Plot data for the performance, scatter, coherence, trace and topography figures."""
    validate_summary(summary)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    subjects = summary["subjects"]
    paths = []

    n_min = min(s["n_trials"] for s in subjects)
    perf = np.array([s["observed_all"][:n_min] for s in subjects])
    paths.append(_write_csv(out / "performance_over_trials.csv",
                            ["trial", "mean_log_narj", "std_log_narj", "n_subjects"],
                            [[t + 1, perf[:, t].mean(), perf[:, t].std(ddof=1) if len(subjects) > 1
                              else 0.0, len(subjects)] for t in range(n_min)]))

    paths.append(_write_csv(out / "predicted_vs_observed.csv",
                            ["subject_id", "observed_mean", "personalized_mean", "prior_mean"],
                            [[s["subject_id"], s["observed_final_mean"],
                              s["personalized_final_mean"], s["prior_final_mean"]]
                             for s in subjects]))

    res = summary["results"]
    paths.append(_write_csv(out / "coherence.csv",
                            ["subject_id", "personalized_msc", "personalized_p", "prior_msc", "prior_p"],
                            [[a["subject_id"], a["mean_msc"], a["p_value"], b["mean_msc"], b["p_value"]]
                             for a, b in zip(res["personalized"]["coherence_tests"],
                                             res["prior"]["coherence_tests"])]))

    rows = []
    for s in subjects:
        for k, idx in enumerate(s["eval_index"]):
            rows.append([s["subject_id"], idx + 1, s["observed"][k],
                         s["personalized_pred"][k], s["prior_pred"][k]])
    paths.append(_write_csv(out / "trial_predictions.csv",
                            ["subject_id", "trial", "observed", "personalized", "prior"], rows))

    topo = summary["topographies"]
    rows = []
    maps = dict(topo["subjects"])
    maps["mean"] = topo["mean"]
    for sid, values in maps.items():
        for label, row in zip(topo["channel_labels"], values):
            rows.append([sid, label, *row])
    paths.append(_write_csv(out / "topographies.csv",
                            ["subject_id", "channel", *topo["band_names"]], rows))
    return paths


def format_summary_table(summary):
    validate_summary(summary)
    res = summary["results"]
    lines = [f"{'model':<14}{'rho':>8}{'p(rho)':>10}{'mean MSC':>10}{'group p':>10}{'MSE':>9}"]
    for model in MODELS:
        r = res[model]
        lines.append(f"{model:<14}{r['subject_correlation']['rho']:>8.3f}"
                     f"{r['subject_correlation']['p_value']:>10.4f}{r['mean_coherence']:>10.3f}"
                     f"{r['group_test']['p_value']:>10.4f}{r['mean_mse']:>9.3f}")
    lines.append(f"subjects: {summary['n_subjects']}, personalized MSE wins: "
                 f"{res.get('personalized_mse_wins', 'n/a')}, "
                 f"mean pairwise topography cosine: "
                 f"{summary['topographies']['mean_pairwise_cosine']:.3f}")
    return "\n".join(lines)
