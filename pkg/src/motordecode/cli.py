"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, pipeline
from .encoding import EncodingError, encoding_topography, mean_topography, write_topography_csv
from .features import (
    FeatureError,
    artifact_removal_hook,
    build_feature_tensor,
    canonical_channels,
    common_average_reference,
    extract_go_window,
    select_channels,
)
from .kinematics import KinematicsError, narj, validate_trial
from .simulate import SimulationError
from .spectral import SpectralError
from .stats import StatsError
from .transfer import (
    PersonalizedModel,
    RankDeficientError,
    Standardization,
    TransferError,
    fit_prior,
    fit_subject_ridge,
    personalize,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("motordecode")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p, *, seed=True, out=True):
    p.add_argument("--config", type=Path, help="TOML run configuration")
    if seed:
        p.add_argument("--seed", type=int)
    if out:
        p.add_argument("--out", type=Path)
    p.add_argument("--workers", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def _model_flags(p):
    p.add_argument("--k-update", type=int, dest="k_update")
    p.add_argument("--permutations", type=int, dest="n_permutations")


def build_parser():
    parser = _Parser(prog="motordecode", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("narj", help="NARJ records for trajectory CSV files")
    p.add_argument("trajectories", nargs="+", type=Path)
    p.add_argument("--protocol", type=Path,
                   help="JSON {trial_id: {planning: CSV, target: [x, y, z]}} for outcome checks")
    p.add_argument("--smoothing-window", type=int, default=0)
    _common(p, seed=False)

    p = sub.add_parser("features", help="log-bandpower feature tensor from an EEG recording")
    p.add_argument("eeg", type=Path)
    p.add_argument("--subject", help="subject id (defaults to the file stem)")
    p.add_argument("--channels", type=Path, help="file with one channel label per line")
    _common(p, seed=False)

    p = sub.add_parser("simulate", help="write a synthetic cohort directory")
    _common(p)

    p = sub.add_parser("train", help="fit a prior (and optionally personalize) from a cohort")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--personalize", metavar="SUBJECT",
                   help="hold SUBJECT out of the prior and update on its first trials")
    _common(p)
    _model_flags(p)

    p = sub.add_parser("evaluate", help="leave-one-subject-out evaluation and tests")
    p.add_argument("--input", type=Path)
    p.add_argument("--simulate", action="store_true")
    _common(p)
    _model_flags(p)

    p = sub.add_parser("encode", help="encoding topographies from personalized model files")
    p.add_argument("--input", type=Path, required=True, help="cohort directory")
    p.add_argument("--models", type=Path, required=True, help="directory of *.personalized.json")
    _common(p, seed=False)

    p = sub.add_parser("pipeline", help="full run: evaluate, encode and report")
    p.add_argument("--input", type=Path)
    p.add_argument("--simulate", action="store_true")
    _common(p)
    _model_flags(p)

    p = sub.add_parser("report", help="table and plot-data CSVs from a summary JSON")
    p.add_argument("summary", type=Path)
    _common(p, seed=False)
    return parser


def _config(args):
    overrides = {k: getattr(args, k, None) for k in
                 ("seed", "workers", "k_update", "n_permutations")}
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = str(args.out)
    if getattr(args, "input", None) is not None:
        overrides["input_dir"] = str(args.input)
    return pipeline.load_config(getattr(args, "config", None), **overrides)


def _emit(obj, out):
    text = json.dumps(obj, indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def cmd_narj(args):
    protocol = {}
    if args.protocol:
        protocol = json.loads(args.protocol.read_text())
    records = []
    for path in args.trajectories:
        traj = io.read_trajectory_csv(path)
        score = narj(traj, args.smoothing_window)
        trial_id = path.stem
        status = "Success"
        if trial_id in protocol:
            entry = protocol[trial_id]
            planning = io.read_trajectory_csv(Path(args.protocol).parent / entry["planning"])
            status = validate_trial(planning, traj, entry["target"]).status.value
        records.append({"trial_id": trial_id, "status": status, "narj": score.narj,
                        "log_narj": score.log_narj, "duration_s": score.duration_s})
    _emit(records, args.out)
    return EXIT_OK


def cmd_features(args):
    cfg = _config(args)
    rec = io.read_eeg(args.eeg)
    if args.channels:
        keep = [ln.strip() for ln in args.channels.read_text().splitlines() if ln.strip()]
    else:
        canon = canonical_channels()
        keep = list(canon) if set(canon) <= set(rec.channel_labels) else list(rec.channel_labels)
    rec = select_channels(rec, keep)
    rec = common_average_reference(rec)
    rec = artifact_removal_hook(rec, cfg.artifact_removal)
    windows = [extract_go_window(rec, tid) for tid, _ in rec.trial_markers]
    ft = build_feature_tensor(windows, cfg.bands, cfg.eeg_segment_len, cfg.eeg_overlap,
                              channel_labels=rec.channel_labels)
    subject = args.subject or args.eeg.name.split(".")[0]
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = io.write_feature_tensor(ft, out / f"{subject}.features")
    log.info("wrote %s (%d trials x %d features)", path, ft.n_trials, ft.n_features)
    return EXIT_OK


def cmd_simulate(args):
    cfg = _config(args)
    subjects, digest, cohort = pipeline.simulate_cohort(cfg)
    out = Path(cfg.out_dir)
    pipeline.write_cohort_dir(subjects, out)
    io.write_json({
        "config": cohort.config.to_dict(),
        "input_sha256": digest,
        "population_mean": cohort.population_mean.tolist(),
        "support": cohort.support.tolist(),
        "subjects": {s.subject_id: {"weights": s.true_weights.tolist(),
                                    "intercept": s.true_intercept} for s in cohort.subjects},
    }, out / "ground_truth.json")
    log.info("wrote %d subjects to %s", len(subjects), out)
    return EXIT_OK


def cmd_train(args):
    cfg = _config(args)
    subjects, digest = pipeline.load_cohort_dir(cfg.input_dir)
    target = None
    if args.personalize:
        matches = [s for s in subjects if s.subject_id == args.personalize]
        if not matches:
            raise io.DataFormatError(f"subject {args.personalize!r} not in {cfg.input_dir}")
        target = matches[0]
        subjects = [s for s in subjects if s is not target]
    X = [s.features.flatten() for s in subjects]
    std = Standardization.fit(np.vstack(X))
    models = [fit_subject_ridge(x, s.log_narj, cfg.lam, std) for x, s in zip(X, subjects)]
    prior = fit_prior(models, cfg.shrinkage, cfg.sigma_floor, cfg.sigma_encoding)
    provenance = {"seed": cfg.seed, "lambda": cfg.lam, "gamma": cfg.shrinkage,
                  "k_update": cfg.k_update, "input_sha256": digest}
    model = prior
    if target is not None:
        k = cfg.k_update
        model = personalize(prior, target.features.flatten()[:k], target.log_narj[:k])
    name = f"{target.subject_id}.personalized.json" if target is not None else "prior.json"
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(io.model_to_dict(model, provenance), out / name)
    return EXIT_OK


def _load_or_simulate(args, cfg):
    if getattr(args, "simulate", False):
        subjects, digest, _ = pipeline.simulate_cohort(cfg)
        return subjects, digest
    if cfg.input_dir is None:
        raise UsageError("either --input DIR (or [paths] input) or --simulate is required")
    return pipeline.load_cohort_dir(cfg.input_dir)


def cmd_evaluate(args):
    cfg = _config(args)
    subjects, digest = _load_or_simulate(args, cfg)
    summary, _, _ = pipeline.run_pipeline(cfg, subjects, digest)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(summary, out / "summary.json")
    print(pipeline.format_summary_table(summary))
    return EXIT_OK


def cmd_encode(args):
    subjects, _ = pipeline.load_cohort_dir(args.input)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    topos = []
    for subj in subjects:
        path = args.models / f"{subj.subject_id}.personalized.json"
        if not path.exists():
            raise FileNotFoundError(f"{path}: no such file")
        model = io.model_from_dict(json.loads(path.read_text()))
        if not isinstance(model, PersonalizedModel):
            raise io.DataFormatError(f"{path}: not a personalized model")
        idx = np.arange(model.n_update_trials, subj.features.n_trials)
        ft = subj.features.subset(idx)
        topo = encoding_topography(model.predict(ft.flatten()), ft, subj.subject_id)
        write_topography_csv(topo, out / f"{subj.subject_id}.csv")
        topos.append(topo)
    write_topography_csv(mean_topography(topos), out / "mean.csv")
    return EXIT_OK


def cmd_pipeline(args):
    cfg = _config(args)
    subjects, digest = _load_or_simulate(args, cfg)
    summary, topographies, evals = pipeline.run_pipeline(cfg, subjects, digest)
    out = Path(cfg.out_dir)
    pipeline.write_outputs(summary, topographies, evals, out)
    pipeline.write_report_csvs(summary, out / "report")
    print(pipeline.format_summary_table(summary))
    return EXIT_OK


def cmd_report(args):
    path = args.summary
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    try:
        summary = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise io.DataFormatError(f"{path}: {exc}") from None
    out = Path(args.out) if args.out else path.parent / "report"
    pipeline.write_report_csvs(summary, out)
    print(pipeline.format_summary_table(summary))
    return EXIT_OK


COMMANDS = {
    "narj": cmd_narj,
    "features": cmd_features,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "encode": cmd_encode,
    "pipeline": cmd_pipeline,
    "report": cmd_report,
}

DATA_ERRORS = (FileNotFoundError, io.DataFormatError, FeatureError, KinematicsError,
               SpectralError, SimulationError, EncodingError, pipeline.SchemaError, KeyError,
               json.JSONDecodeError)
NUMERIC_ERRORS = (RankDeficientError, np.linalg.LinAlgError, FloatingPointError)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, pipeline.ConfigError) as exc:
        print(f"motordecode {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"motordecode {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DATA_ERRORS + (TransferError, StatsError) as exc:
        print(f"motordecode {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
