import json

import numpy as np
import pytest

from motordecode import pipeline
from motordecode.pipeline import (
    SUMMARY_SCHEMA,
    ConfigError,
    SchemaError,
    derive_seed,
    load_cohort_dir,
    load_config,
    run_pipeline,
    simulate_cohort,
    validate_summary,
    write_cohort_dir,
    write_outputs,
    write_report_csvs,
)


def test_load_config(small_config):
    cfg = load_config(small_config)
    assert cfg.seed == 4 and cfg.n_permutations == 200
    assert cfg.simulate["n_subjects"] == 6
    assert load_config(small_config, seed=9, workers=None).seed == 9
    assert cfg.cohort_config().seed == 4


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[run]\nsed = 1\n")
    with pytest.raises(ConfigError, match="sed"):
        load_config(bad)
    bad.write_text("[run\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(None, encoding_target="weights")
    with pytest.raises(ConfigError):
        load_config(None, simulate={"n_subject": 3}).cohort_config()


def test_model_section_and_bands(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('[model]\nlambda = 2.5\nshrinkage = 0.5\n'
                    '[features]\nbands = [{name = "mu", lo_hz = 8.0, hi_hz = 12.0}]\n')
    cfg = load_config(path)
    assert cfg.lam == 2.5 and cfg.shrinkage == 0.5
    assert cfg.bands[0].name == "mu"
    assert cfg.to_dict()["bands"] == [{"name": "mu", "lo_hz": 8.0, "hi_hz": 12.0}]


def test_derive_seed_stable():
    assert derive_seed(0, "a", 1) == derive_seed(0, "a", 1)
    assert derive_seed(0, "a", 1) != derive_seed(0, "a", 2)
    assert 0 <= derive_seed(123, "x") < 2**63


@pytest.fixture
def small_run(small_config):
    cfg = load_config(small_config)
    subjects, digest, _ = simulate_cohort(cfg)
    return cfg, subjects, digest


def test_cohort_dir_round_trip(tmp_path, small_run):
    cfg, subjects, _ = small_run
    write_cohort_dir(subjects, tmp_path / "c")
    loaded, digest = load_cohort_dir(tmp_path / "c")
    assert [s.subject_id for s in loaded] == [s.subject_id for s in subjects]
    for a, b in zip(loaded, subjects):
        np.testing.assert_array_equal(a.features.values, b.features.values)
        np.testing.assert_array_equal(a.log_narj, b.log_narj)
    assert load_cohort_dir(tmp_path / "c")[1] == digest


def test_failed_trials_are_dropped(tmp_path, small_run):
    _, subjects, _ = small_run
    write_cohort_dir(subjects[:1], tmp_path / "c")
    path = tmp_path / "c" / f"{subjects[0].subject_id}.narj.json"
    records = json.loads(path.read_text())
    records[3]["status"] = "FailedTimeout"
    path.write_text(json.dumps(records))
    loaded, _ = load_cohort_dir(tmp_path / "c")
    assert loaded[0].log_narj.size == 59
    assert records[3]["trial_id"] not in loaded[0].features.trial_ids


def test_summary_schema_and_outputs(tmp_path, small_run):
    cfg, subjects, digest = small_run
    summary, topos, evals = run_pipeline(cfg, subjects, digest)
    validate_summary(summary)
    assert summary["n_subjects"] == 6
    assert set(topos) == {s.subject_id for s in subjects} | {"mean"}
    assert summary["provenance"]["input_sha256"] == digest
    for model in ("personalized", "prior"):
        r = summary["results"][model]
        assert 0 < r["subject_correlation"]["p_value"] <= 1
        assert len(r["coherence_tests"]) == 6
    write_outputs(summary, topos, evals, tmp_path / "out")
    assert (tmp_path / "out" / "summary.json").exists()
    assert len(list((tmp_path / "out" / "models").glob("*.personalized.json"))) == 6
    paths = write_report_csvs(summary, tmp_path / "out" / "report")
    assert sorted(p.name for p in paths) == sorted([
        "performance_over_trials.csv", "predicted_vs_observed.csv", "coherence.csv",
        "trial_predictions.csv", "topographies.csv"])
    # runtime settings stay out of the serialised config
    assert "workers" not in summary["config"] and "out_dir" not in summary["config"]


def test_schema_names_missing_field(small_run):
    cfg, subjects, digest = small_run
    summary, _, _ = run_pipeline(cfg, subjects, digest)
    del summary["results"]["prior"]["group_test"]
    with pytest.raises(SchemaError, match="results.prior.group_test"):
        validate_summary(summary)


def test_schema_paths_are_unique():
    assert len(set(SUMMARY_SCHEMA)) == len(SUMMARY_SCHEMA)


def test_encoding_target_observed(small_run):
    cfg, subjects, digest = small_run
    cfg.encoding_target = "observed"
    cfg.encoding_trials = "all"
    summary, topos, _ = run_pipeline(cfg, subjects, digest)
    assert summary["provenance"]["encoding_target"] == "observed"
    assert topos[subjects[0].subject_id].values.shape == (4, 5)
