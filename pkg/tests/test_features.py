import numpy as np
import pytest

from motordecode.features import (
    FLATTENING_ORDER,
    GO_WINDOW_S,
    EegRecording,
    FeatureError,
    FeatureTensor,
    UnknownChannel,
    UnknownStrategy,
    WindowOutOfBounds,
    artifact_removal_hook,
    build_feature_tensor,
    canonical_channels,
    common_average_reference,
    extract_go_window,
    select_channels,
)
from motordecode.simulate import gen_synthetic_eeg
from motordecode.spectral import CANONICAL_BANDS, log_bandpowers

FS = 500.0


def _recording(n_trials=3, n_channels=4, trial_s=20.0, seed=0):
    r = np.random.default_rng(seed)
    n = int(n_trials * trial_s * FS)
    labels = canonical_channels()[:n_channels]
    markers = [(f"T{i:03d}", int(i * trial_s * FS)) for i in range(n_trials)]
    return EegRecording(FS, labels, r.normal(size=(n_channels, n)), markers)


def test_canonical_channels():
    labels = canonical_channels()
    assert len(labels) == 118
    assert len(set(labels)) == 118
    assert "TPP9h" not in labels
    for name in ("Cz", "C3", "C4", "Fpz", "Oz"):
        assert name in labels


def test_select_channels_reorders():
    rec = _recording()
    keep = [rec.channel_labels[2], rec.channel_labels[0]]
    sub = select_channels(rec, keep)
    assert sub.channel_labels == tuple(keep)
    np.testing.assert_array_equal(sub.data[0], rec.data[2])
    with pytest.raises(UnknownChannel, match="nope"):
        select_channels(rec, ["nope"])


def test_common_average_reference():
    rec = common_average_reference(_recording())
    np.testing.assert_allclose(rec.data.sum(axis=0), 0.0, atol=1e-12)
    assert "reference=common_average" in rec.provenance


def test_go_window_is_trial_relative():
    rec = _recording()
    win = extract_go_window(rec, "T001")
    start = int(20.0 * FS)
    lo, hi = start + int(GO_WINDOW_S[0] * FS), start + int(GO_WINDOW_S[1] * FS)
    assert win.n_samples == 5000
    np.testing.assert_array_equal(win.data, rec.data[:, lo:hi])
    assert win.trial_markers == (("T001", 0),)


def test_go_window_bounds():
    rec = _recording(trial_s=15.0)
    with pytest.raises(WindowOutOfBounds):
        extract_go_window(rec, "T002")
    with pytest.raises(FeatureError):
        extract_go_window(rec, "missing")


def test_artifact_hook():
    rec = artifact_removal_hook(_recording())
    assert rec.provenance[-1] == "artifact_removal=passthrough"
    with pytest.raises(UnknownStrategy):
        artifact_removal_hook(rec, "ica")


def test_feature_tensor_layout():
    rec = _recording()
    windows = [extract_go_window(rec, tid) for tid, _ in rec.trial_markers]
    ft = build_feature_tensor(windows)
    assert ft.values.shape == (3, 4, 5)
    assert ft.trial_ids == ("T000", "T001", "T002")
    np.testing.assert_allclose(ft.values[1], log_bandpowers(windows[1].data, FS, CANONICAL_BANDS))
    flat = ft.flatten()
    assert FLATTENING_ORDER == "channel_major"
    # feature c * n_bands + b
    assert flat[2, 3 * 5 + 1] == ft.values[2, 3, 1]
    assert ft.feature_names()[3 * 5 + 1] == f"{ft.channel_labels[3]}:theta"
    sub = ft.subset([2, 0])
    assert sub.trial_ids == ("T002", "T000")


def test_empty_tensor():
    ft = build_feature_tensor([], channel_labels=("a", "b"))
    assert ft.values.shape == (0, 2, 5)
    assert ft.flatten().shape == (0, 10)


def test_feature_tensor_rejects_nonfinite():
    with pytest.raises(FeatureError):
        FeatureTensor(("a",), np.full((1, 1, 5), np.nan), ("Cz",))


def test_recording_validation():
    with pytest.raises(FeatureError):
        EegRecording(FS, ("a", "a"), np.zeros((2, 10)))
    with pytest.raises(FeatureError):
        EegRecording(FS, ("a",), np.zeros((2, 10)))
    with pytest.raises(FeatureError):
        EegRecording(FS, ("a",), np.zeros((1, 10)), [("t", 10)])


def test_synthetic_alpha_recovered_in_features():
    rec = gen_synthetic_eeg({"alpha": 3.0}, n_channels=6, duration_s=10.0, seed=4)
    ft = build_feature_tensor([rec])
    quiet = build_feature_tensor([gen_synthetic_eeg({}, n_channels=6, duration_s=10.0, seed=4)])
    diff = ft.values[0] - quiet.values[0]
    assert np.all(diff[:, 2] > 2.0)
    np.testing.assert_allclose(np.delete(diff, 2, axis=1), 0.0, atol=0.2)


def test_keep_118_of_121():
    labels = canonical_channels() + ("EOG1", "EOG2", "TPP9h")
    rec = EegRecording(FS, labels, np.random.default_rng(0).normal(size=(121, 50)))
    sub = select_channels(rec, canonical_channels())
    assert sub.data.shape == (118, 50)
    assert sub.channel_labels == canonical_channels()


def test_car_column_means():
    rec = EegRecording(FS, ("a", "b", "c", "d"), np.random.default_rng(1).normal(size=(4, 100)))
    assert np.max(np.abs(common_average_reference(rec).data.mean(axis=0))) < 1e-9


def test_window_from_trial_start_zero():
    rec = _recording(n_trials=1)
    win = extract_go_window(rec, "T000")
    np.testing.assert_array_equal(win.data, rec.data[:, 3750:8750])


def test_back_to_back_windows_disjoint():
    rec = _recording(n_trials=2, trial_s=18.0)
    a, b = (extract_go_window(rec, t) for t in ("T000", "T001"))
    assert a.n_samples == b.n_samples == 5000
    # trial 1 starts at 9000; its window begins after trial 0's ends at 8750
    np.testing.assert_array_equal(b.data, rec.data[:, 9000 + 3750:9000 + 8750])


def test_sinusoid_channel_against_silent_channel():
    t = np.arange(5000) / FS
    data = np.vstack([np.sin(2 * np.pi * 10 * t), np.zeros_like(t)])
    ft = build_feature_tensor([EegRecording(FS, ("a", "b"), data, [("t", 0)])])
    assert ft.values[0, 0, 2] - ft.values[0, 1, 2] >= 10.0
