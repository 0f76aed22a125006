import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings, strategies as st

from motordecode.encoding import (
    EncodingError,
    EncodingTopography,
    encoding_topography,
    mean_topography,
    pairwise_cosine_similarity,
    read_topography_csv,
    write_topography_csv,
)
from motordecode.features import FeatureTensor
from motordecode.simulate import gen_single_driver_subject


def _tensor(values):
    T, C, B = values.shape
    from motordecode.spectral import CANONICAL_BANDS
    return FeatureTensor(tuple(map(str, range(T))), values, tuple(f"c{i}" for i in range(C)),
                         CANONICAL_BANDS[:B])


def test_matches_scipy_pearson(rng):
    ft = _tensor(rng.normal(size=(30, 3, 2)))
    y = rng.normal(size=30)
    topo = encoding_topography(y, ft)
    for c in range(3):
        for b in range(2):
            ref = scipy.stats.pearsonr(ft.values[:, c, b], y)[0]
            assert topo.values[c, b] == pytest.approx(ref, rel=1e-10)


def test_single_feature_model_is_one(rng):
    ft = _tensor(rng.normal(size=(25, 4, 5)))
    topo = encoding_topography(ft.values[:, 2, 3], ft)
    assert topo.values[2, 3] == pytest.approx(1.0)


def test_zero_variance_feature_flagged(rng):
    values = rng.normal(size=(20, 3, 2))
    values[:, 1, 0] = 5.0
    topo = encoding_topography(rng.normal(size=20), _tensor(values))
    assert topo.values[1, 0] == 0.0
    expected = np.zeros((3, 2), dtype=bool)
    expected[1, 0] = True
    np.testing.assert_array_equal(topo.zero_variance, expected)
    assert np.all(np.isfinite(topo.values))


def test_rejects_constant_predictions(rng):
    with pytest.raises(EncodingError):
        encoding_topography(np.ones(10), _tensor(rng.normal(size=(10, 2, 2))))
    with pytest.raises(EncodingError):
        encoding_topography(np.arange(9.0), _tensor(rng.normal(size=(10, 2, 2))))


def test_mean_of_opposites_is_zero(rng):
    v = rng.normal(size=(118, 5))
    labels, bands = tuple(f"c{i}" for i in range(118)), tuple("abcde")
    m = mean_topography([EncodingTopography(v, labels, bands), EncodingTopography(-v, labels, bands)])
    assert np.all(m.values == 0.0)


def test_mean_requires_same_layout():
    a = EncodingTopography(np.zeros((2, 1)), ("x", "y"), ("b",))
    b = EncodingTopography(np.zeros((2, 1)), ("y", "x"), ("b",))
    with pytest.raises(EncodingError):
        mean_topography([a, b])


def test_cosine_similarity():
    labels, bands = ("x", "y"), ("b",)
    a = EncodingTopography(np.array([[1.0], [0.0]]), labels, bands)
    b = EncodingTopography(np.array([[0.0], [2.0]]), labels, bands)
    c = EncodingTopography(np.array([[-3.0], [0.0]]), labels, bands)
    np.testing.assert_allclose(pairwise_cosine_similarity([a, b, c]),
                               [[1, 0, -1], [0, 1, 0], [-1, 0, 1]], atol=1e-15)


def test_csv_round_trip(tmp_path, rng):
    topo = EncodingTopography(rng.uniform(-1, 1, size=(4, 5)), ("Cz", "C3", "C4", "Pz"),
                              ("delta", "theta", "alpha", "beta", "high_gamma"), "S01")
    path = write_topography_csv(topo, tmp_path / "S01.csv")
    back = read_topography_csv(path, "S01")
    np.testing.assert_array_equal(back.values, topo.values)
    assert back.channel_labels == topo.channel_labels and back.band_names == topo.band_names


def test_single_driver_recovered():
    subject, driver = gen_single_driver_subject(seed=0)
    topo = encoding_topography(subject.log_narj, subject.features)
    assert np.argmax(np.abs(topo.values.ravel())) == driver


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.floats(0.1, 10), b=st.floats(-5, 5))
def test_bounded_and_affine_invariant(seed, a, b):
    r = np.random.default_rng(seed)
    ft = _tensor(r.normal(size=(15, 3, 2)))
    y = r.normal(size=15)
    t1 = encoding_topography(y, ft)
    t2 = encoding_topography(a * y + b, ft)
    t3 = encoding_topography(-y, ft)
    assert np.all(np.abs(t1.values) <= 1)
    np.testing.assert_allclose(t1.values, t2.values, atol=1e-10)
    np.testing.assert_allclose(t1.values, -t3.values, atol=1e-12)


def test_mixed_sign_average_shrinks():
    r = np.random.default_rng(455)
    labels, bands = tuple(f"c{i}" for i in range(118)), tuple("abcde")
    base = r.uniform(-1, 1, size=(118, 5))
    topos = [EncodingTopography(r.choice([-1, 1]) * base + 0.3 * r.normal(size=base.shape),
                                labels, bands, f"S{i}") for i in range(26)]
    per_subject = np.mean([np.abs(t.values).mean() for t in topos])
    assert np.abs(mean_topography(topos).values).mean() < per_subject
