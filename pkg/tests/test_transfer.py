import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from motordecode.transfer import (
    LinearModel,
    PriorModel,
    RankDeficientError,
    Standardization,
    SubjectData,
    TransferError,
    fit_prior,
    fit_subject_ridge,
    loso_evaluate,
    personalize,
    predict,
)


def ridge_oracle(X, y, lam, std):
    """Dense normal equations on [1, Z] with the intercept left unpenalised."""
    Z = (X - std.mean) / std.scale
    A = np.column_stack([np.ones(len(y)), Z])
    P = lam * np.eye(A.shape[1])
    P[0, 0] = 0.0
    theta = np.linalg.solve(A.T @ A + P, A.T @ y)
    return theta[1:], theta[0]


def map_oracle(mu, sigma, noise, Z, y):
    """Posterior mode with a dense F x F inverse, given the centred intercept."""
    b = np.mean(y - Z @ mu)
    prec = np.linalg.inv(sigma) + Z.T @ Z / noise
    w = np.linalg.solve(prec, np.linalg.solve(sigma, mu) + Z.T @ (y - b) / noise)
    return w, b


def _problem(seed):
    r = np.random.default_rng(seed)
    F = int(r.integers(2, 51))
    n = int(r.integers(3, 201))
    X = r.normal(size=(n, F)) * r.uniform(0.5, 3, size=F) + r.normal(size=F)
    y = X @ r.normal(size=F) + r.normal() + 0.3 * r.normal(size=n)
    return X, y, float(r.uniform(0.1, 50))


@pytest.mark.parametrize("seed", range(20))
def test_ridge_matches_normal_equations(seed):
    X, y, lam = _problem(seed)
    std = Standardization.fit(X)
    m = fit_subject_ridge(X, y, lam)
    w, b = ridge_oracle(X, y, lam, std)
    np.testing.assert_allclose(m.weights, w, rtol=1e-8, atol=1e-10)
    assert m.intercept == pytest.approx(b, rel=1e-8, abs=1e-10)


@pytest.mark.parametrize("seed", range(20))
def test_personalize_matches_dense_map(seed):
    r = np.random.default_rng(1000 + seed)
    F = int(r.integers(2, 51))
    k = int(r.integers(1, 41))
    A = r.normal(size=(F, F))
    sigma = A @ A.T / F + 0.1 * np.eye(F)
    mu = r.normal(size=F)
    std = Standardization(r.normal(size=F), r.uniform(0.5, 2, size=F))
    prior = PriorModel(mu, sigma, float(r.uniform(0.1, 2)), 5, 1.0, std)
    X = r.normal(size=(k, F))
    y = r.normal(size=k) + 2.0
    model = personalize(prior, X, y)
    w, b = map_oracle(mu, sigma, prior.noise_variance, std.apply(X), y)
    np.testing.assert_allclose(model.base.weights, w, rtol=1e-8, atol=1e-10)
    assert model.base.intercept == pytest.approx(b, rel=1e-8, abs=1e-10)
    assert model.n_update_trials == k
    assert model.prior_ref == prior.provenance_id()


def test_diag_encoding_matches_dense():
    r = np.random.default_rng(3)
    F = 12
    var = r.uniform(0.1, 1, size=F)
    std = Standardization.identity(F)
    dense = PriorModel(np.zeros(F), np.diag(var), 0.5, 3, 0.0, std, "dense")
    diag = PriorModel(np.zeros(F), var, 0.5, 3, 0.0, std, "diag")
    X, y = r.normal(size=(8, F)), r.normal(size=8)
    np.testing.assert_allclose(personalize(dense, X, y).base.weights,
                               personalize(diag, X, y).base.weights, rtol=1e-12)
    np.testing.assert_array_equal(diag.sigma_dense(), np.diag(var))


def test_exact_recovery_without_penalty():
    r = np.random.default_rng(7)
    X = r.normal(size=(60, 5))
    w_true = r.normal(size=5)
    y = X @ w_true + 2.5
    m = fit_subject_ridge(X, y, lam=0.0)
    w, b = m.raw_coefficients()
    np.testing.assert_allclose(w, w_true, rtol=1e-6)
    assert b == pytest.approx(2.5, rel=1e-6)
    np.testing.assert_allclose(m.predict(X), y, atol=1e-9)


def test_rank_deficient_without_penalty():
    r = np.random.default_rng(0)
    with pytest.raises(RankDeficientError):
        fit_subject_ridge(r.normal(size=(5, 10)), r.normal(size=5), lam=0.0)
    X = r.normal(size=(30, 3))
    X = np.column_stack([X, X[:, 0] + X[:, 1]])
    with pytest.raises(RankDeficientError):
        fit_subject_ridge(X, r.normal(size=30), lam=0.0)


def test_constant_feature_gets_zero_weight():
    r = np.random.default_rng(1)
    X = np.column_stack([r.normal(size=20), np.full(20, 4.0)])
    m = fit_subject_ridge(X, r.normal(size=20), lam=1.0)
    assert m.weights[1] == 0.0


def test_fit_prior_by_hand():
    F = 4
    std = Standardization.identity(F)
    W = np.array([[1.0, 0, 0, 2], [0, 1, 0, 2], [0, 0, 1, 2.0]])
    models = [LinearModel(w, float(i), std, rss=2.0 * (i + 1), residual_dof=4.0)
              for i, w in enumerate(W)]
    prior = fit_prior(models, shrinkage=0.5, sigma_floor=1e-6)
    np.testing.assert_allclose(prior.mu, W.mean(axis=0))
    cov = np.cov(W.T)
    expected = 0.5 * np.diag(np.diag(cov)) + 0.5 * cov
    expected = np.where(np.abs(expected) < 1e-15, 0, expected)
    evals = np.linalg.eigvalsh(prior.sigma)
    assert evals.min() >= 1e-6 * (1 - 1e-9)
    # the only direction floored is the zero-variance last feature
    np.testing.assert_allclose(prior.sigma[:3, :3], expected[:3, :3], atol=1e-12)
    assert prior.sigma[3, 3] == pytest.approx(1e-6)
    assert prior.noise_variance == pytest.approx(12.0 / 12.0)
    assert prior.intercept == pytest.approx(1.0)
    assert prior.contributing_subjects == 3


def test_fit_prior_rejects_mixed_standardization():
    a = LinearModel(np.zeros(2), 0.0, Standardization.identity(2))
    b = LinearModel(np.zeros(2), 0.0, Standardization(np.ones(2), np.ones(2)))
    with pytest.raises(TransferError):
        fit_prior([a, b])
    with pytest.raises(TransferError):
        fit_prior([a])


def test_personalize_zero_trials_is_prior_mean():
    std = Standardization.identity(3)
    prior = PriorModel(np.array([1.0, 2, 3]), np.eye(3), 1.0, 2, 0.5, std)
    model = personalize(prior, np.zeros((0, 3)), np.zeros(0))
    np.testing.assert_array_equal(model.base.weights, prior.mu)
    assert model.base.intercept == prior.intercept
    assert model.n_update_trials == 0


def test_personalize_interpolates_as_noise_vanishes():
    r = np.random.default_rng(5)
    F, k = 30, 8
    std = Standardization.identity(F)
    prior = PriorModel(r.normal(size=F), np.eye(F), 1e-10, 2, 0.0, std)
    X, y = r.normal(size=(k, F)), r.normal(size=k)
    np.testing.assert_allclose(predict(personalize(prior, X, y), X), y, atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), lam=st.floats(0.01, 100))
def test_ridge_shrinks_with_lambda(seed, lam):
    r = np.random.default_rng(seed)
    X, y = r.normal(size=(40, 6)), r.normal(size=40)
    small = fit_subject_ridge(X, y, lam)
    large = fit_subject_ridge(X, y, lam * 10)
    assert np.linalg.norm(large.weights) <= np.linalg.norm(small.weights) + 1e-12
    assert 0 <= large.residual_dof <= 39


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), gamma=st.floats(0, 1))
def test_prior_covariance_is_spd(seed, gamma):
    r = np.random.default_rng(seed)
    std = Standardization.identity(10)
    models = [LinearModel(r.normal(size=10), 0.0, std, 1.0, 1.0) for _ in range(4)]
    prior = fit_prior(models, shrinkage=gamma, sigma_floor=1e-6)
    np.testing.assert_allclose(prior.sigma, prior.sigma.T)
    assert np.linalg.eigvalsh(prior.sigma).min() >= 1e-6 * (1 - 1e-8)


def _subjects(n_subjects=6, F=8, n=40, seed=0):
    r = np.random.default_rng(seed)
    mu = r.normal(size=F)
    out = []
    for s in range(n_subjects):
        X = r.normal(size=(n, F))
        y = X @ (mu + 0.3 * r.normal(size=F)) + 1.0 + 0.2 * r.normal(size=n)
        out.append(SubjectData(f"S{s}", X, y))
    return out


def test_loso_shapes_and_workers():
    subjects = _subjects()
    serial = loso_evaluate(subjects, k_update=10, lam=1.0)
    parallel = loso_evaluate(subjects, k_update=10, lam=1.0, workers=2)
    for a, b in zip(serial, parallel):
        assert a.subject_id == b.subject_id
        np.testing.assert_array_equal(a.eval_index, np.arange(10, 40))
        np.testing.assert_array_equal(a.personalized_pred, b.personalized_pred)
        assert a.personalized_mse < a.prior_mse


def test_loso_held_out_subject_excluded():
    subjects = _subjects()
    evals = loso_evaluate(subjects, k_update=10, lam=1.0)
    assert all(ev.prior.contributing_subjects == 5 for ev in evals)
    assert evals[0].prior_pred.size == 30


def test_prior_mean_sampling_distribution():
    r = np.random.default_rng(21)
    F = 200
    mu_star = r.normal(size=F)
    var_star = r.uniform(0.2, 2.0, size=F)
    std = Standardization.identity(F)

    def draw(n):
        W = mu_star + np.sqrt(var_star) * r.normal(size=(n, F))
        return fit_prior([LinearModel(w, 0.0, std, 1.0, 1.0) for w in W])

    prior = draw(25)
    err = np.abs(prior.mu - mu_star)
    assert np.mean(err < 3 * np.sqrt(var_star / 25)) >= 0.95
    errors = [np.mean([np.linalg.norm(draw(n).mu - mu_star) for _ in range(5)])
              for n in (5, 25, 100)]
    assert errors[0] > errors[1] > errors[2]


def test_noise_free_subject_predictions():
    from motordecode.simulate import CohortConfig, gen_cohort
    s = gen_cohort(CohortConfig(n_subjects=1, n_channels=4, n_trials=120, noise_std=0.0,
                                sparsity=0.5)).subjects[0]
    X = s.features.flatten()
    m = fit_subject_ridge(X[:80], s.log_narj[:80], lam=1.0)
    rho = np.corrcoef(m.predict(X[80:]), s.noiseless[80:])[0, 1]
    assert rho > 0.99
