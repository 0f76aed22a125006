"""Hierarchical linear transfer learning across subjects.

Every subject gets a ridge regression on standardised features. The weight
vectors of all training subjects define a Gaussian prior (mean and shrunk
covariance), and a new subject's model is the MAP estimate under that prior
given its first few trials. Leave-one-subject-out evaluation ties the pieces
together.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "TransferError",
    "RankDeficientError",
    "Standardization",
    "LinearModel",
    "PriorModel",
    "PersonalizedModel",
    "SubjectData",
    "SubjectEvaluation",
    "DEFAULT_LAMBDA",
    "DEFAULT_SHRINKAGE",
    "DEFAULT_SIGMA_FLOOR",
    "DEFAULT_K_UPDATE",
    "fit_subject_ridge",
    "fit_prior",
    "personalize",
    "predict",
    "loso_evaluate",
]

DEFAULT_LAMBDA = 10.0
DEFAULT_SHRINKAGE = 0.9
DEFAULT_SIGMA_FLOOR = 1e-6
DEFAULT_K_UPDATE = 20


class TransferError(ValueError):
    pass


class RankDeficientError(TransferError):
    pass


def _as_matrix(X, name="X"):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise TransferError(f"{name} must be 2-D (trials x features), got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise TransferError(f"{name} contains non-finite values")
    return X


def _as_vector(y, n, name="y"):
    y = np.asarray(y, dtype=float).ravel()
    if y.size != n:
        raise TransferError(f"{name} has {y.size} entries, expected {n}")
    if not np.all(np.isfinite(y)):
        raise TransferError(f"{name} contains non-finite values")
    return y


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X):
        X = _as_matrix(X)
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        # constant features keep unit scale; they carry no signal either way
        scale = np.where(scale > 0, scale, 1.0)
        return cls(mean, scale)

    @classmethod
    def identity(cls, n_features):
        return cls(np.zeros(n_features), np.ones(n_features))

    @property
    def n_features(self):
        return self.mean.size

    def apply(self, X):
        X = _as_matrix(X)
        if X.shape[1] != self.n_features:
            raise TransferError(f"expected {self.n_features} features, got {X.shape[1]}")
        return (X - self.mean) / self.scale

    def same_as(self, other):
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.scale, other.scale)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["scale"], dtype=float))


@dataclass(frozen=True)
class LinearModel:
    """Weights act on standardised features; `intercept` is in log-NARJ units."""

    weights: np.ndarray
    intercept: float
    standardization: Standardization
    rss: float = 0.0
    residual_dof: float = 0.0

    @property
    def n_features(self):
        return self.weights.size

    def raw_coefficients(self):
        """Weights and intercept expressed on the unstandardised features."""
        w = self.weights / self.standardization.scale
        b = self.intercept - float(np.dot(self.standardization.mean, w))
        return w, b

    def predict(self, X):
        return self.standardization.apply(X) @ self.weights + self.intercept


@dataclass(frozen=True)
class PriorModel:
    """Population prior over subject weights.

    `sigma` is either a dense (F, F) covariance or, when `sigma_encoding` is
    ``"diag"``, the 1-D vector of its diagonal.
    """

    mu: np.ndarray
    sigma: np.ndarray
    noise_variance: float
    contributing_subjects: int
    intercept: float
    standardization: Standardization
    sigma_encoding: str = "dense"

    @property
    def n_features(self):
        return self.mu.size

    def sigma_dense(self):
        return np.diag(self.sigma) if self.sigma_encoding == "diag" else self.sigma

    def mean_model(self):
        return LinearModel(self.mu.copy(), self.intercept, self.standardization)

    def predict(self, X):
        return self.standardization.apply(X) @ self.mu + self.intercept

    def provenance_id(self):
        h = hashlib.sha256()
        for arr in (self.mu, self.sigma, np.array([self.noise_variance, self.intercept])):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class PersonalizedModel:
    base: LinearModel
    prior_ref: str
    n_update_trials: int

    def predict(self, X):
        return self.base.predict(X)


Model = Union[LinearModel, PriorModel, PersonalizedModel]


def fit_subject_ridge(X, y, lam=DEFAULT_LAMBDA, standardization: Optional[Standardization] = None):
    """Closed-form ridge regression with an unpenalised intercept.

    Features are standardised first, either with `standardization` or with
    statistics estimated from `X`. With ``lam == 0`` the design must have full
    column rank after centring; otherwise `RankDeficientError` is raised.
    """
    X = _as_matrix(X)
    n, F = X.shape
    y = _as_vector(y, n)
    if n < 2:
        raise TransferError(f"need at least 2 trials, got {n}")
    if lam < 0 or not np.isfinite(lam):
        raise TransferError(f"lambda must be a finite non-negative number, got {lam}")
    std = standardization if standardization is not None else Standardization.fit(X)
    Z = std.apply(X)
    z_mean = Z.mean(axis=0)
    y_mean = float(y.mean())
    Zc = Z - z_mean
    yc = y - y_mean

    # eigendecompose the smaller Gram matrix; both give the same ridge solution
    dual = n < F
    evals, evecs = np.linalg.eigh(Zc @ Zc.T if dual else Zc.T @ Zc)
    evals = np.maximum(evals, 0.0)
    tol = evals.max(initial=0.0) * max(n, F) * np.finfo(float).eps
    if lam == 0:
        rank = int(np.sum(evals > tol))
        if dual or rank < F:
            raise RankDeficientError(
                f"centred design has rank {min(rank, n - 1)} < {F} features; use lambda > 0")
    inv = 1.0 / (evals + lam)
    if dual:
        w = Zc.T @ (evecs @ (inv * (evecs.T @ yc)))
    else:
        w = evecs @ (inv * (evecs.T @ (Zc.T @ yc)))
    shrink = evals * inv
    b = y_mean - float(z_mean @ w)
    resid = y - (Z @ w + b)
    rss = float(resid @ resid)
    dof = max(n - 1 - float(np.sum(shrink)), 0.0)
    return LinearModel(w, b, std, rss=rss, residual_dof=dof)


def _floor_eigenvalues(S, floor):
    evals, evecs = np.linalg.eigh(S)
    evals = np.maximum(evals, floor)
    out = (evecs * evals) @ evecs.T
    return 0.5 * (out + out.T)


def fit_prior(models: Sequence[LinearModel], shrinkage=DEFAULT_SHRINKAGE,
              sigma_floor=DEFAULT_SIGMA_FLOOR, sigma_encoding="dense"):
    """Pool per-subject ridge models into a Gaussian weight prior.

    The covariance is ``shrinkage * diag(var) + (1 - shrinkage) * cov`` with
    eigenvalues floored at `sigma_floor`. The noise variance is the pooled
    training residual variance, each subject's residual sum of squares divided
    by its residual degrees of freedom.
    """
    if len(models) < 2:
        raise TransferError(f"need at least 2 contributing models, got {len(models)}")
    if not 0.0 <= shrinkage <= 1.0:
        raise TransferError(f"shrinkage must lie in [0, 1], got {shrinkage}")
    if sigma_encoding not in ("dense", "diag"):
        raise TransferError(f"unknown sigma encoding {sigma_encoding!r}")
    F = models[0].n_features
    std = models[0].standardization
    for m in models[1:]:
        if m.n_features != F:
            raise TransferError(f"feature dimension mismatch: {m.n_features} vs {F}")
        if not m.standardization.same_as(std):
            raise TransferError("contributing models must share one feature standardisation")

    W = np.stack([m.weights for m in models])
    mu = W.mean(axis=0)
    dev = W - mu
    var = np.sum(dev ** 2, axis=0) / (len(models) - 1)

    if sigma_encoding == "diag":
        sigma = np.maximum(var, sigma_floor)
    else:
        cov = dev.T @ dev / (len(models) - 1)
        sigma = shrinkage * np.diag(var) + (1.0 - shrinkage) * cov
        # the shrunk matrix is PSD with smallest eigenvalue >= shrinkage * min(var)
        if shrinkage * var.min() < sigma_floor:
            sigma = _floor_eigenvalues(sigma, sigma_floor)

    rss = sum(m.rss for m in models)
    dof = sum(m.residual_dof for m in models)
    noise_variance = rss / dof if dof > 0 else 0.0
    noise_variance = max(noise_variance, np.finfo(float).tiny)
    intercept = float(np.mean([m.intercept for m in models]))
    return PriorModel(mu, sigma, float(noise_variance), len(models), intercept, std, sigma_encoding)


def personalize(prior: PriorModel, X, y):
    """MAP update of the prior weights on a subject's first trials.

    The intercept becomes the mean residual of the prior weights on these
    trials; the weights then follow the Gaussian posterior mode, computed in
    the trial-space (Woodbury) form so no F x F inverse is needed.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 2 and X.shape[0] == 0:
        return PersonalizedModel(prior.mean_model(), prior.provenance_id(), 0)
    X = _as_matrix(X)
    k = X.shape[0]
    y = _as_vector(y, k)
    if X.shape[1] != prior.n_features:
        raise TransferError(f"expected {prior.n_features} features, got {X.shape[1]}")

    Z = prior.standardization.apply(X)
    b = float(np.mean(y - Z @ prior.mu))
    r = y - b - Z @ prior.mu
    if prior.sigma_encoding == "diag":
        if np.any(prior.sigma <= 0):
            raise TransferError("prior covariance is not positive definite")
        SZt = prior.sigma[:, None] * Z.T
    else:
        if not np.all(np.isfinite(prior.sigma)):
            raise TransferError("prior covariance contains non-finite values")
        SZt = prior.sigma @ Z.T
    gram = Z @ SZt + prior.noise_variance * np.eye(k)
    try:
        alpha = np.linalg.solve(gram, r)
    except np.linalg.LinAlgError as exc:
        raise TransferError("prior covariance is not positive definite") from exc
    w = prior.mu + SZt @ alpha
    base = LinearModel(w, b, prior.standardization)
    return PersonalizedModel(base, prior.provenance_id(), k)


def predict(model: Model, X):
    """Per-trial log-NARJ predictions of any model type."""
    return model.predict(X)


@dataclass
class SubjectData:
    """Flattened features (trials x F) and the observed log-NARJ per trial."""

    subject_id: str
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = _as_matrix(self.X)
        self.y = _as_vector(self.y, self.X.shape[0])


@dataclass
class SubjectEvaluation:
    subject_id: str
    eval_index: np.ndarray
    observed: np.ndarray
    prior_pred: np.ndarray
    personalized_pred: np.ndarray
    prior: PriorModel = field(repr=False)
    personalized: PersonalizedModel = field(repr=False)

    @property
    def prior_mse(self):
        return float(np.mean((self.prior_pred - self.observed) ** 2))

    @property
    def personalized_mse(self):
        return float(np.mean((self.personalized_pred - self.observed) ** 2))


def _fold(args):
    s, subjects, k_update, lam, shrinkage, sigma_floor, sigma_encoding = args
    target = subjects[s]
    others = [subj for i, subj in enumerate(subjects) if i != s]
    std = Standardization.fit(np.vstack([o.X for o in others]))
    models = [fit_subject_ridge(o.X, o.y, lam, standardization=std) for o in others]
    prior = fit_prior(models, shrinkage, sigma_floor, sigma_encoding)
    pers = personalize(prior, target.X[:k_update], target.y[:k_update])
    idx = np.arange(k_update, target.y.size)
    X_eval = target.X[idx]
    return SubjectEvaluation(
        subject_id=target.subject_id,
        eval_index=idx,
        observed=target.y[idx].copy(),
        prior_pred=prior.predict(X_eval),
        personalized_pred=pers.predict(X_eval),
        prior=prior,
        personalized=pers,
    )


def loso_evaluate(subjects: Sequence[SubjectData], k_update=DEFAULT_K_UPDATE, lam=DEFAULT_LAMBDA,
                  shrinkage=DEFAULT_SHRINKAGE, sigma_floor=DEFAULT_SIGMA_FLOOR,
                  sigma_encoding="dense", workers=1):
    """Leave-one-subject-out evaluation of prior and personalized models.

    For each subject the prior is built from all other subjects (features
    standardised with the pooled statistics of those subjects), personalised
    on the subject's first `k_update` trials, and both models predict the
    remaining trials. Folds are independent, so `workers` only changes speed.
    """
    subjects = list(subjects)
    if len(subjects) < 3:
        raise TransferError(f"need at least 3 subjects, got {len(subjects)}")
    F = subjects[0].X.shape[1]
    for subj in subjects:
        if subj.X.shape[1] != F:
            raise TransferError(f"subject {subj.subject_id}: {subj.X.shape[1]} features, expected {F}")
        if subj.y.size <= k_update:
            raise TransferError(
                f"subject {subj.subject_id} has {subj.y.size} trials, needs more than {k_update}")

    jobs = [(s, subjects, k_update, lam, shrinkage, sigma_floor, sigma_encoding)
            for s in range(len(subjects))]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_fold, jobs))
    return [_fold(job) for job in jobs]
