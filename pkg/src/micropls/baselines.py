"""Comparison classifiers: k-nearest neighbours, LDA, and PLS-DA (NIPALS scores + LDA).

All of them require complete data and refuse masked input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from .core_data import Dataset, ExpressionMatrix
from .errors import DataError, NumericalError


def _as_complete(x, what: str) -> np.ndarray:
    if isinstance(x, ExpressionMatrix):
        return x.require_complete(what)
    a = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(a)):
        raise DataError(f"{what} requires complete data")
    return a


# --- k nearest neighbours -------------------------------------------------

@dataclass(frozen=True)
class KnnConfig:
    k: int = 3
    metric: str = "euclidean"

    def __post_init__(self):
        if self.k < 1:
            raise DataError(f"k must be >= 1, got {self.k}")
        if self.metric != "euclidean":
            raise DataError(f"unsupported metric {self.metric!r}")


def knn_classify(train: Dataset, cfg: KnnConfig, x_new) -> np.ndarray:
    """Majority vote among the ``k`` nearest training rows.

    Distance ties go to the lower training index, vote ties to the smaller label.
    """
    X = _as_complete(train.x, "KNN")
    Q = _as_complete(x_new, "KNN")
    if Q.shape[1] != X.shape[1]:
        raise DataError(f"column-count mismatch: {X.shape[1]} vs {Q.shape[1]}")
    if cfg.k > X.shape[0]:
        raise DataError(f"k={cfg.k} exceeds training size {X.shape[0]}")
    dist = cdist(Q, X, "sqeuclidean")
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :cfg.k]
    votes = train.y.labels[nearest]
    counts = np.apply_along_axis(np.bincount, 1, votes, minlength=train.y.class_count)
    return counts.argmax(axis=1)


# --- linear discriminant analysis ------------------------------------------

@dataclass(frozen=True)
class LdaModel:
    """Gaussian LDA with a shared (pooled within-class) covariance.

    ``cov_inv`` is the inverse of the pooled covariance after any ridge.
    """

    means: np.ndarray
    cov_inv: np.ndarray
    log_priors: np.ndarray
    ridge: float = 0.0

    def discriminants(self, X: np.ndarray) -> np.ndarray:
        lin = self.cov_inv @ self.means.T
        const = -0.5 * np.einsum("kq,qk->k", self.means, lin) + self.log_priors
        return X @ lin + const


def fit_lda_arrays(X: np.ndarray, labels: np.ndarray, class_count: int, ridge: float = 0.0) -> LdaModel:
    X = _as_complete(X, "LDA")
    labels = np.asarray(labels, dtype=int)
    n, q = X.shape
    counts = np.bincount(labels, minlength=class_count)
    if np.any(counts < 2):
        raise DataError(f"LDA needs >= 2 samples per class, got counts {counts.tolist()}")
    if ridge < 0:
        raise DataError("ridge must be >= 0")
    onehot = np.eye(class_count)[labels]
    means = (onehot.T @ X) / counts[:, None]
    dev = X - means[labels]
    dof = n - class_count
    if dof <= 0:
        raise NumericalError("LDA needs more samples than classes")
    S = dev.T @ dev / dof
    if ridge > 0:
        S = S + ridge * (np.trace(S) / q) * np.eye(q)
    evals = np.linalg.eigvalsh(S)
    if not evals[-1] > 0 or evals[0] <= evals[-1] * 1e-12:
        hint = "; use ridge > 0" if ridge == 0 else ""
        raise NumericalError(f"singular pooled covariance (q={q}, n={n}){hint}")
    cov_inv = linalg.cho_solve(linalg.cho_factor(S), np.eye(q))
    cov_inv = 0.5 * (cov_inv + cov_inv.T)
    return LdaModel(means, cov_inv, np.log(counts / n), float(ridge))


def lda_predict_arrays(model: LdaModel, X) -> tuple[np.ndarray, np.ndarray]:
    X = _as_complete(X, "LDA")
    if X.shape[1] != model.means.shape[1]:
        raise DataError(f"column-count mismatch: model has {model.means.shape[1]}, input {X.shape[1]}")
    scores = model.discriminants(X)
    return scores.argmax(axis=1), scores


def fit_lda(d: Dataset, ridge: float = 0.0) -> LdaModel:
    d.y.require_all_classes(2)
    return fit_lda_arrays(_as_complete(d.x, "LDA"), d.y.labels, d.y.class_count, ridge)


def lda_predict(model: LdaModel, x_new) -> tuple[np.ndarray, np.ndarray]:
    """Predicted labels (argmax discriminant, ties to the smaller label) and scores."""
    return lda_predict_arrays(model, x_new)


# --- PLS discriminant analysis ---------------------------------------------

@dataclass(frozen=True)
class PlsDaModel:
    x_mean: np.ndarray
    weights: np.ndarray
    loadings: np.ndarray
    y_loadings: np.ndarray
    rotations: np.ndarray
    scores: np.ndarray
    lda: LdaModel

    @property
    def m(self) -> int:
        return self.weights.shape[1]

    def transform(self, x_new) -> np.ndarray:
        X = _as_complete(x_new, "PLS-DA")
        if X.shape[1] != self.x_mean.size:
            raise DataError(f"column-count mismatch: model has {self.x_mean.size}, input {X.shape[1]}")
        return (X - self.x_mean) @ self.rotations


def dummy_code(labels: np.ndarray, class_count: int) -> np.ndarray:
    return np.eye(class_count)[np.asarray(labels, dtype=int)]


def nipals_pls2(X: np.ndarray, Y: np.ndarray, m: int, tol: float = 1e-12, max_iter: int = 500):
    """Two-block NIPALS PLS on centred ``X`` (n x p) and ``Y`` (n x C).

    Stops early when the X residual is exhausted. Returns ``(W, P, Q, T)``.
    """
    E, F = X.copy(), Y.copy()
    scale = np.linalg.norm(X)
    W, P, Q, T = [], [], [], []
    for _ in range(m):
        if np.linalg.norm(E) <= 1e-12 * scale or np.linalg.norm(F) == 0:
            break
        u = F[:, np.argmax((F ** 2).sum(axis=0))]
        t_old = None
        for _ in range(max_iter):
            w = E.T @ u
            nw = np.linalg.norm(w)
            if nw == 0:
                break
            w /= nw
            t = E @ w
            c = F.T @ t / (t @ t)
            u = F @ c / (c @ c)
            if t_old is not None and np.linalg.norm(t - t_old) <= tol * np.linalg.norm(t):
                break
            t_old = t
        if nw == 0 or np.linalg.norm(t) <= 1e-12 * scale:
            break
        if w[np.abs(w).argmax()] < 0:
            w, t, c = -w, -t, -c
        tt = t @ t
        p = E.T @ t / tt
        E = E - np.outer(t, p)
        F = F - np.outer(t, c)
        W.append(w)
        P.append(p)
        Q.append(c)
        T.append(t)
    if not W:
        raise NumericalError("PLS found no component (X or Y has no variation)")
    return tuple(np.column_stack(a) for a in (W, P, Q, T))


def fit_plsda(d: Dataset, m: int, ridge: float = 0.0) -> PlsDaModel:
    """Classical PLS on a one-hot coded response, then LDA on the ``m`` scores."""
    if m < 1:
        raise DataError(f"number of components must be >= 1, got {m}")
    X = _as_complete(d.x, "PLS-DA")
    d.y.require_all_classes(2)
    x_mean = X.mean(axis=0)
    Y = dummy_code(d.y.labels, d.y.class_count)
    W, P, Q, T = nipals_pls2(X - x_mean, Y - Y.mean(axis=0), m)
    rotations = W @ np.linalg.inv(P.T @ W)
    lda = fit_lda_arrays(T, d.y.labels, d.y.class_count, ridge)
    return PlsDaModel(x_mean, W, P, Q, rotations, T, lda)


def plsda_predict(model: PlsDaModel, x_new) -> np.ndarray:
    return lda_predict_arrays(model.lda, model.transform(x_new))[0]
