"""PLS generalized linear regression (PLSGLR) components and classifier heads.

Component h is built from per-gene GLM slopes of ``y ~ t_1..t_{h-1} + x_j``,
normalized into a weight vector ``w_h``. The component scores of a sample are
the no-intercept least-squares slope of its (deflated) row on ``w_h``, taken
over that row's observed genes only, so samples with missing values still
get scores. The predictors are then deflated on ``t_h``.

Two heads consume the components: logistic regression (``PlsGlrLogHead``)
and linear discriminant analysis (``PlsGlrDaHead``).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .baselines import LdaModel, fit_lda_arrays, lda_predict_arrays
from .core_data import Dataset, ExpressionMatrix, column_means
from .errors import DataError
from .glm import BINOMIAL, GAUSSIAN, MAX_ITER, TOL, GlmFit, fit_glm, slope_batch

log = logging.getLogger(__name__)

DEFAULT_P_THRESHOLD = 0.05


@dataclass(frozen=True)
class PlsGlrModel:
    """Fitted PLSGLR components.

    Attributes
    ----------
    weights : ndarray, shape (p, m)
        Unit-norm ``w_h``, applied to the deflated residual matrices.
    x_weights : ndarray, shape (p, m)
        ``w*_h`` with ``T = (X - column_means) @ x_weights`` for complete rows.
    loadings : ndarray, shape (p, m)
        Deflation loadings ``p_h`` (``X_h = X_{h-1} - t_h p_h'``).
    components : ndarray, shape (n, m)
        Training scores.
    """

    weights: np.ndarray
    x_weights: np.ndarray
    loadings: np.ndarray
    components: np.ndarray
    column_means: np.ndarray
    family: str
    sparsify_p_threshold: float | None
    gene_ids: tuple = ()

    @property
    def m(self) -> int:
        return self.weights.shape[1]

    @property
    def p(self) -> int:
        return self.weights.shape[0]

    def truncate(self, m: int) -> "PlsGlrModel":
        """The first ``m`` components (extraction is sequential, so this is exact)."""
        if not 1 <= m <= self.m:
            raise DataError(f"cannot truncate {self.m} components to {m}")
        return PlsGlrModel(self.weights[:, :m], self.x_weights[:, :m], self.loadings[:, :m],
                           self.components[:, :m], self.column_means, self.family,
                           self.sparsify_p_threshold, self.gene_ids)


def _slope_scores(resid: np.ndarray, mask: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-row no-intercept LS slope of the observed entries of ``resid`` on ``w``."""
    num = np.where(mask, resid, 0.0) @ w
    den = mask @ (w * w)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / den, 0.0)


def _deflate(resid: np.ndarray, mask: np.ndarray, t: np.ndarray, loading: np.ndarray) -> np.ndarray:
    return np.where(mask, resid - np.outer(t, loading), np.nan)


def _loadings(resid: np.ndarray, mask: np.ndarray, t: np.ndarray) -> np.ndarray:
    num = np.where(mask, resid, 0.0).T @ t
    den = mask.T.astype(float) @ (t * t)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / den, 0.0)


def _sign_fix(w: np.ndarray) -> np.ndarray:
    return w if w[np.abs(w).argmax()] >= 0 else -w


def _clip_separated(slopes: np.ndarray, batch) -> np.ndarray:
    """Cap non-converged |slope| at the 99th percentile of converged |slope|."""
    usable = ~batch.degenerate
    good = usable & batch.converged
    bad = usable & ~batch.converged
    if not bad.any() or not good.any():
        return slopes
    cap = np.percentile(np.abs(slopes[good]), 99)
    out = slopes.copy()
    out[bad] = np.clip(out[bad], -cap, cap)
    return out


def fit_components(x: ExpressionMatrix, y, m: int, family: str = BINOMIAL,
                   sparsify_p_threshold: float | None = DEFAULT_P_THRESHOLD,
                   stop_when_insignificant: bool = True,
                   max_iter: int = MAX_ITER, tol: float = TOL) -> PlsGlrModel:
    """Extract up to ``m`` PLSGLR components of ``x`` against response ``y``.

    Parameters
    ----------
    x : ExpressionMatrix
        Raw (uncentred) predictors; may contain missing entries.
    y : array_like, shape (n,)
        0/1 for ``family="binomial"``, real for ``"gaussian"``.
    m : int
        Maximum number of components.
    sparsify_p_threshold : float or None
        Slopes with Wald p-value above this are zeroed before normalizing.
        None disables sparsification.
    stop_when_insignificant : bool
        Stop before component h (h >= 2) if sparsification leaves no slope.

    Notes
    -----
    The first component never stops early: if nothing is significant at
    h = 1, the unsparsified slopes are used.
    """
    if m < 1:
        raise DataError(f"number of components must be >= 1, got {m}")
    y = np.asarray(y, dtype=float)
    means = column_means(x)
    mask = x.mask
    xc = x.values - means
    resid = xc.copy()
    n, p = x.shape

    W, Ws, P, T = [], [], [], []
    for h in range(m):
        controls = np.column_stack(T) if T else None
        batch = slope_batch(xc, mask, controls, y, family, max_iter, tol)
        a = _clip_separated(batch.slopes, batch)
        if sparsify_p_threshold is not None:
            sparse = np.where(batch.p_values > sparsify_p_threshold, 0.0, a)
            if np.any(sparse != 0):
                a = sparse
            elif h > 0 and stop_when_insignificant:
                log.info("no significant slopes for component %d; stopping at %d", h + 1, h)
                break
        if not np.any(a != 0):
            if h == 0:
                raise DataError("no gene has a usable GLM slope: cannot build the first component")
            break
        w = _sign_fix(a / np.linalg.norm(a))
        t = _slope_scores(resid, mask, w)
        if not np.any(np.abs(t) > 0):
            if h == 0:
                raise DataError("first component is identically zero")
            break
        loading = _loadings(resid, mask, t)
        wstar = w - (np.column_stack(Ws) @ (np.column_stack(P).T @ w) if Ws else 0.0)
        resid = _deflate(resid, mask, t, loading)
        W.append(w)
        Ws.append(wstar)
        P.append(loading)
        T.append(t)

    return PlsGlrModel(np.column_stack(W), np.column_stack(Ws), np.column_stack(P), np.column_stack(T),
                       means, family, sparsify_p_threshold, x.gene_ids)


def response_for(d: Dataset, family: str) -> np.ndarray:
    if family == BINOMIAL:
        if d.y.class_count != 2:
            raise DataError(f"binomial PLSGLR needs 2 classes, got {d.y.class_count}")
        d.y.require_all_classes()
    return d.y.labels.astype(float)


def extract_components(d: Dataset, m: int, family: str = BINOMIAL,
                       sparsify_p_threshold: float | None = DEFAULT_P_THRESHOLD,
                       stop_when_insignificant: bool = True) -> PlsGlrModel:
    return fit_components(d.x, response_for(d, family), m, family, sparsify_p_threshold,
                          stop_when_insignificant)


def project(model: PlsGlrModel, x_new: ExpressionMatrix | np.ndarray) -> np.ndarray:
    """Component scores of new samples (missing entries handled by the slope rule)."""
    if not isinstance(x_new, ExpressionMatrix):
        x_new = ExpressionMatrix(np.atleast_2d(np.asarray(x_new, dtype=float)))
    if x_new.p != model.p:
        raise DataError(f"column-count mismatch: model has {model.p} genes, input has {x_new.p}")
    mask = x_new.mask
    resid = x_new.values - model.column_means
    T = np.empty((x_new.n, model.m))
    for h in range(model.m):
        T[:, h] = _slope_scores(resid, mask, model.weights[:, h])
        resid = _deflate(resid, mask, T[:, h], model.loadings[:, h])
    return T


def _design(T: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(T.shape[0]), T])


@dataclass(frozen=True)
class PlsGlrLogHead:
    """PLSGLR components followed by logistic regression on them."""

    model: PlsGlrModel
    glm: GlmFit

    @property
    def coefficients(self) -> np.ndarray:
        return self.glm.coefficients

    def predict_proba(self, x_new) -> np.ndarray:
        return self.glm.predict_mean(_design(project(self.model, x_new)))

    def predict(self, x_new) -> np.ndarray:
        return (self.predict_proba(x_new) > 0.5).astype(int)


@dataclass(frozen=True)
class PlsGlrDaHead:
    """PLSGLR components followed by LDA on them."""

    model: PlsGlrModel
    lda: LdaModel

    def predict(self, x_new) -> np.ndarray:
        return lda_predict_arrays(self.lda, project(self.model, x_new))[0]


def fit_plsglr_log(d: Dataset, m: int, sparsify_p_threshold: float | None = DEFAULT_P_THRESHOLD,
                   stop_when_insignificant: bool = True, model: PlsGlrModel | None = None) -> PlsGlrLogHead:
    """Binomial PLSGLR components plus a logistic fit of y on them.

    ``model`` lets callers reuse already extracted components (it is
    truncated to ``m``).
    """
    y = response_for(d, BINOMIAL)
    if model is None:
        model = extract_components(d, m, BINOMIAL, sparsify_p_threshold, stop_when_insignificant)
    elif model.m > m:
        model = model.truncate(m)
    glm = fit_glm(_design(model.components), y, BINOMIAL)
    if not glm.converged:
        log.info("logistic head did not converge (separation); keeping last iterate")
    return PlsGlrLogHead(model, glm)


def fit_plsglrda(d: Dataset, m: int, sparsify_p_threshold: float | None = DEFAULT_P_THRESHOLD,
                 stop_when_insignificant: bool = True, ridge: float = 0.0,
                 model: PlsGlrModel | None = None) -> PlsGlrDaHead:
    """Binomial PLSGLR components plus LDA on the training scores."""
    d.y.require_all_classes()
    if model is None:
        model = extract_components(d, m, BINOMIAL, sparsify_p_threshold, stop_when_insignificant)
    elif model.m > m:
        model = model.truncate(m)
    T = model.components
    ok = np.all(np.isfinite(T), axis=1)
    if not ok.all():
        warnings.warn(f"excluding {int((~ok).sum())} samples with incomplete components from the LDA fit")
    lda = fit_lda_arrays(T[ok], d.y.labels[ok], d.y.class_count, ridge)
    return PlsGlrDaHead(model, lda)


__all__ = [
    "PlsGlrModel", "PlsGlrLogHead", "PlsGlrDaHead", "fit_components", "extract_components",
    "project", "fit_plsglr_log", "fit_plsglrda", "BINOMIAL", "GAUSSIAN",
]
