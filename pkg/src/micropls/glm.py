"""IRLS fitting of binomial-logit and Gaussian-identity GLMs with Wald tests.

``fit_glm`` fits one design. ``univariate_slope_batch`` fits, for every gene
j at once, the model ``y ~ 1 + controls + x_j`` on the rows where gene j is
observed, and returns the coefficient of ``x_j`` and its Wald p-value. The
batch path stacks the small per-gene normal equations into a
``(p, q, q)`` array and runs Newton steps on all genes together.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .core_data import ExpressionMatrix
from .errors import DataError, RankDeficientError

BINOMIAL = "binomial"
GAUSSIAN = "gaussian"
FAMILIES = (BINOMIAL, GAUSSIAN)

MAX_ITER = 50
TOL = 1e-8
# |linear predictor| beyond this means fitted probabilities are numerically 0 or 1:
# the data are (quasi-)separated and the MLE does not exist.
SEPARATION_ETA = 25.0
_MAX_HALVINGS = 30


@dataclass(frozen=True)
class GlmFit:
    coefficients: np.ndarray
    standard_errors: np.ndarray
    wald_p_values: np.ndarray
    converged: bool
    family: str
    iterations: int
    separated: bool = False
    loglik_trace: tuple = field(default=(), repr=False)

    def predict_linear(self, design: np.ndarray) -> np.ndarray:
        return np.asarray(design, dtype=float) @ self.coefficients

    def predict_mean(self, design: np.ndarray) -> np.ndarray:
        eta = self.predict_linear(design)
        return _expit(eta) if self.family == BINOMIAL else eta


def _expit(eta):
    return 0.5 * (1.0 + np.tanh(0.5 * eta))


def _loglik(eta, y, w=1.0):
    # Bernoulli log-likelihood y*eta - log(1 + e^eta), weighted by w (0 for unobserved rows)
    return np.sum(w * (y * eta - np.logaddexp(0.0, eta)), axis=0)


def wald_p_value(coef, se):
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(coef) / se
    p = 2.0 * stats.norm.sf(z)
    return np.where(np.isfinite(p), p, 1.0)


def _step_converged(step, beta, tol):
    # Newton-step criterion; a vanishing score alone is not enough because the
    # score also vanishes while coefficients diverge on separated data
    return np.abs(step).max(initial=0.0) <= tol * (1.0 + np.abs(beta).max(initial=0.0))


def _check_family(family: str) -> None:
    if family not in FAMILIES:
        raise DataError(f"unknown family {family!r}; expected one of {FAMILIES}")


def _check_binary(y: np.ndarray) -> None:
    if not np.all((y == 0) | (y == 1)):
        raise DataError("binomial response must be coded 0/1")


def dependent_columns(design: np.ndarray) -> list[int]:
    """Columns that are linear combinations of the others (empty if full rank)."""
    n, q = design.shape
    _, r, piv = linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max(initial=0.0) * max(n, q) * np.finfo(float).eps
    rank = int((diag > tol).sum())
    return sorted(piv[rank:].tolist())


def fit_glm(design, y, family: str = BINOMIAL, max_iter: int = MAX_ITER, tol: float = TOL) -> GlmFit:
    """Fit a GLM by iteratively reweighted least squares.

    Parameters
    ----------
    design : array_like, shape (n, q)
        Complete design matrix, intercept column included by the caller.
    y : array_like, shape (n,)
        Response; 0/1 for the binomial family.
    family : {"binomial", "gaussian"}
    max_iter : int
        Newton iterations allowed for the binomial family.
    tol : float
        Convergence threshold on the Newton step, relative to the size of
        the coefficients.

    Returns
    -------
    GlmFit
        For separated binomial data, ``converged`` is False and the last
        iterate's coefficients are returned.

    Raises
    ------
    RankDeficientError
        If the design has linearly dependent columns.
    """
    _check_family(family)
    X = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[1] < 1:
        raise DataError(f"design shape {X.shape} incompatible with response length {y.shape[0]}")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise DataError("design and response must be complete and finite")
    dep = dependent_columns(X)
    if dep:
        raise RankDeficientError(dep)
    n, q = X.shape

    if family == GAUSSIAN:
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ beta
        df = n - q
        if df > 0:
            sigma2 = float(resid @ resid) / df
            cov = sigma2 * np.linalg.inv(X.T @ X)
            se = np.sqrt(np.diag(cov))
        else:
            se = np.full(q, np.inf)
        return GlmFit(beta, se, wald_p_value(beta, se), True, family, 1)

    _check_binary(y)
    beta = np.zeros(q)
    eta = X @ beta
    ll = _loglik(eta, y)
    trace = [float(ll)]
    converged = separated = False
    it = 0
    while it < max_iter:
        mu = _expit(eta)
        score = X.T @ (y - mu)
        w = mu * (1.0 - mu)
        info = X.T @ (w[:, None] * X)
        try:
            step = linalg.solve(info, score, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = np.linalg.lstsq(info, score, rcond=None)[0]
        if _step_converged(step, beta, tol):
            converged = True
            break
        if np.abs(eta).max() > SEPARATION_ETA:
            separated = True
            break
        full_step = step
        for _ in range(_MAX_HALVINGS):
            cand = beta + step
            eta_c = X @ cand
            ll_c = _loglik(eta_c, y)
            if ll_c >= ll:
                break
            step = step / 2
        else:
            # no ascent left: at the optimum up to rounding unless the step is large
            converged = _step_converged(full_step, beta, np.sqrt(tol))
            break
        beta, eta, ll = cand, eta_c, ll_c
        trace.append(float(ll))
        it += 1
    mu = _expit(eta)
    w = mu * (1.0 - mu)
    info = X.T @ (w[:, None] * X)
    try:
        se = np.sqrt(np.diag(np.linalg.inv(info)))
    except np.linalg.LinAlgError:
        se = np.full(q, np.inf)
    se = np.where(np.isfinite(se), se, np.inf)
    return GlmFit(beta, se, wald_p_value(beta, se), converged, family, it, separated, tuple(trace))


@dataclass(frozen=True)
class SlopeBatch:
    """Per-gene results of :func:`univariate_slope_batch`.

    ``degenerate`` genes (constant or too few observed rows) carry slope 0 and
    p-value 1. ``converged`` is False for binomial fits stopped by separation
    or by the iteration limit.
    """

    slopes: np.ndarray
    p_values: np.ndarray
    converged: np.ndarray
    degenerate: np.ndarray


def _normal_blocks(B, Xf, W, Z=None):
    """Stack per-gene ``[B, x_j]' diag(W_j) [B, x_j]`` (and ``... z_j``) into arrays."""
    n, p = Xf.shape
    r = B.shape[1]
    q = r + 1
    A = np.empty((p, q, q))
    BB = (B[:, :, None] * B[:, None, :]).reshape(n, r * r)
    A[:, :r, :r] = (W.T @ BB).reshape(p, r, r)
    WX = W * Xf
    A[:, :r, r] = A[:, r, :r] = WX.T @ B
    A[:, r, r] = (WX * Xf).sum(axis=0)
    if Z is None:
        return A
    WZ = W * Z
    b = np.empty((p, q))
    b[:, :r] = WZ.T @ B
    b[:, r] = (WZ * Xf).sum(axis=0)
    return A, b


def _batch_solve(A, b):
    return np.linalg.solve(A, b[..., None])[..., 0]


def _batch_inv_last(A):
    # variance of the last coefficient: [A^{-1}]_{qq}
    q = A.shape[-1]
    e = np.zeros((A.shape[0], q))
    e[:, -1] = 1.0
    return _batch_solve(A, e)[:, -1]


def slope_batch(values: np.ndarray, mask: np.ndarray, controls, y, family: str = BINOMIAL,
                max_iter: int = MAX_ITER, tol: float = TOL) -> SlopeBatch:
    """Array-level core of :func:`univariate_slope_batch`.

    ``values`` may hold anything (NaN included) where ``mask`` is False.
    """
    _check_family(family)
    y = np.asarray(y, dtype=float)
    n, p = values.shape
    controls = np.zeros((n, 0)) if controls is None else np.asarray(controls, dtype=float).reshape(n, -1)
    if not np.all(np.isfinite(controls)):
        raise DataError("controls must be complete")
    if y.shape != (n,):
        raise DataError(f"response length {y.shape} != {n} rows")
    if family == BINOMIAL:
        _check_binary(y)
    B = np.column_stack([np.ones(n), controls])
    q = B.shape[1] + 1
    M = np.asarray(mask, dtype=float)
    Xf = np.where(mask, values, 0.0)

    # degenerate: too few rows, or x_j (near) collinear with [1, controls] on its rows
    A0 = _normal_blocks(B, Xf, M)
    d = np.sqrt(np.einsum("jkk->jk", A0))
    with np.errstate(divide="ignore", invalid="ignore"):
        As = A0 / (d[:, :, None] * d[:, None, :])
    degenerate = (M.sum(axis=0) < q + 2) | np.any(~(d > 0), axis=1)
    As[degenerate] = np.eye(q)
    degenerate |= np.linalg.eigvalsh(As)[:, 0] < 1e-10
    ok = ~degenerate

    slopes = np.zeros(p)
    pvals = np.ones(p)
    converged = np.ones(p, dtype=bool)
    if not ok.any():
        return SlopeBatch(slopes, pvals, converged, degenerate)
    Xo, Mo = Xf[:, ok], M[:, ok]
    po = Xo.shape[1]

    if family == GAUSSIAN:
        A, b = _normal_blocks(B, Xo, Mo, np.broadcast_to(y[:, None], Xo.shape))
        beta = _batch_solve(A, b)
        eta = B @ beta[:, :-1].T + Xo * beta[:, -1]
        rss = np.sum(Mo * (y[:, None] - eta) ** 2, axis=0)
        sigma2 = rss / (Mo.sum(axis=0) - q)
        se = np.sqrt(sigma2 * _batch_inv_last(A))
        slopes[ok] = beta[:, -1]
        pvals[ok] = wald_p_value(beta[:, -1], se)
        return SlopeBatch(slopes, pvals, converged, degenerate)

    Y = np.broadcast_to(y[:, None], Xo.shape)
    beta = np.zeros((po, q))
    eta = np.zeros_like(Xo)
    ll = _loglik(eta, Y, Mo)
    active = np.ones(po, dtype=bool)
    conv = np.zeros(po, dtype=bool)
    for _ in range(max_iter):
        a = np.flatnonzero(active)
        if a.size == 0:
            break
        mu = _expit(eta[:, a])
        W = Mo[:, a] * mu * (1.0 - mu)
        resid = Mo[:, a] * (Y[:, a] - mu)
        score = np.empty((a.size, q))
        score[:, :-1] = resid.T @ B
        score[:, -1] = (resid * Xo[:, a]).sum(axis=0)
        A = _normal_blocks(B, Xo[:, a], W)
        step = _batch_solve(A, score)
        done = np.abs(step).max(axis=1) <= tol * (1.0 + np.abs(beta[a]).max(axis=1))
        conv[a[done]] = True
        sep = ~done & (np.max(np.abs(eta[:, a]) * Mo[:, a], axis=0) > SEPARATION_ETA)
        keep = ~(done | sep)
        active[a[~keep]] = False
        a, step, score = a[keep], step[keep], score[keep]
        if a.size == 0:
            break
        base_ll = ll[a]
        full_step = step.copy()
        todo = np.ones(a.size, dtype=bool)
        new_eta = np.empty((n, a.size))
        new_ll = np.empty(a.size)
        for _ in range(_MAX_HALVINGS):
            idx = np.flatnonzero(todo)
            cand = beta[a[idx]] + step[idx]
            e = B @ cand[:, :-1].T + Xo[:, a[idx]] * cand[:, -1]
            l = _loglik(e, Y[:, a[idx]], Mo[:, a[idx]])
            good = l >= base_ll[idx]
            new_eta[:, idx[good]] = e[:, good]
            new_ll[idx[good]] = l[good]
            todo[idx[good]] = False
            step[idx[~good]] /= 2
            if not todo.any():
                break
        # no ascent left along the Newton direction
        stuck = todo
        conv[a[stuck]] = (np.abs(full_step[stuck]).max(axis=1)
                          <= np.sqrt(tol) * (1.0 + np.abs(beta[a[stuck]]).max(axis=1)))
        active[a[stuck]] = False
        moved = ~stuck
        am = a[moved]
        beta[am] += step[moved]
        eta[:, am] = new_eta[:, moved]
        ll[am] = new_ll[moved]

    separated = np.max(np.abs(eta) * Mo, axis=0) > SEPARATION_ETA
    conv &= ~separated
    mu = _expit(eta)
    A = _normal_blocks(B, Xo, Mo * mu * (1.0 - mu))
    with np.errstate(invalid="ignore", divide="ignore"):
        try:
            var = _batch_inv_last(A)
        except np.linalg.LinAlgError:
            var = np.array([_safe_inv_last(Aj) for Aj in A])
        se = np.where(var > 0, np.sqrt(np.abs(var)), np.inf)
    slopes[ok] = beta[:, -1]
    pvals[ok] = wald_p_value(beta[:, -1], se)
    converged[ok] = conv
    return SlopeBatch(slopes, pvals, converged, degenerate)


def _safe_inv_last(A):
    try:
        return np.linalg.inv(A)[-1, -1]
    except np.linalg.LinAlgError:
        return np.inf


def univariate_slope_batch(x: ExpressionMatrix, controls, y, family: str = BINOMIAL,
                           max_iter: int = MAX_ITER, tol: float = TOL) -> SlopeBatch:
    """Coefficient of each gene in ``y ~ 1 + controls + x_j``, fitted gene by gene.

    Each gene's fit uses only the rows where that gene is observed.
    """
    return slope_batch(x.values, x.mask, controls, y, family, max_iter, tol)
