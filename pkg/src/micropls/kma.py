"""Kernel multilogit algorithm (KMA).

Labels become smoothed probability vectors, which are mapped to C-1 log
ratios against the reference class (the largest label). A kernel ridge
regression fits those log ratios; predictions are mapped back through the
inverse multilogit (softmax with a fixed zero for the reference class) and
classified by the most probable class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist, pdist
from scipy.special import logsumexp

from .core_data import Dataset, LabelVector
from .baselines import _as_complete
from .errors import DataError, NumericalError

LINEAR_PLUS_ONE = "linear-plus-one"
RBF = "rbf"
POLYNOMIAL = "polynomial"
KERNELS = (LINEAR_PLUS_ONE, RBF, POLYNOMIAL)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel choice.

    ``rbf``: exp(-|a - b|^2 / (2 sigma^2)); ``linear-plus-one``: <a, b> + 1;
    ``polynomial``: (<a, b> + offset)^degree.
    """

    kind: str = RBF
    rbf_sigma: float = 1.0
    poly_degree: int = 2
    poly_offset: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise DataError(f"unknown kernel {self.kind!r}; expected one of {KERNELS}")
        if self.kind == RBF and not self.rbf_sigma > 0:
            raise DataError(f"rbf_sigma must be positive, got {self.rbf_sigma}")
        if self.kind == POLYNOMIAL and (self.poly_degree < 1 or self.poly_offset < 0):
            raise DataError("polynomial kernel needs degree >= 1 and offset >= 0")


def gram(a, b, kernel: KernelSpec) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise DataError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]} columns")
    if kernel.kind == LINEAR_PLUS_ONE:
        return a @ b.T + 1.0
    if kernel.kind == POLYNOMIAL:
        return (a @ b.T + kernel.poly_offset) ** kernel.poly_degree
    return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * kernel.rbf_sigma ** 2))


def median_heuristic(x: np.ndarray) -> float:
    """Median pairwise Euclidean distance between rows (1.0 if all rows coincide)."""
    d = pdist(np.asarray(x, dtype=float))
    med = float(np.median(d)) if d.size else 0.0
    return med if med > 0 else 1.0


@dataclass(frozen=True)
class MultilogitTarget:
    theta: np.ndarray
    smoothing_epsilon: float


def smoothed_onehot(y: LabelVector, epsilon: float) -> np.ndarray:
    """1 - eps on the true class, eps / (C - 1) elsewhere."""
    if not 0 < epsilon <= 0.5:
        raise DataError(f"epsilon must lie in (0, 0.5], got {epsilon}")
    C = y.class_count
    if C < 2:
        raise DataError("need at least 2 classes")
    t = np.full((len(y), C), epsilon / (C - 1))
    t[np.arange(len(y)), y.labels] = 1.0 - epsilon
    return t


def multilogit(t: np.ndarray) -> np.ndarray:
    """log(t_j / t_C) for j < C, the last column being the reference."""
    t = np.asarray(t, dtype=float)
    return np.log(t[:, :-1]) - np.log(t[:, -1:])


def inverse_multilogit(theta: np.ndarray) -> np.ndarray:
    """Probabilities from log ratios: softmax over ``[theta, 0]``."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    full = np.column_stack([theta, np.zeros(theta.shape[0])])
    return np.exp(full - logsumexp(full, axis=1, keepdims=True))


def encode_targets(y: LabelVector, epsilon: float = 0.1) -> MultilogitTarget:
    return MultilogitTarget(multilogit(smoothed_onehot(y, epsilon)), float(epsilon))


@dataclass(frozen=True)
class KmaModel:
    gamma: np.ndarray
    train_x: np.ndarray
    kernel: KernelSpec
    lam: float
    epsilon: float
    class_count: int
    class_names: tuple = ()

    def decision(self, x_new) -> np.ndarray:
        X = _as_complete(x_new, "KMA")
        if X.shape[1] != self.train_x.shape[1]:
            raise DataError(f"dimension mismatch: model has {self.train_x.shape[1]} columns, input {X.shape[1]}")
        return gram(X, self.train_x, self.kernel) @ self.gamma


def solve_dual(K: np.ndarray, theta: np.ndarray, lam: float) -> np.ndarray:
    """Solve ``(K + lam I) gamma = theta`` by Cholesky, with a jitter fallback."""
    n = K.shape[0]
    A = K + lam * np.eye(n)
    if not np.all(np.isfinite(A)) or not np.all(np.isfinite(theta)):
        raise NumericalError("non-finite entries in the kernel system")
    try:
        gamma = linalg.cho_solve(linalg.cho_factor(A), theta)
    except linalg.LinAlgError:
        jitter = 1e-10 * np.trace(K) / n
        try:
            gamma = linalg.cho_solve(linalg.cho_factor(A + jitter * np.eye(n)), theta)
        except linalg.LinAlgError as exc:
            raise NumericalError(f"kernel system not positive definite: {exc}") from None
    resid = np.linalg.norm(A @ gamma - theta)
    if not np.isfinite(resid) or resid > 1e-6 * max(np.linalg.norm(theta), 1e-300):
        raise NumericalError(f"kernel solve residual {resid:.3g} too large")
    return gamma


def fit_kma(d: Dataset, kernel: KernelSpec | None = None, lam: float = 1.0, epsilon: float = 0.1) -> KmaModel:
    """Kernel ridge fit of the multilogit-encoded labels.

    ``kernel=None`` means an RBF kernel with the median-heuristic width.
    """
    if not lam > 0:
        raise DataError(f"lambda must be positive, got {lam}")
    X = _as_complete(d.x, "KMA")
    d.y.require_all_classes()
    if kernel is None:
        kernel = KernelSpec(RBF, rbf_sigma=median_heuristic(X))
    target = encode_targets(d.y, epsilon)
    gamma = solve_dual(gram(X, X, kernel), target.theta, lam)
    return KmaModel(gamma, X, kernel, float(lam), float(epsilon), d.y.class_count, d.y.class_names)


def predict_kma(model: KmaModel, x_new) -> tuple[np.ndarray, np.ndarray]:
    """Labels (most probable class, ties to the smaller label) and class probabilities."""
    probs = inverse_multilogit(model.decision(x_new))
    return probs.argmax(axis=1), probs
