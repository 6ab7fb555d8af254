import numpy as np
import pytest

from micropls.core_data import ExpressionMatrix, LabelVector
from micropls.errors import DataError
from micropls.kma import (KernelSpec, encode_targets, fit_kma, gram, inverse_multilogit, median_heuristic,
                          predict_kma, smoothed_onehot, solve_dual)

from synth import blobs, random_dataset

LIN = KernelSpec("linear-plus-one")


def test_encode_examples():
    y = LabelVector(np.array([0, 1]), 2)
    np.testing.assert_allclose(encode_targets(y, 0.5).theta, 0, atol=1e-15)
    theta = encode_targets(y, 0.1).theta[:, 0]
    assert theta[0] == pytest.approx(np.log(9), abs=1e-12)
    assert theta[1] == pytest.approx(-np.log(9), abs=1e-12)
    assert abs(theta[0] - 2.1972246) < 1e-7


def test_reference_row_value():
    y = LabelVector(np.array([0, 1, 2]), 3)
    eps = 0.2
    np.testing.assert_allclose(encode_targets(y, eps).theta[2], np.log(eps / 2) - np.log(1 - eps))


@pytest.mark.parametrize("eps", [0.0, 0.6, -0.1])
def test_epsilon_range(eps):
    with pytest.raises(DataError):
        encode_targets(LabelVector(np.array([0, 1]), 2), eps)


@pytest.mark.parametrize("C", [2, 3, 5])
@pytest.mark.parametrize("eps", [0.05, 0.1, 0.3])
def test_round_trip(C, eps):
    y = LabelVector(np.arange(2 * C) % C, C)
    t = smoothed_onehot(y, eps)
    np.testing.assert_allclose(inverse_multilogit(encode_targets(y, eps).theta), t, atol=1e-12, rtol=0)


def test_inverse_examples():
    np.testing.assert_allclose(inverse_multilogit(np.zeros((1, 3))), [[0.25] * 4])
    np.testing.assert_allclose(inverse_multilogit([[np.log(9)]]), [[0.9, 0.1]], atol=1e-15)


def test_gram_examples():
    np.testing.assert_array_equal(gram(np.eye(2), np.eye(2), LIN), [[2, 1], [1, 2]])
    x = np.random.default_rng(0).standard_normal((6, 3))
    np.testing.assert_allclose(np.diag(gram(x, x, KernelSpec("rbf", 0.3))), 1)
    wide = KernelSpec("rbf", 1e6 * median_heuristic(x) * 10)
    assert gram(x, x, wide).min() > 0.999
    with pytest.raises(DataError):
        gram(x, x[:, :2], LIN)


@pytest.mark.parametrize("kernel", [LIN, KernelSpec("rbf", 1.5), KernelSpec("polynomial", poly_degree=3)])
def test_gram_symmetric_psd(kernel):
    x = np.random.default_rng(1).standard_normal((12, 4))
    K = gram(x, x, kernel)
    assert np.abs(K - K.T).max() <= 1e-12
    assert np.linalg.eigvalsh(K).min() >= -1e-8 * np.trace(K)


def test_diagonal_solve():
    theta = np.random.default_rng(0).standard_normal((5, 2))
    np.testing.assert_allclose(solve_dual(np.eye(5), theta, 1.0), theta / 2)


def primal_predict(X, theta, lam, Xnew):
    Xa = np.column_stack([X, np.ones(len(X))])
    Xn = np.column_stack([Xnew, np.ones(len(Xnew))])
    Theta = np.linalg.solve(Xa.T @ Xa + lam * np.eye(Xa.shape[1]), Xa.T @ theta)
    return Xn @ Theta


@pytest.mark.parametrize("seed", range(5))
def test_dual_matches_primal(seed):
    d = random_dataset(15, 8, 3, seed)
    model = fit_kma(d, LIN, lam=0.7)
    xn = np.random.default_rng(seed).standard_normal((6, 8))
    oracle = primal_predict(d.x.values, encode_targets(d.y, 0.1).theta, 0.7, xn)
    np.testing.assert_allclose(model.decision(xn), oracle, atol=1e-6)


def test_interpolation_small_lambda():
    d = random_dataset(10, 12, 2, 3)
    model = fit_kma(d, KernelSpec("rbf", 3.0), lam=1e-10)
    theta = encode_targets(d.y, 0.1).theta
    np.testing.assert_allclose(model.decision(d.x), theta, atol=1e-4)
    np.testing.assert_array_equal(predict_kma(model, d.x)[0], d.y.labels)


def test_lambda_monotone():
    d = random_dataset(20, 5, 3, 4)
    norms = [np.linalg.norm(fit_kma(d, KernelSpec("rbf", 2.0), lam=lam).decision(d.x))
             for lam in 10.0 ** np.arange(-3, 4)]
    assert np.all(np.diff(norms) <= 1e-12)


def test_probabilities_valid():
    d = blobs(30, 20, 5, 2.0, seed=0)
    labels, probs = predict_kma(fit_kma(d), np.random.default_rng(0).standard_normal((10, 20)) * 3)
    assert np.all((probs > 0) & (probs < 1))
    np.testing.assert_allclose(probs.sum(1), 1, atol=1e-12)
    np.testing.assert_array_equal(labels, probs.argmax(1))


def test_residual_check_and_errors():
    d = random_dataset(10, 3, 2, 0)
    with pytest.raises(DataError):
        fit_kma(d, lam=0.0)
    with pytest.raises(DataError):
        fit_kma(d).decision(np.zeros((1, 4)))
    with pytest.raises(DataError):
        fit_kma(d.with_x(ExpressionMatrix(np.where(np.eye(10, 3) > 0, np.nan, d.x.values))))
