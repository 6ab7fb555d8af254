import numpy as np
import pytest

from micropls.baselines import (KnnConfig, fit_lda, fit_plsda, knn_classify, lda_predict, nipals_pls2,
                                plsda_predict)
from micropls.core_data import Dataset, ExpressionMatrix, LabelVector
from micropls.errors import DataError, NumericalError
from micropls.plsglr import GAUSSIAN, fit_components

from synth import blobs, random_dataset


def ds(x, y, C=None):
    return Dataset(ExpressionMatrix(np.asarray(x, float).reshape(len(y), -1)), LabelVector(np.array(y), C))


def test_knn_examples():
    train = ds([0.0, 10.0], [0, 1])
    assert knn_classify(train, KnnConfig(1), np.array([[1.0]]))[0] == 0
    assert knn_classify(train, KnnConfig(2), np.array([[5.0]]))[0] == 0
    three = ds([0.0, 1.0, 9.0], [1, 1, 0])
    assert knn_classify(three, KnnConfig(3), np.array([[8.9]]))[0] == 1


def test_knn_distance_tie_lower_index():
    # both neighbours at distance 1; k=1 takes training row 0
    train = ds([4.0, 6.0], [1, 0])
    assert knn_classify(train, KnnConfig(1), np.array([[5.0]]))[0] == 1


def test_knn_self_classification():
    d = random_dataset(25, 6, 3, 0)
    np.testing.assert_array_equal(knn_classify(d, KnnConfig(1), d.x), d.y.labels)


def test_knn_contract():
    d = ds([0.0, 1.0], [0, 1])
    with pytest.raises(DataError):
        knn_classify(d, KnnConfig(3), np.array([[0.0]]))
    with pytest.raises(DataError):
        knn_classify(d, KnnConfig(1), ExpressionMatrix(np.array([[np.nan]])))


def test_lda_one_dimensional():
    model = fit_lda(ds([-2.0, -1.0, 1.0, 2.0], [0, 0, 1, 1]))
    labels, scores = lda_predict(model, np.array([[0.5], [-0.5], [0.0]]))
    assert labels[0] == 1 and labels[1] == 0
    assert scores[2, 0] == pytest.approx(scores[2, 1], abs=1e-12)
    np.testing.assert_allclose(np.exp(model.log_priors).sum(), 1, atol=1e-10)


def test_lda_equal_means_prior_only():
    x = np.array([[-1.0, 0], [1, 0], [0, 1], [0, -1], [-1, 0], [1, 0], [0, 1], [0, -1], [0, 0.5], [0, -0.5]])
    model = fit_lda(ds(x, [0, 0, 0, 0, 1, 1, 1, 1, 1, 1]))
    _, scores = lda_predict(model, np.random.default_rng(0).standard_normal((5, 2)))
    means = model.means
    assert np.allclose(means[0], means[1])
    np.testing.assert_allclose(scores[:, 1] - scores[:, 0], model.log_priors[1] - model.log_priors[0], atol=1e-12)


def test_lda_singular_without_ridge():
    d = random_dataset(8, 10, 2, 0)
    with pytest.raises(NumericalError, match="ridge"):
        fit_lda(d)
    fit_lda(d, ridge=1e-3)


@pytest.mark.parametrize("seed", range(5))
def test_lda_affine_invariance(seed):
    rng = np.random.default_rng(seed)
    d = random_dataset(30, 4, 3, seed)
    test = rng.standard_normal((20, 4))
    A = rng.standard_normal((4, 4)) + 3 * np.eye(4)
    b = rng.standard_normal(4)
    base = lda_predict(fit_lda(d), test)[0]
    moved = lda_predict(fit_lda(d.with_x(ExpressionMatrix(d.x.values @ A.T + b))), test @ A.T + b)[0]
    np.testing.assert_array_equal(base, moved)


def test_plsda_separable_m1():
    d = blobs(30, 50, 10, 4.0, seed=1)
    np.testing.assert_array_equal(plsda_predict(fit_plsda(d, 1), d.x), d.y.labels)


def test_plsda_components_orthogonal():
    d = random_dataset(20, 15, 3, 2)
    T = fit_plsda(d, 4).scores
    G = T.T @ T
    s = np.sqrt(np.diag(G))
    assert np.abs(G / np.outer(s, s) - np.eye(4)).max() <= 1e-8


def test_plsda_rotations_reproduce_scores():
    d = random_dataset(20, 15, 2, 3)
    model = fit_plsda(d, 3)
    np.testing.assert_allclose(model.transform(d.x), model.scores, atol=1e-10)


def test_plsda_first_weight_is_xty():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((20, 10))
    x -= x.mean(0)
    x /= np.linalg.norm(x, axis=0)
    y = np.repeat([0, 1], 10)
    W = nipals_pls2(x, np.where(y == 1, 1.0, -1.0)[:, None] - 0.0, 1)[0]
    ref = x.T @ np.where(y == 1, 1.0, -1.0)
    assert abs(W[:, 0] @ ref) / np.linalg.norm(ref) >= 1 - 1e-12
    dummy = fit_plsda(Dataset(ExpressionMatrix(x), LabelVector(y, 2)), 1).weights[:, 0]
    glr = fit_components(ExpressionMatrix(x), np.where(y == 1, 1.0, -1.0), 1, GAUSSIAN, None).weights[:, 0]
    assert abs(dummy @ glr) >= 1 - 1e-8


@pytest.mark.parametrize("seed", range(4))
def test_plsda_full_rank_equals_lda(seed):
    d = random_dataset(16, 4, 2, seed)
    test = np.random.default_rng(seed + 100).standard_normal((30, 4))
    np.testing.assert_array_equal(plsda_predict(fit_plsda(d, 4), test), lda_predict(fit_lda(d), test)[0])
