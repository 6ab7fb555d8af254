import numpy as np
import pytest

from micropls.core_data import Dataset, ExpressionMatrix, LabelVector
from micropls.errors import DataError
from micropls.feature_select import bss_wss_ranking, select_top, top_indices

from synth import random_dataset


def ratio_oracle(x, y, C):
    """Between/within sums of squares, one gene at a time with explicit loops."""
    n, p = x.shape
    out = np.empty(p)
    for j in range(p):
        overall = sum(x[i, j] for i in range(n)) / n
        bss = wss = 0.0
        for k in range(C):
            members = [i for i in range(n) if y[i] == k]
            mean_k = sum(x[i, j] for i in members) / len(members)
            for i in members:
                bss += (mean_k - overall) ** 2
                wss += (x[i, j] - mean_k) ** 2
        out[j] = bss / wss
    return out


def dataset(cols, y):
    return Dataset(ExpressionMatrix(np.column_stack(cols).astype(float)), LabelVector(np.array(y), 2))


def test_hand_instance():
    r = bss_wss_ranking(dataset([[0, 2, 4, 6]], [0, 0, 1, 1]))
    assert r.ratios[0] == 4.0


def test_constant_and_perfect_genes():
    r = bss_wss_ranking(dataset([[0, 2, 4, 6], [5, 5, 5, 5], [1, 1, 3, 3]], [0, 0, 1, 1]))
    np.testing.assert_array_equal(r.ratios, [4.0, 0.0, np.inf])
    np.testing.assert_array_equal(r.order, [2, 0, 1])
    np.testing.assert_array_equal(top_indices(r, 2), [0, 2])


@pytest.mark.parametrize("classes", [2, 3])
@pytest.mark.parametrize("seed", range(10))
def test_matches_loop_oracle(classes, seed):
    d = random_dataset(10, 20, classes, seed)
    r = bss_wss_ranking(d)
    np.testing.assert_allclose(r.ratios, ratio_oracle(d.x.values, d.y.labels, classes), rtol=1e-12, atol=0)


def test_ties_by_index_and_order_sorted():
    r = bss_wss_ranking(dataset([[0, 2, 4, 6], [0, 2, 4, 6], [0, 1, 2, 3]], [0, 0, 1, 1]))
    np.testing.assert_array_equal(r.order, [0, 1, 2])
    assert np.all(np.diff(r.ratios[r.order]) <= 0)


def test_scale_and_permutation_invariance():
    d = random_dataset(12, 8, 2, 4)
    base = bss_wss_ranking(d).ratios
    x = d.x.values.copy()
    x[:, 3] *= 37.0
    np.testing.assert_allclose(bss_wss_ranking(d.with_x(ExpressionMatrix(x))).ratios, base, rtol=1e-12)
    perm = np.random.default_rng(0).permutation(12)
    np.testing.assert_allclose(bss_wss_ranking(d.subset(perm)).ratios, base, rtol=1e-12)


def test_select_top():
    d = random_dataset(10, 6, 2, 1)
    r = bss_wss_ranking(d)
    full = select_top(d, r, 6)
    np.testing.assert_array_equal(full.x.values, d.x.values)
    two = select_top(d, r, 2)
    np.testing.assert_array_equal(two.x.values, d.x.values[:, np.sort(r.order[:2])])
    for bad in (0, 7):
        with pytest.raises(DataError):
            select_top(d, r, bad)


def test_rejects_missing():
    d = Dataset(ExpressionMatrix(np.array([[1.0, np.nan], [2.0, 3.0]])), LabelVector(np.array([0, 1])))
    with pytest.raises(DataError):
        bss_wss_ranking(d)
