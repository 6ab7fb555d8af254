"""Synthetic datasets shared by the test modules."""

import numpy as np

from micropls.core_data import Dataset, ExpressionMatrix, LabelVector


def blobs(n=60, p=500, informative=20, shift=3.0, seed=0):
    """Two balanced Gaussian classes; the first ``informative`` genes differ by ``shift`` sd."""
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    x = rng.standard_normal((n, p))
    x[y == 1, :informative] += shift
    return Dataset(ExpressionMatrix(x), LabelVector(y, 2))


def raw_counts(n=40, p=300, informative=15, seed=0):
    """Positive microarray-like intensities, a log-normal body with up-shifted informative genes."""
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    logx = rng.normal(2.8, 0.45, (n, p))
    logx[y == 1, :informative] += 0.9
    return Dataset(ExpressionMatrix(10 ** logx), LabelVector(y, 2))


def random_dataset(n, p, classes=2, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % classes
    rng.shuffle(y)
    return Dataset(ExpressionMatrix(rng.standard_normal((n, p))), LabelVector(y, classes))
