"""Microarray preprocessing (threshold, filter, log, standardize) and diagnostics.

The default thresholds are the usual Dudoit et al. recommendations: clip
intensities into [100, 16000], keep genes with max/min > 5 and
max - min > 500, take log10, then standardize each array (sample) to zero
mean and unit variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_data import ExpressionMatrix
from .errors import DataError


@dataclass(frozen=True)
class PreprocessConfig:
    floor: float = 100.0
    ceil: float = 16000.0
    fold_min: float = 5.0
    span_min: float = 500.0
    log_base: float = 10.0
    standardize_samples: bool = True
    standardize_genes: bool = False

    def __post_init__(self):
        if not 0 < self.floor < self.ceil:
            raise DataError(f"need 0 < floor < ceil, got floor={self.floor}, ceil={self.ceil}")
        if self.fold_min <= 0 or self.span_min <= 0:
            raise DataError("fold_min and span_min must be positive")
        if self.log_base <= 1:
            raise DataError(f"log_base must exceed 1, got {self.log_base}")


def threshold_clip(x: ExpressionMatrix, cfg: PreprocessConfig) -> ExpressionMatrix:
    return x.with_values(np.clip(x.values, cfg.floor, cfg.ceil))


def _observed_extrema(x: ExpressionMatrix) -> tuple[np.ndarray, np.ndarray]:
    counts = x.mask.sum(axis=0)
    if np.any(counts == 0):
        raise DataError(f"fully-missing columns: {np.flatnonzero(counts == 0).tolist()}")
    lo = np.where(x.mask, x.values, np.inf).min(axis=0)
    hi = np.where(x.mask, x.values, -np.inf).max(axis=0)
    return lo, hi


def filter_mask(x: ExpressionMatrix, cfg: PreprocessConfig) -> np.ndarray:
    """Boolean keep-flag per gene (strict inequalities on both rules)."""
    lo, hi = _observed_extrema(x)
    if np.any(lo <= 0):
        raise DataError("filter_genes needs positive values; apply threshold_clip first")
    return (hi / lo > cfg.fold_min) & (hi - lo > cfg.span_min)


def filter_genes(x: ExpressionMatrix, cfg: PreprocessConfig) -> tuple[ExpressionMatrix, np.ndarray]:
    """Drop genes whose dynamic range is too small.

    Returns the reduced matrix and the indices of the kept columns.
    """
    kept = np.flatnonzero(filter_mask(x, cfg))
    if kept.size == 0:
        raise DataError("empty filter result: no gene passes the fold/span rules")
    return x.take_columns(kept), kept


def log_transform(x: ExpressionMatrix, cfg: PreprocessConfig) -> ExpressionMatrix:
    bad = np.argwhere(x.mask & ~(x.values > 0))
    if bad.size:
        i, j = bad[0]
        raise DataError(f"nonpositive value {x.values[i, j]!r} at sample {x.sample_ids[i]}, gene {x.gene_ids[j]}")
    with np.errstate(invalid="ignore"):
        return x.with_values(np.log(x.values) / np.log(cfg.log_base))


def _standardize_rows(values: np.ndarray, mask: np.ndarray, what: str, ids) -> np.ndarray:
    counts = mask.sum(axis=1)
    filled = np.where(mask, values, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = filled.sum(axis=1) / counts
        dev = np.where(mask, values - mean[:, None], 0.0)
        sd = np.sqrt((dev ** 2).sum(axis=1) / counts)
    bad = np.flatnonzero((counts < 2) | ~(sd > 0))
    if bad.size:
        raise DataError(f"zero-variance {what} {ids[bad[0]]}: cannot standardize")
    return (values - mean[:, None]) / sd[:, None]


def standardize_samples(x: ExpressionMatrix) -> ExpressionMatrix:
    """Each row to mean 0, population sd 1 over its observed entries."""
    return x.with_values(_standardize_rows(x.values, x.mask, "sample", x.sample_ids))


def standardize_genes(x: ExpressionMatrix) -> ExpressionMatrix:
    """Each column to mean 0, population sd 1 over its observed entries."""
    return x.with_values(_standardize_rows(x.values.T, x.mask.T, "gene", x.gene_ids).T)


@dataclass(frozen=True)
class Preprocessor:
    """Preprocessing with the filter decision learned on one matrix.

    Fit on a training fold, then apply the frozen kept-gene set (and, for
    per-gene standardization, the training means and sds) to held-out rows.
    """

    cfg: PreprocessConfig
    kept: np.ndarray
    gene_means: np.ndarray | None = None
    gene_sds: np.ndarray | None = None

    @classmethod
    def fit(cls, x: ExpressionMatrix, cfg: PreprocessConfig) -> "Preprocessor":
        clipped = threshold_clip(x, cfg)
        _, kept = filter_genes(clipped, cfg)
        if not cfg.standardize_genes:
            return cls(cfg, kept)
        z = _partial(clipped.take_columns(kept), cfg)
        counts = z.mask.sum(axis=0)
        means = z.filled(0.0).sum(axis=0) / counts
        sds = np.sqrt(np.where(z.mask, (z.values - means) ** 2, 0.0).sum(axis=0) / counts)
        if np.any(~(sds > 0)):
            raise DataError("zero-variance gene after preprocessing: cannot standardize")
        return cls(cfg, kept, means, sds)

    def transform(self, x: ExpressionMatrix) -> ExpressionMatrix:
        z = _partial(threshold_clip(x, self.cfg).take_columns(self.kept), self.cfg)
        if self.gene_means is not None:
            z = z.with_values((z.values - self.gene_means) / self.gene_sds)
        return z


def _partial(x: ExpressionMatrix, cfg: PreprocessConfig) -> ExpressionMatrix:
    z = log_transform(x, cfg)
    if cfg.standardize_samples:
        z = standardize_samples(z)
    return z


def preprocess(x: ExpressionMatrix, cfg: PreprocessConfig = PreprocessConfig()) -> tuple[ExpressionMatrix, np.ndarray]:
    """Full pipeline on one matrix. Returns the processed matrix and kept gene indices."""
    pre = Preprocessor.fit(x, cfg)
    return pre.transform(x), pre.kept


# --- diagnostics ---------------------------------------------------------

BOX_FIELDS = ("median", "q1", "q3", "iqr", "whisker_low", "whisker_high")


@dataclass(frozen=True)
class BoxStats:
    """Per-sample box-plot statistics.

    Quartiles use linear interpolation between order statistics; whiskers
    extend to the most extreme observation within 1.5 IQR of the box.
    """

    sample_ids: tuple
    median: np.ndarray
    q1: np.ndarray
    q3: np.ndarray
    iqr: np.ndarray
    whisker_low: np.ndarray
    whisker_high: np.ndarray

    def rows(self):
        for i, sid in enumerate(self.sample_ids):
            yield sid, tuple(float(getattr(self, f)[i]) for f in BOX_FIELDS)


@dataclass(frozen=True)
class RleSummary:
    residuals: ExpressionMatrix
    box: BoxStats


def _box(values: np.ndarray, mask: np.ndarray, sample_ids) -> BoxStats:
    n = values.shape[0]
    out = {f: np.empty(n) for f in BOX_FIELDS}
    for i in range(n):
        v = values[i, mask[i]]
        if v.size == 0:
            raise DataError(f"sample {sample_ids[i]} has no observed entries")
        q1, med, q3 = np.percentile(v, [25, 50, 75])
        iqr = q3 - q1
        lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
        out["median"][i], out["q1"][i], out["q3"][i], out["iqr"][i] = med, q1, q3, iqr
        out["whisker_low"][i] = v[v >= lo_fence].min()
        out["whisker_high"][i] = v[v <= hi_fence].max()
    return BoxStats(tuple(sample_ids), **out)


def box_stats(x: ExpressionMatrix) -> BoxStats:
    return _box(x.values, x.mask, x.sample_ids)


def rle_stats(x: ExpressionMatrix) -> RleSummary:
    """Relative log expression: subtract each gene's median, box-summarize per sample."""
    counts = x.mask.sum(axis=0)
    if np.any(counts == 0):
        raise DataError(f"fully-missing columns: {np.flatnonzero(counts == 0).tolist()}")
    med = np.nanmedian(x.values, axis=0)
    resid = x.with_values(x.values - med)
    return RleSummary(resid, _box(resid.values, resid.mask, x.sample_ids))


def rle_quality(summary: RleSummary, width_max: float = 0.2, center_tol: float = 0.1) -> np.ndarray:
    """Per-sample pass flags: box centred near zero and IQR no wider than ``width_max``.

    Both bounds are inclusive; a 1e-12 slack absorbs rounding in the quartiles.
    """
    box = summary.box
    return (np.abs(box.median) <= center_tol + 1e-12) & (box.iqr <= width_max + 1e-12)


@dataclass(frozen=True)
class PcaResult:
    scores: np.ndarray
    explained: np.ndarray
    components: np.ndarray
    means: np.ndarray


def pca_scores(x: ExpressionMatrix, k: int) -> PcaResult:
    """Top-``k`` principal component scores of the column-centred matrix.

    Each direction is signed so that its largest-magnitude loading is positive.
    """
    values = x.require_complete("PCA")
    if not 0 <= k <= min(x.n, x.p):
        raise DataError(f"k={k} out of range [0, {min(x.n, x.p)}]")
    means = values.mean(axis=0)
    xc = values - means
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    total = float((s ** 2).sum())
    vt = vt[:k]
    flip = np.sign(vt[np.arange(k), np.abs(vt).argmax(axis=1)]) if k else np.ones(0)
    vt = vt * flip[:, None]
    explained = (s[:k] ** 2) / total if total > 0 else np.zeros(k)
    return PcaResult(xc @ vt.T, explained, vt, means)
