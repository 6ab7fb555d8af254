"""Stratified k-fold cross-validation of preprocess -> select -> classify pipelines.

Every fold fits the whole pipeline on its training rows only: the preprocessing
filter, the gene ranking, the hyperparameter search (inner CV) and the
classifier never see the held-out rows. ``in_fold_selection=False`` instead
fixes preprocessing and ranking once on all samples, which reproduces the
optimistic run-once protocol.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Any, Callable

import numpy as np

from . import baselines, kma, plsglr
from .core_data import Dataset, ExpressionMatrix, LabelVector
from .errors import DataError, NumericalError
from .feature_select import GeneRanking, bss_wss_ranking, top_indices
from .preprocess import PreprocessConfig, Preprocessor

log = logging.getLogger(__name__)

# report column order, mirroring the published comparison tables
METHODS = ("plsglr-log", "plsglrda", "knn", "lda", "plsda", "kma")
TABLE_NAMES = {"plsglr-log": "PLSGLR-log", "plsglrda": "PLSGLRDA", "knn": "KNN", "lda": "LDA",
               "plsda": "PLSDA", "kma": "KMA", "majority": "Majority"}

DEFAULT_GRIDS: dict[str, dict[str, list]] = {
    "plsglr-log": {"m": [1, 2, 3, 4, 5]},
    "plsglrda": {"m": [1, 2, 3, 4, 5]},
    "knn": {"k": [1, 3, 5, 7]},
    "lda": {},
    "plsda": {"m": [1, 2, 3, 4, 5]},
    "kma": {"lam": [1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3]},
    "majority": {},
}
DEFAULT_P_KEEP_GRID = [50, 100, 200, 500]

DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "plsglr-log": {"m": 2, "p_threshold": plsglr.DEFAULT_P_THRESHOLD, "stop": True},
    "plsglrda": {"m": 2, "p_threshold": plsglr.DEFAULT_P_THRESHOLD, "stop": True, "ridge": 0.0},
    "knn": {"k": 3},
    "lda": {"ridge": None},
    "plsda": {"m": 2},
    "kma": {"lam": 1.0, "kernel": kma.RBF, "sigma_scale": 1.0, "epsilon": 0.1,
            "poly_degree": 2, "poly_offset": 1.0},
    "majority": {},
}
# auto ridge for LDA when the covariance cannot be full rank
LDA_AUTO_RIDGE = 1e-3


# --- folds and error rates ---------------------------------------------------

@dataclass(frozen=True)
class FoldAssignment:
    folds: np.ndarray
    seed: int
    k: int

    def test_rows(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.folds == f)

    def train_rows(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.folds != f)


def stratified_kfold(y: LabelVector, k: int = 10, seed: int = 0, relaxed: bool = False) -> FoldAssignment:
    """Assign samples to ``k`` folds, spreading each class evenly.

    Within each class the members are shuffled (seeded) and dealt round-robin;
    the dealing position carries over between classes so fold sizes stay
    balanced too. Unless ``relaxed``, every class needs at least ``k`` members.
    """
    if k < 2:
        raise DataError(f"k must be >= 2, got {k}")
    labels = y.labels
    counts = np.bincount(labels, minlength=y.class_count)
    present = counts[counts > 0]
    if not relaxed and present.min() < k:
        raise DataError(f"k={k} too large for the smallest class ({int(present.min())} members)")
    if labels.size < k:
        raise DataError(f"k={k} exceeds the number of samples ({labels.size})")
    rng = np.random.default_rng(seed)
    folds = np.empty(labels.size, dtype=int)
    offset = 0
    for c in range(y.class_count):
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(members.size)]
        folds[members] = (offset + np.arange(members.size)) % k
        offset += members.size
    if np.any(np.bincount(folds, minlength=k) == 0):
        raise DataError("empty fold")
    return FoldAssignment(folds, int(seed), int(k))


def error_rate(predicted, truth) -> float:
    predicted, truth = np.asarray(predicted), np.asarray(truth)
    if predicted.shape != truth.shape:
        raise DataError(f"length mismatch: {predicted.shape} vs {truth.shape}")
    if truth.size == 0:
        raise DataError("empty prediction set")
    return 100.0 * float(np.sum(predicted != truth)) / truth.size


def format_rate(misclassified: int, total: int) -> str:
    """Percentage with one decimal, halves rounded away from zero (exact arithmetic)."""
    value = Decimal(100 * int(misclassified)) / Decimal(int(total))
    return str(value.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


# --- classifiers --------------------------------------------------------------

class MajorityClassifier:
    def __init__(self, label: int):
        self.label = label

    def predict(self, x) -> np.ndarray:
        n = x.n if isinstance(x, ExpressionMatrix) else np.atleast_2d(x).shape[0]
        return np.full(n, self.label, dtype=int)


class _Knn:
    def __init__(self, train: Dataset, k: int):
        self.train = train
        self.cfg = baselines.KnnConfig(int(k))

    def predict(self, x) -> np.ndarray:
        return baselines.knn_classify(self.train, self.cfg, x)


class _Lda:
    def __init__(self, model):
        self.model = model

    def predict(self, x) -> np.ndarray:
        return baselines.lda_predict(self.model, x)[0]


class _PlsDa:
    def __init__(self, model):
        self.model = model

    def predict(self, x) -> np.ndarray:
        return baselines.plsda_predict(self.model, x)


class _Kma:
    def __init__(self, model):
        self.model = model

    def predict(self, x) -> np.ndarray:
        return kma.predict_kma(self.model, x)[0]


def _lda_ridge(params, d: Dataset) -> float:
    ridge = params.get("ridge")
    if ridge is None:
        return LDA_AUTO_RIDGE if d.p >= d.n - d.y.class_count else 0.0
    return float(ridge)


def _fit_one(method: str, d: Dataset, params: dict, cache: dict | None = None):
    if method in ("plsglr-log", "plsglrda"):
        m = int(params["m"])
        key = ("plsglr", params.get("p_threshold"), bool(params.get("stop", True)))
        model = None
        if cache is not None and key in cache and cache[key].m >= m:
            model = cache[key]
        if model is None:
            model = plsglr.extract_components(d, m, plsglr.BINOMIAL, params.get("p_threshold"),
                                              bool(params.get("stop", True)))
            if cache is not None:
                cache[key] = model
        if method == "plsglr-log":
            return plsglr.fit_plsglr_log(d, m, model=model)
        return plsglr.fit_plsglrda(d, m, ridge=float(params.get("ridge", 0.0)), model=model)
    if method == "knn":
        return _Knn(d, params["k"])
    if method == "lda":
        return _Lda(baselines.fit_lda(d, _lda_ridge(params, d)))
    if method == "plsda":
        return _PlsDa(baselines.fit_plsda(d, int(params["m"])))
    if method == "kma":
        X = d.x.require_complete("KMA")
        kind = params.get("kernel", kma.RBF)
        sigma = params.get("sigma")
        if kind == kma.RBF and sigma is None:
            sigma = float(params.get("sigma_scale", 1.0)) * kma.median_heuristic(X)
        spec = kma.KernelSpec(kind, rbf_sigma=float(sigma) if sigma is not None else 1.0,
                              poly_degree=int(params.get("poly_degree", 2)),
                              poly_offset=float(params.get("poly_offset", 1.0)))
        return _Kma(kma.fit_kma(d, spec, float(params["lam"]), float(params.get("epsilon", 0.1))))
    if method == "majority":
        counts = d.y.counts()
        return MajorityClassifier(int(counts.argmax()))
    raise DataError(f"unknown method {method!r}")


def fit_classifiers(method: str, d: Dataset, param_list: list[dict]) -> list:
    """Fit one classifier per parameter set, sharing component extraction.

    PLSGLR components are extracted once at the largest requested ``m``
    and truncated for smaller ones.
    """
    cache: dict = {}
    if method in ("plsglr-log", "plsglrda"):
        m_max = max(int(p["m"]) for p in param_list)
        key = ("plsglr", param_list[0].get("p_threshold"), bool(param_list[0].get("stop", True)))
        if all(("plsglr", p.get("p_threshold"), bool(p.get("stop", True))) == key for p in param_list):
            cache[key] = plsglr.extract_components(d, m_max, plsglr.BINOMIAL, key[1], key[2])
    return [_fit_one(method, d, p, cache) for p in param_list]


# --- pipelines ---------------------------------------------------------------

@dataclass(frozen=True)
class PipelineSpec:
    """Preprocess -> select -> classify, with optional hyperparameter grids.

    ``grid`` maps parameter names (classifier parameters and ``p_keep``) to
    candidate values; when non-empty, each outer training fold picks its
    setting by an inner stratified CV with ``inner_k`` folds.
    """

    method: str
    params: dict = field(default_factory=dict)
    preprocess: PreprocessConfig | None = None
    p_keep: int | None = None
    in_fold_selection: bool = True
    grid: dict = field(default_factory=dict)
    inner_k: int = 5

    def __post_init__(self):
        if self.method not in DEFAULT_PARAMS:
            raise DataError(f"unknown method {self.method!r}; expected one of {sorted(DEFAULT_PARAMS)}")
        if self.p_keep is not None and self.p_keep < 1:
            raise DataError(f"p_keep must be >= 1, got {self.p_keep}")

    def resolved_params(self) -> dict:
        return {**DEFAULT_PARAMS[self.method], **self.params}


@dataclass(frozen=True)
class FeatureState:
    """Preprocessing and gene ranking learned on some set of rows."""

    preprocessor: Preprocessor | None
    ranking: GeneRanking | None

    @classmethod
    def fit(cls, d: Dataset, spec: PipelineSpec, need_ranking: bool) -> "FeatureState":
        pre = Preprocessor.fit(d.x, spec.preprocess) if spec.preprocess is not None else None
        ranking = None
        if need_ranking:
            xp = pre.transform(d.x) if pre is not None else d.x
            ranking = bss_wss_ranking(d.with_x(xp))
        return cls(pre, ranking)

    def transform(self, x: ExpressionMatrix, p_keep: int | None) -> tuple[ExpressionMatrix, np.ndarray | None]:
        if self.preprocessor is not None:
            x = self.preprocessor.transform(x)
        if p_keep is None or self.ranking is None:
            return x, None
        idx = top_indices(self.ranking, min(int(p_keep), x.p))
        return x.take_columns(idx), idx


@dataclass
class FittedPipeline:
    """A pipeline fitted on one set of rows; ``selected`` indexes the preprocessed genes."""

    spec: PipelineSpec
    preprocessor: Preprocessor | None
    selected: np.ndarray | None
    params: dict
    classifier: Any
    input_genes: tuple
    class_names: tuple = ()

    def transform(self, x: ExpressionMatrix) -> ExpressionMatrix:
        if x.p != len(self.input_genes):
            raise DataError(f"gene count mismatch: model expects {len(self.input_genes)}, input has {x.p}")
        if self.preprocessor is not None:
            x = self.preprocessor.transform(x)
        return x if self.selected is None else x.take_columns(self.selected)

    def predict(self, x: ExpressionMatrix) -> np.ndarray:
        return self.classifier.predict(self.transform(x))


def _needs_ranking(spec: PipelineSpec) -> bool:
    return spec.p_keep is not None or "p_keep" in spec.grid


_DESCENDING = {"lam", "ridge", "sigma_scale", "sigma"}
_PRIORITY = ("p_keep", "m", "k", "lam", "sigma_scale", "sigma", "ridge", "epsilon")


def grid_points(grid: dict) -> list[dict]:
    """All combinations, ordered simplest first (small p_keep, m, k; large lam, ridge)."""
    names = sorted(grid, key=lambda n: (_PRIORITY.index(n) if n in _PRIORITY else len(_PRIORITY), n))
    combos = [dict(zip(names, vals)) for vals in itertools.product(*(grid[n] for n in names))]

    def key(pt):
        out = []
        for n in names:
            v = pt[n]
            out.append(-v if n in _DESCENDING and isinstance(v, (int, float)) else v)
        return tuple(out)

    return sorted(combos, key=key)


def _evaluate_points(train: Dataset, test_x: ExpressionMatrix, spec: PipelineSpec, points: list[dict],
                     features: FeatureState) -> list[np.ndarray]:
    """Predictions on ``test_x`` for each grid point, all fitted on ``train``."""
    base = spec.resolved_params()
    preds: list[np.ndarray | None] = [None] * len(points)
    by_keep: dict = {}
    for i, pt in enumerate(points):
        by_keep.setdefault(pt.get("p_keep", spec.p_keep), []).append(i)
    for p_keep, idxs in by_keep.items():
        x_tr, _ = features.transform(train.x, p_keep)
        x_te, _ = features.transform(test_x, p_keep)
        d_tr = train.with_x(x_tr)
        param_list = [{**base, **{k: v for k, v in points[i].items() if k != "p_keep"}} for i in idxs]
        for i, clf in zip(idxs, fit_classifiers(spec.method, d_tr, param_list)):
            preds[i] = clf.predict(x_te)
    return preds


def grid_search(d: Dataset, spec: PipelineSpec, grid: dict | None = None, inner_k: int | None = None,
                seed: int = 0, features: FeatureState | None = None) -> tuple[dict, list[tuple[dict, int]]]:
    """Pick hyperparameters on ``d`` by stratified CV.

    Returns the chosen point and a table of ``(point, misclassified)`` in
    simplicity order; ties go to the earliest (simplest) point.
    ``features``, when given, is a frozen preprocessing/ranking state used for
    every inner fold (global selection mode); otherwise each inner training
    fold learns its own.
    """
    grid = spec.grid if grid is None else grid
    inner_k = spec.inner_k if inner_k is None else inner_k
    points = grid_points(grid)
    if not points:
        raise DataError("empty grid")
    if len(points) == 1:
        return points[0], [(points[0], 0)]
    folds = stratified_kfold(d.y, inner_k, seed, relaxed=True)
    errors = np.zeros(len(points), dtype=int)
    need_rank = _needs_ranking(spec)
    for f in range(inner_k):
        tr, te = folds.train_rows(f), folds.test_rows(f)
        d_tr = d.subset(tr)
        feats = features if features is not None else FeatureState.fit(d_tr, spec, need_rank)
        preds = _evaluate_points(d_tr, d.x.take_rows(te), spec, points, feats)
        truth = d.y.labels[te]
        errors += np.array([int(np.sum(p != truth)) for p in preds])
    best = int(np.argmin(errors))
    return points[best], list(zip(points, errors.tolist()))


def fit_pipeline(d: Dataset, spec: PipelineSpec, seed: int = 0, features: FeatureState | None = None) -> FittedPipeline:
    """Fit preprocessing, selection, (inner-CV tuned) hyperparameters and classifier on ``d``."""
    if features is None:
        features = FeatureState.fit(d, spec, _needs_ranking(spec))
    params = spec.resolved_params()
    p_keep = spec.p_keep
    if spec.grid:
        best, _ = grid_search(d, spec, seed=seed, features=None if spec.in_fold_selection else features)
        p_keep = best.get("p_keep", p_keep)
        params.update({k: v for k, v in best.items() if k != "p_keep"})
    x_sel, idx = features.transform(d.x, p_keep)
    clf = fit_classifiers(spec.method, d.with_x(x_sel), [params])[0]
    chosen = {k: params[k] for k in sorted(params)}
    if p_keep is not None:
        chosen["p_keep"] = x_sel.p
    return FittedPipeline(spec, features.preprocessor, idx, chosen, clf, d.x.gene_ids, d.y.class_names)


# --- cross-validation ----------------------------------------------------------

@dataclass
class EvalReport:
    method: str
    misclassified: int
    n: int
    fold_errors: list
    fold_sizes: list
    chosen_params: list
    seed: int
    k: int
    confusion: np.ndarray
    predictions: np.ndarray
    selection: str = "in-fold"

    @property
    def error_rate(self) -> float:
        return 100.0 * self.misclassified / self.n

    @property
    def error_rate_text(self) -> str:
        return format_rate(self.misclassified, self.n)


def _fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(fold)]).generate_state(1)[0])


def cross_validate(d: Dataset, spec: PipelineSpec, folds: FoldAssignment, n_jobs: int = 1,
                   fit_hook: Callable[[int, Dataset], None] | None = None) -> EvalReport:
    """Outer CV of the full pipeline.

    ``fit_hook(fold, train_dataset)`` is called with exactly the data each
    fold's fit receives (useful for auditing).
    """
    if folds.folds.size != d.n:
        raise DataError(f"fold assignment covers {folds.folds.size} samples, dataset has {d.n}")
    global_features = None
    if not spec.in_fold_selection:
        global_features = FeatureState.fit(d, spec, _needs_ranking(spec))

    def run(f: int):
        tr, te = folds.train_rows(f), folds.test_rows(f)
        d_tr = d.subset(tr)
        if fit_hook is not None:
            fit_hook(f, d_tr)
        try:
            fitted = fit_pipeline(d_tr, spec, seed=_fold_seed(folds.seed, f), features=global_features)
            return te, fitted.predict(d.x.take_rows(te)), fitted.params
        except (DataError, NumericalError) as exc:
            cls = DataError if isinstance(exc, DataError) else NumericalError
            raise cls(f"fold {f}: {exc}") from exc

    fold_ids = range(folds.k)
    if n_jobs == 1:
        results = [run(f) for f in fold_ids]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, fold_ids))

    predictions = np.full(d.n, -1, dtype=int)
    fold_errors, fold_sizes, chosen = [], [], []
    for te, pred, params in results:
        predictions[te] = pred
        fold_errors.append(int(np.sum(pred != d.y.labels[te])))
        fold_sizes.append(int(te.size))
        chosen.append(params)
    C = d.y.class_count
    confusion = np.zeros((C, C), dtype=int)
    np.add.at(confusion, (d.y.labels, predictions), 1)
    return EvalReport(spec.method, int(sum(fold_errors)), d.n, fold_errors, fold_sizes, chosen,
                      folds.seed, folds.k, confusion, predictions,
                      "in-fold" if spec.in_fold_selection else "global")


def compare_methods(d: Dataset, specs: list[PipelineSpec], k: int = 10, seed: int = 0,
                    n_jobs: int = 1) -> list[EvalReport]:
    """Cross-validate several pipelines on the same seeded folds."""
    folds = stratified_kfold(d.y, k, seed)
    return [cross_validate(d, s, folds, n_jobs) for s in specs]


def default_spec(method: str, preprocess: PreprocessConfig | None = None, tune: bool = True,
                 p_keep_grid: list[int] | None = None, p_keep: int | None = None,
                 in_fold_selection: bool = True, params: dict | None = None, inner_k: int = 5) -> PipelineSpec:
    """Spec with the stock hyperparameter grid for ``method``."""
    grid = dict(DEFAULT_GRIDS[method]) if tune else {}
    if p_keep_grid and tune:
        grid["p_keep"] = list(p_keep_grid)
    return PipelineSpec(method, dict(params or {}), preprocess, p_keep, in_fold_selection, grid, inner_k)


# --- report output -------------------------------------------------------------

REPORT_HEADER = "# micropls cv-report v1"
FOLDS_HEADER = "# micropls cv-folds v1"


def _fmt_params(params: dict) -> str:
    return ";".join(f"{k}={params[k]}" for k in sorted(params))


def reports_csv(reports: list[EvalReport], dataset_name: str = "data") -> str:
    buf = io.StringIO()
    buf.write(REPORT_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset", "method", "error_rate", "misclassified", "n", "k", "seed", "selection", "confusion"])
    for r in reports:
        conf = " ".join("/".join(str(v) for v in row) for row in r.confusion)
        w.writerow([dataset_name, r.method, r.error_rate_text, r.misclassified, r.n, r.k, r.seed, r.selection, conf])
    return buf.getvalue()


def folds_csv(reports: list[EvalReport]) -> str:
    buf = io.StringIO()
    buf.write(FOLDS_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "fold", "n_test", "misclassified", "params"])
    for r in reports:
        for f, (e, s, p) in enumerate(zip(r.fold_errors, r.fold_sizes, r.chosen_params)):
            w.writerow([r.method, f, s, e, _fmt_params(p)])
    return buf.getvalue()


def reports_table(reports: list[EvalReport], dataset_name: str = "data", title: str | None = None) -> str:
    """Aligned text table, one column per method in the standard order."""
    by_method = {r.method: r for r in reports}
    order = [m for m in METHODS if m in by_method] + [m for m in by_method if m not in METHODS]
    head = ["DATA"] + [TABLE_NAMES.get(m, m) for m in order]
    row = [dataset_name] + [by_method[m].error_rate_text for m in order]
    widths = [max(len(a), len(b)) for a, b in zip(head, row)]
    line = "-" * (sum(widths) + 2 * (len(widths) - 1))
    fmt = lambda cells: "  ".join(c.ljust(wd) if i == 0 else c.rjust(wd) for i, (c, wd) in enumerate(zip(cells, widths)))
    out = [title] if title else []
    out += [line, fmt(head), line, fmt(row), line]
    return "\n".join(out) + "\n"
