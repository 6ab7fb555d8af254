import numpy as np
import pytest

from micropls import harness
from micropls.core_data import Dataset, ExpressionMatrix, LabelVector
from micropls.errors import DataError
from micropls.harness import (PipelineSpec, cross_validate, error_rate, fit_pipeline, format_rate, grid_points,
                              grid_search, reports_csv, stratified_kfold)
from micropls.preprocess import PreprocessConfig

from synth import blobs, raw_counts


def labels(*counts):
    return LabelVector(np.repeat(np.arange(len(counts)), counts))


def test_folds_exact_division():
    f = stratified_kfold(labels(5, 5), 5, seed=3)
    y = labels(5, 5).labels
    for k in range(5):
        assert sorted(y[f.test_rows(k)].tolist()) == [0, 1]


def test_folds_deterministic_and_balanced():
    y = labels(17, 23, 9)
    a, b = stratified_kfold(y, 4, 11), stratified_kfold(y, 4, 11)
    np.testing.assert_array_equal(a.folds, b.folds)
    for c in range(3):
        per = np.bincount(a.folds[y.labels == c], minlength=4)
        assert per.max() - per.min() <= 1
    assert np.bincount(a.folds).min() > 0
    assert not np.array_equal(a.folds, stratified_kfold(y, 4, 12).folds)


def test_folds_too_many():
    with pytest.raises(DataError):
        stratified_kfold(labels(5, 6), 6)


def test_error_rate_and_format():
    assert error_rate([0, 1], [0, 1]) == 0.0
    assert error_rate([1, 0], [0, 1]) == 100.0
    assert format_rate(1, 60) == "1.7"
    assert format_rate(1, 8) == "12.5"
    assert format_rate(1, 16) == "6.3"
    assert format_rate(0, 62) == "0.0"
    with pytest.raises(DataError):
        error_rate([0], [0, 1])


def test_majority_balanced_is_fifty():
    d = blobs(40, 10, 2, 1.0, seed=0)
    rep = cross_validate(d, PipelineSpec("majority"), stratified_kfold(d.y, 10, 0))
    assert rep.error_rate_text == "50.0" and rep.error_rate == 50.0


def test_knn_separable_zero():
    d = blobs(40, 10, 10, 8.0, seed=1)
    rep = cross_validate(d, PipelineSpec("knn", {"k": 1}), stratified_kfold(d.y, 10, 0))
    assert rep.misclassified == 0


def test_report_invariants():
    d = blobs(30, 40, 5, 1.0, seed=2)
    rep = cross_validate(d, PipelineSpec("lda", {"ridge": 0.1}), stratified_kfold(d.y, 5, 0))
    assert sum(rep.fold_sizes) == d.n and sum(rep.fold_errors) == rep.misclassified
    assert rep.confusion.sum() == d.n and rep.misclassified == rep.confusion.sum() - np.trace(rep.confusion)
    assert np.all(rep.predictions >= 0)


def test_grid_order_simplest_first():
    pts = grid_points({"lam": [0.1, 10.0], "p_keep": [50, 10]})
    assert pts[0] == {"p_keep": 10, "lam": 10.0}
    assert pts[-1] == {"p_keep": 50, "lam": 0.1}


def test_grid_single_point():
    d = blobs(20, 10, 3, 2.0, seed=0)
    best, table = grid_search(d, PipelineSpec("knn", grid={"k": [3]}))
    assert best == {"k": 3} and len(table) == 1


def test_grid_selects_zero_error_point():
    d = blobs(40, 30, 10, 4.0, seed=3)
    best, table = grid_search(d, PipelineSpec("plsda", grid={"m": [1, 2, 3]}), seed=0)
    assert best == {"m": 1} and dict((p["m"], e) for p, e in table)[1] == 0


def test_grid_tie_prefers_simpler():
    d = blobs(40, 30, 10, 6.0, seed=4)
    best, table = grid_search(d, PipelineSpec("knn", grid={"k": [7, 5, 3, 1]}))
    assert all(e == 0 for _, e in table) and best == {"k": 1}


def test_leakage_training_data_only():
    d = raw_counts(30, 120, 10, seed=1)
    spec = PipelineSpec("knn", {"k": 3}, PreprocessConfig(), p_keep=20)
    folds = stratified_kfold(d.y, 5, 0)
    seen = {}
    cross_validate(d, spec, folds, fit_hook=lambda f, tr: seen.__setitem__(f, tr))
    for f, tr in seen.items():
        test_ids = {d.x.sample_ids[i] for i in folds.test_rows(f)}
        assert not test_ids & set(tr.x.sample_ids)
        np.testing.assert_array_equal(tr.x.values, d.x.values[folds.train_rows(f)])


def _capture(monkeypatch):
    fitted = []
    original = harness.fit_pipeline

    def spy(d, spec, seed=0, features=None):
        out = original(d, spec, seed, features)
        fitted.append(out)
        return out

    monkeypatch.setattr(harness, "fit_pipeline", spy)
    return fitted


def test_poisoned_test_rows_do_not_change_fit(monkeypatch):
    d = raw_counts(30, 150, 10, seed=2)
    spec = PipelineSpec("plsda", {}, PreprocessConfig(), None, True, {"m": [1, 2], "p_keep": [10, 30]}, 3)
    folds = stratified_kfold(d.y, 5, 0)
    clean = _capture(monkeypatch)
    cross_validate(d, spec, folds)
    v = d.x.values.copy()
    te = folds.test_rows(0)
    v[te] = v[te][:, ::-1] * 7.0 + 5000.0
    poisoned = _capture(monkeypatch)
    cross_validate(d.with_x(ExpressionMatrix(v, gene_ids=d.x.gene_ids, sample_ids=d.x.sample_ids)), spec, folds)
    a, b = clean[0], poisoned[0]
    assert a.params == b.params
    np.testing.assert_array_equal(a.selected, b.selected)
    np.testing.assert_array_equal(a.preprocessor.kept, b.preprocessor.kept)
    np.testing.assert_array_equal(a.classifier.model.rotations, b.classifier.model.rotations)


def test_global_selection_sees_all_rows(monkeypatch):
    d = raw_counts(30, 150, 10, seed=2)
    spec = PipelineSpec("knn", {"k": 3}, PreprocessConfig(), 10, in_fold_selection=False)
    rep = cross_validate(d, spec, stratified_kfold(d.y, 5, 0))
    assert rep.selection == "global"


def test_deterministic_reports_and_jobs():
    d = blobs(30, 60, 8, 2.0, seed=5)
    spec = PipelineSpec("kma", grid={"lam": [0.1, 1.0, 10.0], "p_keep": [10, 20]})
    folds = stratified_kfold(d.y, 5, 9)
    r1 = reports_csv([cross_validate(d, spec, folds)])
    r2 = reports_csv([cross_validate(d, spec, folds, n_jobs=3)])
    assert r1 == r2 and r1.startswith("# micropls cv-report v1\n")


def test_fold_errors_carry_index():
    d = blobs(20, 5, 2, 1.0, seed=0)
    with pytest.raises(DataError, match="fold 0"):
        cross_validate(d, PipelineSpec("knn", {"k": 50}), stratified_kfold(d.y, 2, 0))


def test_fit_pipeline_rejects_gene_mismatch():
    d = blobs(20, 12, 3, 3.0, seed=0)
    fitted = fit_pipeline(d, PipelineSpec("lda", {"ridge": 0.1}, p_keep=4))
    assert fitted.predict(d.x).shape == (20,)
    with pytest.raises(DataError, match="gene count mismatch"):
        fitted.predict(ExpressionMatrix(d.x.values[:, :5]))


def test_permuted_labels_near_majority():
    d = blobs(60, 100, 10, 3.0, seed=6)
    y = d.y.labels.copy()
    np.random.default_rng(0).shuffle(y)
    shuffled = Dataset(d.x, LabelVector(y, 2))
    rep = cross_validate(shuffled, PipelineSpec("plsglr-log", {"m": 1}, p_keep=20), stratified_kfold(shuffled.y, 10, 0))
    assert abs(rep.error_rate - 50.0) <= 15.0
