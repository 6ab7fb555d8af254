"""Versioned flat-text model files.

Layout (one record per line, ``#`` lines are comments)::

    micropls-model 1
    S <name> <json scalar>
    L <name> <count>            followed by <count> lines, one json string each
    M <name> <rows> <cols>      followed by <rows> lines of <cols> decimal floats
    end

Floats are written with ``repr`` so they read back bit-for-bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import baselines, harness, kma, plsglr
from .errors import DataError
from .glm import GlmFit
from .preprocess import PreprocessConfig, Preprocessor

MAGIC = "micropls-model"
VERSION = 1


def write_blocks(path, blocks: dict) -> None:
    lines = [f"{MAGIC} {VERSION}"]
    for name, value in blocks.items():
        if " " in name:
            raise ValueError(f"block name must not contain spaces: {name!r}")
        if isinstance(value, np.ndarray):
            a = np.atleast_2d(np.asarray(value, dtype=float)) if value.ndim <= 2 else None
            if a is None:
                raise ValueError(f"block {name}: arrays must be at most 2-D")
            rows, cols = (1, value.size) if value.ndim == 1 else value.shape
            lines.append(f"M {name} {rows} {cols} {'vec' if value.ndim == 1 else 'mat'}")
            lines.extend(" ".join(repr(float(v)) for v in row) for row in a.reshape(rows, cols))
        elif isinstance(value, (list, tuple)):
            lines.append(f"L {name} {len(value)}")
            lines.extend(json.dumps(str(v)) for v in value)
        else:
            lines.append(f"S {name} {json.dumps(value)}")
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


def read_blocks(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"model file not found: {path}")
    lines = [ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")]
    if not lines or lines[0].split()[:1] != [MAGIC]:
        raise DataError(f"{path} is not a model file")
    version = int(lines[0].split()[1])
    if version != VERSION:
        raise DataError(f"unsupported model file version {version}")
    out: dict = {}
    i = 1
    try:
        while i < len(lines):
            head = lines[i].split(" ", 2)
            tag = head[0]
            if tag == "end":
                return out
            if tag == "S":
                out[head[1]] = json.loads(head[2])
                i += 1
            elif tag == "L":
                count = int(head[2])
                out[head[1]] = tuple(json.loads(ln) for ln in lines[i + 1:i + 1 + count])
                i += 1 + count
            elif tag == "M":
                _, name, rows, cols, kind = lines[i].split()
                rows, cols = int(rows), int(cols)
                data = [[float(v) for v in ln.split()] for ln in lines[i + 1:i + 1 + rows]]
                a = np.array(data, dtype=float).reshape(rows, cols)
                out[name] = a[0] if kind == "vec" else a
                i += 1 + rows
            else:
                raise DataError(f"bad record tag {tag!r} on line {i + 1}")
    except (ValueError, IndexError) as exc:
        raise DataError(f"corrupt model file {path}: {exc}") from None
    raise DataError(f"corrupt model file {path}: missing 'end'")


# --- pipelines ---------------------------------------------------------------

def _lda_blocks(prefix: str, lda: baselines.LdaModel) -> dict:
    return {f"{prefix}means": lda.means, f"{prefix}cov_inv": lda.cov_inv,
            f"{prefix}log_priors": lda.log_priors, f"{prefix}ridge": lda.ridge}


def _lda_from(prefix: str, b: dict) -> baselines.LdaModel:
    return baselines.LdaModel(np.atleast_2d(b[f"{prefix}means"]), np.atleast_2d(b[f"{prefix}cov_inv"]),
                              b[f"{prefix}log_priors"], b[f"{prefix}ridge"])


def _plsglr_blocks(m: plsglr.PlsGlrModel) -> dict:
    return {"pls.weights": m.weights, "pls.x_weights": m.x_weights, "pls.loadings": m.loadings,
            "pls.components": m.components, "pls.column_means": m.column_means, "pls.family": m.family,
            "pls.p_threshold": m.sparsify_p_threshold}


def _plsglr_from(b: dict) -> plsglr.PlsGlrModel:
    mat = lambda k: b[k].reshape(b[k].shape[0], -1) if b[k].ndim == 2 else b[k][:, None]
    return plsglr.PlsGlrModel(mat("pls.weights"), mat("pls.x_weights"), mat("pls.loadings"),
                              mat("pls.components"), b["pls.column_means"], b["pls.family"],
                              b["pls.p_threshold"])


def _classifier_blocks(method: str, clf) -> dict:
    if method == "plsglr-log":
        g = clf.glm
        return {**_plsglr_blocks(clf.model), "glm.coefficients": g.coefficients,
                "glm.standard_errors": g.standard_errors, "glm.converged": bool(g.converged)}
    if method == "plsglrda":
        return {**_plsglr_blocks(clf.model), **_lda_blocks("lda.", clf.lda)}
    if method == "knn":
        return {"knn.k": clf.cfg.k, "knn.train_x": clf.train.x.require_complete("KNN"),
                "knn.train_y": clf.train.y.labels.astype(float), "knn.class_count": clf.train.y.class_count}
    if method == "lda":
        return _lda_blocks("lda.", clf.model)
    if method == "plsda":
        m = clf.model
        return {"plsda.x_mean": m.x_mean, "plsda.weights": m.weights, "plsda.loadings": m.loadings,
                "plsda.y_loadings": m.y_loadings, "plsda.rotations": m.rotations, "plsda.scores": m.scores,
                **_lda_blocks("lda.", m.lda)}
    if method == "kma":
        m = clf.model
        return {"kma.gamma": m.gamma, "kma.train_x": m.train_x, "kma.kernel": m.kernel.kind,
                "kma.rbf_sigma": m.kernel.rbf_sigma, "kma.poly_degree": m.kernel.poly_degree,
                "kma.poly_offset": m.kernel.poly_offset, "kma.lam": m.lam, "kma.epsilon": m.epsilon,
                "kma.class_count": m.class_count}
    if method == "majority":
        return {"majority.label": int(clf.label)}
    raise DataError(f"cannot serialize method {method!r}")


def _classifier_from(method: str, b: dict):
    from .core_data import Dataset, ExpressionMatrix, LabelVector

    as2d = lambda a: a if a.ndim == 2 else a[:, None]
    if method == "plsglr-log":
        coef = b["glm.coefficients"]
        glm = GlmFit(coef, b["glm.standard_errors"], np.ones_like(coef), b["glm.converged"], "binomial", 0)
        return plsglr.PlsGlrLogHead(_plsglr_from(b), glm)
    if method == "plsglrda":
        return plsglr.PlsGlrDaHead(_plsglr_from(b), _lda_from("lda.", b))
    if method == "knn":
        train = Dataset(ExpressionMatrix(np.atleast_2d(b["knn.train_x"])),
                        LabelVector(b["knn.train_y"].astype(int), b["knn.class_count"]))
        return harness._Knn(train, b["knn.k"])
    if method == "lda":
        return harness._Lda(_lda_from("lda.", b))
    if method == "plsda":
        model = baselines.PlsDaModel(b["plsda.x_mean"], as2d(b["plsda.weights"]), as2d(b["plsda.loadings"]),
                                     as2d(b["plsda.y_loadings"]), as2d(b["plsda.rotations"]),
                                     as2d(b["plsda.scores"]), _lda_from("lda.", b))
        return harness._PlsDa(model)
    if method == "kma":
        spec = kma.KernelSpec(b["kma.kernel"], b["kma.rbf_sigma"], b["kma.poly_degree"], b["kma.poly_offset"])
        model = kma.KmaModel(as2d(b["kma.gamma"]), np.atleast_2d(b["kma.train_x"]), spec, b["kma.lam"],
                             b["kma.epsilon"], b["kma.class_count"])
        return harness._Kma(model)
    if method == "majority":
        return harness.MajorityClassifier(b["majority.label"])
    raise DataError(f"unknown method {method!r} in model file")


def save_pipeline(fitted: "harness.FittedPipeline", path) -> None:
    spec = fitted.spec
    blocks: dict = {"method": spec.method, "params": json.dumps(fitted.params, sort_keys=True),
                    "input_genes": list(fitted.input_genes), "class_names": list(fitted.class_names)}
    pre = fitted.preprocessor
    if pre is not None:
        c = pre.cfg
        blocks.update({"pre.floor": c.floor, "pre.ceil": c.ceil, "pre.fold_min": c.fold_min,
                       "pre.span_min": c.span_min, "pre.log_base": c.log_base,
                       "pre.standardize_samples": c.standardize_samples,
                       "pre.standardize_genes": c.standardize_genes,
                       "pre.kept": pre.kept.astype(float)})
        if pre.gene_means is not None:
            blocks.update({"pre.gene_means": pre.gene_means, "pre.gene_sds": pre.gene_sds})
    if fitted.selected is not None:
        blocks["selected"] = np.asarray(fitted.selected, dtype=float)
    blocks.update(_classifier_blocks(spec.method, fitted.classifier))
    write_blocks(path, blocks)


def load_pipeline(path) -> "harness.FittedPipeline":
    b = read_blocks(path)
    try:
        method = b["method"]
        pre = None
        if "pre.floor" in b:
            cfg = PreprocessConfig(b["pre.floor"], b["pre.ceil"], b["pre.fold_min"], b["pre.span_min"],
                                   b["pre.log_base"], b["pre.standardize_samples"], b["pre.standardize_genes"])
            pre = Preprocessor(cfg, np.atleast_1d(b["pre.kept"]).astype(int),
                               b.get("pre.gene_means"), b.get("pre.gene_sds"))
        selected = np.atleast_1d(b["selected"]).astype(int) if "selected" in b else None
        params = json.loads(b["params"])
        spec = harness.PipelineSpec(method, params, pre.cfg if pre else None,
                                    params.get("p_keep"))
        clf = _classifier_from(method, b)
        return harness.FittedPipeline(spec, pre, selected, params, clf, tuple(b["input_genes"]),
                                      tuple(b["class_names"]))
    except KeyError as exc:
        raise DataError(f"model file {path} lacks block {exc}") from None
