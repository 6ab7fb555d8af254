"""Command-line entry point.

Subcommands: preprocess, rle, pca, boxstats, select, cv, train, predict.
Every run writes its artifacts plus ``provenance.json`` into the output
directory (``--out``, else ``$MICROPLS_OUT``, else the current directory).

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
Errors are reported on stderr as one line::

    micropls: error code=3 kind=data message="..."
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, harness
from .core_data import (Dataset, ExpressionMatrix, LoadOptions, _delimiter_for, format_value, load_dataset,
                        read_matrix)
from .errors import DataError, NumericalError
from .feature_select import bss_wss_ranking, select_top, top_indices
from .preprocess import (PreprocessConfig, box_stats, log_transform, pca_scores, preprocess,
                         rle_quality, rle_stats)
from .serialize import load_pipeline, save_pipeline
from .svg import boxplot_svg, scatter_svg

OUT_ENV = "MICROPLS_OUT"
EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises instead of printing usage, so every failure is one stderr line."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- argument parsing -----------------------------------------------------------

def _csv_ints(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_data(p, labels_required=True):
    g = p.add_argument_group("input")
    g.add_argument("--data", required=True, help="matrix file (CSV/TSV)")
    g.add_argument("--labels", required=labels_required, default=None, help="labels file, one per line")
    g.add_argument("--genes-as-rows", action="store_true", default=False,
                   help="matrix file has genes as rows (transposed on load)")
    g.add_argument("--delimiter", default=None, help="field delimiter (default: from extension)")
    g.add_argument("--na-token", default="NA")


def _add_common(p):
    p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or .)")
    p.add_argument("--config", default=None, help="key=value config file (flags take precedence)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true", default=False)


def _add_preprocess(p, switch=False):
    g = p.add_argument_group("preprocessing")
    if switch:
        g.add_argument("--preprocessed", action="store_true", default=False,
                       help="apply threshold/filter/log/standardize first")
    g.add_argument("--floor", type=float, default=100.0)
    g.add_argument("--ceil", type=float, default=16000.0)
    g.add_argument("--fold-min", type=float, default=5.0)
    g.add_argument("--span-min", type=float, default=500.0)
    g.add_argument("--log-base", type=float, default=10.0)
    g.add_argument("--standardize", choices=("samples", "genes", "none"), default="samples")


def _add_model(p):
    g = p.add_argument_group("classifier")
    g.add_argument("--selection", choices=("in-fold", "global"), default="in-fold")
    g.add_argument("--p-keep", type=int, default=None, help="fixed number of top BSS/WSS genes")
    g.add_argument("--p-keep-grid", type=_csv_ints, default=None,
                   help="candidate gene counts (default 50,100,200,500 with --preprocessed)")
    g.add_argument("--no-tune", action="store_true", default=False, help="skip the inner-CV grid search")
    g.add_argument("--inner-k", type=int, default=5)
    g.add_argument("--m", type=int, default=None, help="PLS components")
    g.add_argument("--knn-k", type=int, default=None)
    g.add_argument("--lam", type=float, default=None, help="KMA ridge parameter")
    g.add_argument("--kernel", choices=("rbf", "linear-plus-one", "polynomial"), default=None)
    g.add_argument("--sigma-scale", type=float, default=None, help="RBF width as a multiple of the median distance")
    g.add_argument("--epsilon", type=float, default=None, help="KMA label smoothing")
    g.add_argument("--ridge", type=float, default=None, help="LDA ridge")
    g.add_argument("--p-threshold", type=float, default=None, help="PLSGLR sparsification p-value (<=0: off)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="micropls", description=__doc__.splitlines()[0], allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"micropls {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="threshold, filter, log-transform, standardize", allow_abbrev=False)
    _add_data(p, labels_required=False)
    _add_common(p)
    _add_preprocess(p)

    for name, helptext in (("rle", "relative log expression statistics"),
                           ("boxstats", "per-sample box-plot statistics"),
                           ("pca", "principal component scores")):
        p = sub.add_parser(name, help=helptext, allow_abbrev=False)
        _add_data(p, labels_required=False)
        _add_common(p)
        _add_preprocess(p, switch=True)
        p.add_argument("--log", action="store_true", default=False,
                       help="log-transform (base --log-base) before the statistics")
        if name == "rle":
            p.add_argument("--width-max", type=float, default=0.2)
            p.add_argument("--center-tol", type=float, default=0.1)
        if name == "pca":
            p.add_argument("--k", type=int, default=2)

    p = sub.add_parser("select", help="rank genes by BSS/WSS and keep the top ones", allow_abbrev=False)
    _add_data(p)
    _add_common(p)
    _add_preprocess(p, switch=True)
    p.add_argument("--p-keep", type=int, required=True)

    p = sub.add_parser("cv", help="stratified k-fold cross-validation report", allow_abbrev=False)
    _add_data(p)
    _add_common(p)
    _add_preprocess(p, switch=True)
    _add_model(p)
    p.add_argument("--method", action="append", default=None,
                   choices=list(harness.METHODS) + ["majority", "all"])
    p.add_argument("--k", type=int, default=10, help="number of folds")
    p.add_argument("--repeats", type=int, default=1, help="extension: repeat CV with seeds seed..seed+R-1")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--name", default=None, help="dataset name in reports")

    p = sub.add_parser("train", help="fit a pipeline on all samples and save it", allow_abbrev=False)
    _add_data(p)
    _add_common(p)
    _add_preprocess(p, switch=True)
    _add_model(p)
    p.add_argument("--method", required=True, choices=list(harness.METHODS) + ["majority"])

    p = sub.add_parser("predict", help="apply a saved pipeline", allow_abbrev=False)
    _add_data(p, labels_required=False)
    _add_common(p)
    p.add_argument("--model", required=True)
    return parser


def read_config(path) -> dict:
    """Flat ``section.key = value`` lines; ``#`` starts a comment. Section prefixes are optional."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    out = {}
    for num, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {num}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.rsplit(".", 1)[-1].replace("-", "_")] = value
    return out


def _config_path(argv) -> str | None:
    pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    pre.add_argument("--config", default=None)
    return pre.parse_known_args(argv)[0].config


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    path = _config_path(argv)
    if path:
        values = read_config(path)
        command = next((a for a in argv if a in parser._subparsers._group_actions[0].choices), None)
        if command is None:
            raise UsageError("a subcommand is required")
        sub = parser._subparsers._group_actions[0].choices[command]
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, raw in values.items():
            if key not in actions or key in ("config", "help"):
                raise UsageError(f"unknown config key {key!r} for '{command}'")
            act = actions[key]
            if act.nargs == 0:
                defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            elif isinstance(act, argparse._AppendAction):
                defaults[key] = [v.strip() for v in raw.split(",")]
            else:
                try:
                    defaults[key] = act.type(raw) if act.type else raw
                except (ValueError, argparse.ArgumentTypeError):
                    raise UsageError(f"config {key}={raw!r}: bad value") from None
            if act.choices:
                vals = defaults[key] if isinstance(defaults[key], list) else [defaults[key]]
                if any(v not in act.choices for v in vals):
                    raise UsageError(f"config {key}={raw!r} not in {list(act.choices)}")
            act.required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# --- helpers -----------------------------------------------------------------

def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _options(args) -> LoadOptions:
    return LoadOptions(delimiter=args.delimiter, na_token=args.na_token, genes_as_rows=args.genes_as_rows)


def _pre_cfg(args) -> PreprocessConfig:
    return PreprocessConfig(args.floor, args.ceil, args.fold_min, args.span_min, args.log_base,
                            standardize_samples=args.standardize == "samples",
                            standardize_genes=args.standardize == "genes")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_matrix(x: ExpressionMatrix, path, na_token: str = "NA") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample"] + list(x.gene_ids))
        for i in range(x.n):
            w.writerow([x.sample_ids[i]] + [format_value(v) if m else na_token
                                            for v, m in zip(x.values[i], x.mask[i])])


def _write_csv(path, header_comment: str, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# micropls {header_comment} v1\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


def _fmt(v) -> str:
    return format_value(v) if isinstance(v, (float, np.floating)) else str(v)


def _load(args, need_labels=True):
    if args.labels:
        return load_dataset(args.data, args.labels, _options(args))
    if need_labels:
        raise DataError("--labels is required")
    return read_matrix(args.data, _options(args))


def _matrix_for_diagnostics(args) -> tuple[ExpressionMatrix, Dataset | None]:
    loaded = _load(args, need_labels=False)
    d = loaded if isinstance(loaded, Dataset) else None
    x = d.x if d is not None else loaded
    if args.preprocessed:
        x, _ = preprocess(x, _pre_cfg(args))
    elif getattr(args, "log", False):
        x = log_transform(x, _pre_cfg(args))
    return x, d


def _provenance(out: Path, args, argv: list[str], outputs: list[str]) -> None:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "config", "verbose")}
    if "delimiter" in config and config["delimiter"] is None:
        config["delimiter"] = _delimiter_for(Path(args.data), None)
    inputs = {}
    for key in ("data", "labels", "model", "config"):
        path = getattr(args, key, None)
        if path:
            inputs[key] = {"path": str(path), "sha256": _sha256(path)}
    record = {"tool": "micropls", "version": __version__, "command": args.command,
              "seed": args.seed, "config": config, "inputs": inputs, "outputs": sorted(outputs),
              "argv": list(argv)}
    (out / "provenance.json").write_text(json.dumps(record, indent=2, sort_keys=True, default=str) + "\n")


# --- subcommands ---------------------------------------------------------------

def cmd_preprocess(args, out: Path) -> list[str]:
    x = _load(args, need_labels=False)
    x = x.x if isinstance(x, Dataset) else x
    z, kept = preprocess(x, _pre_cfg(args))
    write_matrix(z, out / "preprocessed_matrix.csv")
    _write_csv(out / "kept_genes.csv", "kept-genes", ["index", "gene_id"],
               [(int(j), x.gene_ids[j]) for j in kept])
    logging.info("kept %d of %d genes", kept.size, x.p)
    return ["preprocessed_matrix.csv", "kept_genes.csv"]


def _box_rows(box, extra=None):
    for i, (sid, vals) in enumerate(box.rows()):
        row = [sid] + [_fmt(v) for v in vals]
        if extra is not None:
            row.append("pass" if extra[i] else "fail")
        yield row


def cmd_rle(args, out: Path) -> list[str]:
    x, _ = _matrix_for_diagnostics(args)
    summary = rle_stats(x)
    ok = rle_quality(summary, args.width_max, args.center_tol)
    _write_csv(out / "rle_stats.csv", "rle-stats", ["sample", "median", "q1", "q3", "iqr",
                                                  "whisker_low", "whisker_high", "quality"],
               _box_rows(summary.box, ok))
    (out / "rle.svg").write_text(boxplot_svg(summary.box, "Relative log expression", reference=0.0))
    return ["rle_stats.csv", "rle.svg"]


def cmd_boxstats(args, out: Path) -> list[str]:
    x, _ = _matrix_for_diagnostics(args)
    box = box_stats(x)
    _write_csv(out / "box_stats.csv", "box-stats", ["sample", "median", "q1", "q3", "iqr",
                                                  "whisker_low", "whisker_high"], _box_rows(box))
    (out / "boxplot.svg").write_text(boxplot_svg(box, "Expression by sample"))
    return ["box_stats.csv", "boxplot.svg"]


def cmd_pca(args, out: Path) -> list[str]:
    x, d = _matrix_for_diagnostics(args)
    res = pca_scores(x, args.k)
    with open(out / "pca_scores.csv", "w", newline="") as fh:
        fh.write("# micropls pca-scores v1\n")
        fh.write("# explained_variance=" + ",".join(_fmt(v) for v in res.explained) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample"] + [f"PC{h + 1}" for h in range(args.k)])
        for i in range(x.n):
            w.writerow([x.sample_ids[i]] + [_fmt(v) for v in res.scores[i]])
    outputs = ["pca_scores.csv"]
    if args.k >= 2:
        labels = d.y.labels if d is not None else np.zeros(x.n, dtype=int)
        names = d.y.class_names if d is not None else ()
        (out / "pca.svg").write_text(scatter_svg(res.scores[:, :2], labels, "PCA scores (PC1 vs PC2)", names))
        outputs.append("pca.svg")
    return outputs


def cmd_select(args, out: Path) -> list[str]:
    d = _load(args)
    if args.preprocessed:
        d = d.with_x(preprocess(d.x, _pre_cfg(args))[0])
    ranking = bss_wss_ranking(d)
    ranks = ranking.rank_of()
    _write_csv(out / "ranking.csv", "gene-ranking", ["gene_id", "ratio", "rank"],
               ([d.x.gene_ids[j], _fmt(ranking.ratios[j]), int(ranks[j])] for j in ranking.order))
    reduced = select_top(d, ranking, args.p_keep)
    write_matrix(reduced.x, out / "selected_matrix.csv")
    _write_csv(out / "selected_genes.csv", "selected-genes", ["index", "gene_id"],
               [(int(j), d.x.gene_ids[j]) for j in top_indices(ranking, args.p_keep)])
    return ["ranking.csv", "selected_matrix.csv", "selected_genes.csv"]


def _explicit_params(args) -> dict:
    mapping = {"m": "m", "knn_k": "k", "lam": "lam", "kernel": "kernel", "sigma_scale": "sigma_scale",
               "epsilon": "epsilon", "ridge": "ridge", "p_threshold": "p_threshold"}
    params = {}
    for flag, name in mapping.items():
        v = getattr(args, flag)
        if v is not None:
            params[name] = v
    if "p_threshold" in params and params["p_threshold"] <= 0:
        params["p_threshold"] = None
    return params


def spec_from_args(args, method: str) -> harness.PipelineSpec:
    params = {k: v for k, v in _explicit_params(args).items() if k in harness.DEFAULT_PARAMS[method]}
    pre = _pre_cfg(args) if args.preprocessed else None
    tune = not args.no_tune
    grid = {k: v for k, v in harness.DEFAULT_GRIDS[method].items() if k not in params} if tune else {}
    p_keep = args.p_keep
    if tune and p_keep is None:
        keep_grid = args.p_keep_grid or (harness.DEFAULT_P_KEEP_GRID if args.preprocessed else None)
        if keep_grid:
            grid["p_keep"] = list(keep_grid)
    elif p_keep is None and args.p_keep_grid:
        p_keep = args.p_keep_grid[0]
    return harness.PipelineSpec(method, params, pre, p_keep, args.selection == "in-fold", grid, args.inner_k)


def _methods(args) -> list[str]:
    chosen = args.method or ["all"]
    if "all" in chosen:
        return list(harness.METHODS)
    return [m for m in dict.fromkeys(chosen)]


def cmd_cv(args, out: Path) -> list[str]:
    d = _load(args)
    name = args.name or Path(args.data).stem
    methods = _methods(args)
    all_reports = []
    tables = []
    for r in range(args.repeats):
        seed = args.seed + r
        folds = harness.stratified_kfold(d.y, args.k, seed)
        reports = []
        for m in methods:
            logging.info("cv %s (seed %d)", m, seed)
            reports.append(harness.cross_validate(d, spec_from_args(args, m), folds, n_jobs=args.jobs))
        all_reports.extend(reports)
        title = f"Classification error rate (%), {args.k}-fold CV, seed {seed}"
        tables.append(harness.reports_table(reports, name, title))
    (out / "cv_report.csv").write_text(harness.reports_csv(all_reports, name))
    (out / "cv_folds.csv").write_text(harness.folds_csv(all_reports))
    text = "\n".join(tables)
    if args.repeats > 1:
        text += _repeat_summary(all_reports, methods, args.repeats)
    (out / "cv_table.txt").write_text(text)
    sys.stdout.write(text)
    return ["cv_report.csv", "cv_folds.csv", "cv_table.txt"]


def _repeat_summary(reports, methods, repeats) -> str:
    lines = [f"\nEXTENSION: mean error rate over {repeats} repeated CV splits (not a single-split result)"]
    for m in methods:
        rates = [r.error_rate for r in reports if r.method == m]
        lines.append(f"  {harness.TABLE_NAMES.get(m, m):<12} {sum(rates) / len(rates):.1f}")
    return "\n".join(lines) + "\n"


def cmd_train(args, out: Path) -> list[str]:
    d = _load(args)
    fitted = harness.fit_pipeline(d, spec_from_args(args, args.method), seed=args.seed)
    save_pipeline(fitted, out / "model.txt")
    return ["model.txt"]


def cmd_predict(args, out: Path) -> list[str]:
    fitted = load_pipeline(args.model)
    loaded = _load(args, need_labels=False)
    x = loaded.x if isinstance(loaded, Dataset) else loaded
    pred = fitted.predict(x)
    names = fitted.class_names or tuple(str(k) for k in range(int(pred.max()) + 1))
    _write_csv(out / "predictions.csv", "predictions", ["sample", "predicted"],
               [(x.sample_ids[i], names[p]) for i, p in enumerate(pred)])
    outputs = ["predictions.csv"]
    if isinstance(loaded, Dataset):
        truth = [loaded.y.class_names[k] for k in loaded.y.labels]
        wrong = sum(names[p] != t for p, t in zip(pred, truth))
        (out / "prediction_error.txt").write_text(
            f"error_rate={harness.format_rate(wrong, len(truth))} misclassified={wrong} n={len(truth)}\n")
        outputs.append("prediction_error.txt")
    return outputs


COMMANDS = {"preprocess": cmd_preprocess, "rle": cmd_rle, "boxstats": cmd_boxstats, "pca": cmd_pca,
            "select": cmd_select, "cv": cmd_cv, "train": cmd_train, "predict": cmd_predict}


def _fail(code: int, kind: str, message: str) -> int:
    message = " ".join(str(message).split())
    sys.stderr.write(f"micropls: error code={code} kind={kind} message={json.dumps(message)}\n")
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except DataError as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        out = _out_dir(args)
        outputs = COMMANDS[args.command](args, out)
        _provenance(out, args, argv, outputs)
    except (DataError, FileNotFoundError, OSError) as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, "numerical", str(exc))
    return 0


def console() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console()
