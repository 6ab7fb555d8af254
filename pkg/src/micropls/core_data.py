"""Samples x genes matrices with missing values, label vectors, and file IO.

Samples are rows everywhere. Files exported with genes as rows are transposed
at load time (``genes_as_rows=True``). Unobserved cells are stored as NaN in
``values`` and flagged ``False`` in ``mask``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ExpressionMatrix:
    """n x p real matrix with an observed-flags mask.

    Parameters
    ----------
    values : array_like, shape (n, p)
        Feature values. Entries where ``mask`` is False are ignored and stored
        as NaN.
    mask : array_like of bool, shape (n, p), optional
        True where the entry is observed. Defaults to ``isfinite(values)``.
    gene_ids, sample_ids : sequence of str, optional
        Column / row identifiers. Generated as ``g0..``, ``s0..`` if omitted.
    """

    values: np.ndarray
    mask: np.ndarray = None
    gene_ids: tuple = None
    sample_ids: tuple = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError(f"expression matrix must be 2-D, got shape {values.shape}")
        n, p = values.shape
        if n < 1 or p < 1:
            raise DataError(f"expression matrix must be non-empty, got shape {values.shape}")
        if self.mask is None:
            mask = np.isfinite(values)
        else:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != values.shape:
                raise DataError(f"mask shape {mask.shape} != values shape {values.shape}")
        if not np.all(np.isfinite(values[mask])):
            raise DataError("observed entries must be finite")
        values = np.where(mask, values, np.nan)
        gene_ids = tuple(f"g{j}" for j in range(p)) if self.gene_ids is None else tuple(map(str, self.gene_ids))
        sample_ids = tuple(f"s{i}" for i in range(n)) if self.sample_ids is None else tuple(map(str, self.sample_ids))
        if len(gene_ids) != p:
            raise DataError(f"{len(gene_ids)} gene ids for {p} columns")
        if len(sample_ids) != n:
            raise DataError(f"{len(sample_ids)} sample ids for {n} rows")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "mask", _frozen(mask))
        object.__setattr__(self, "gene_ids", gene_ids)
        object.__setattr__(self, "sample_ids", sample_ids)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def complete(self) -> bool:
        return bool(self.mask.all())

    def filled(self, fill: float = 0.0) -> np.ndarray:
        """Writable copy of the values with unobserved cells set to ``fill``."""
        return np.where(self.mask, self.values, fill)

    def require_complete(self, what: str = "this operation") -> np.ndarray:
        if not self.complete:
            raise DataError(f"{what} requires complete data; input has "
                            f"{int((~self.mask).sum())} missing entries")
        return np.array(self.values)

    def with_values(self, values: np.ndarray) -> "ExpressionMatrix":
        """Same mask and ids, new values."""
        return ExpressionMatrix(values, self.mask, self.gene_ids, self.sample_ids)

    def take_rows(self, rows) -> "ExpressionMatrix":
        rows = np.asarray(rows, dtype=int)
        return ExpressionMatrix(self.values[rows], self.mask[rows], self.gene_ids,
                                [self.sample_ids[i] for i in rows])

    def take_columns(self, cols) -> "ExpressionMatrix":
        cols = np.asarray(cols, dtype=int)
        if cols.size == 0:
            raise DataError("cannot select zero columns")
        return ExpressionMatrix(self.values[:, cols], self.mask[:, cols],
                                [self.gene_ids[j] for j in cols], self.sample_ids)


@dataclass(frozen=True, eq=False)
class LabelVector:
    """Class labels in ``0..C-1``.

    ``class_names[k]`` is the original spelling of class ``k`` in the input.
    """

    labels: np.ndarray
    class_count: int = None
    class_names: tuple = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise DataError("labels must be 1-D")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.mod(labels, 1) == 0):
                raise DataError("labels must be integers")
        labels = labels.astype(int)
        if labels.size and labels.min() < 0:
            raise DataError("labels must be non-negative")
        count = int(labels.max()) + 1 if self.class_count is None else int(self.class_count)
        if labels.size and labels.max() >= count:
            raise DataError(f"label {labels.max()} out of range for {count} classes")
        names = tuple(str(k) for k in range(count)) if self.class_names is None else tuple(map(str, self.class_names))
        if len(names) != count:
            raise DataError(f"{len(names)} class names for {count} classes")
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "class_count", count)
        object.__setattr__(self, "class_names", names)

    def __len__(self) -> int:
        return self.labels.size

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def require_all_classes(self, min_count: int = 1) -> None:
        """Raise unless every class ``0..C-1`` occurs at least ``min_count`` times."""
        if self.class_count < 2:
            raise DataError(f"need at least 2 classes, got {self.class_count}")
        counts = self.counts()
        short = [k for k in range(self.class_count) if counts[k] < min_count]
        if short:
            raise DataError(f"classes {short} have fewer than {min_count} member(s)")

    def take(self, rows) -> "LabelVector":
        return LabelVector(self.labels[np.asarray(rows, dtype=int)], self.class_count, self.class_names)


@dataclass(frozen=True, eq=False)
class Dataset:
    x: ExpressionMatrix
    y: LabelVector

    def __post_init__(self):
        if self.x.n != len(self.y):
            raise DataError(f"label/sample count mismatch: {self.x.n} samples, {len(self.y)} labels")

    @property
    def n(self) -> int:
        return self.x.n

    @property
    def p(self) -> int:
        return self.x.p

    def subset(self, rows) -> "Dataset":
        return Dataset(self.x.take_rows(rows), self.y.take(rows))

    def with_x(self, x: ExpressionMatrix) -> "Dataset":
        return Dataset(x, self.y)


@dataclass(frozen=True)
class LoadOptions:
    """How to read a matrix file.

    ``header`` / ``row_ids`` of None mean "detect": a first row containing
    any non-numeric cell is a header, and a first column containing any
    non-numeric cell holds sample ids.
    """

    delimiter: str | None = None
    na_token: str = "NA"
    genes_as_rows: bool = False
    header: bool | None = None
    row_ids: bool | None = None


def _delimiter_for(path: Path, delimiter: str | None) -> str:
    if delimiter is not None:
        return "\t" if delimiter in ("tab", "\\t") else delimiter
    return "\t" if path.suffix.lower() in (".tsv", ".tab", ".txt") else ","


def _is_missing(cell: str, na_token: str) -> bool:
    return cell == "" or cell == na_token


def _is_number(cell: str) -> bool:
    try:
        return math.isfinite(float(cell))
    except ValueError:
        return False


def _read_rows(path: Path, delimiter: str) -> list[list[str]]:
    with open(path, newline="") as fh:
        rows = [[c.strip() for c in row] for row in csv.reader(fh, delimiter=delimiter)]
    return [r for r in rows if any(c != "" for c in r)]


def read_matrix(path, options: LoadOptions = LoadOptions()) -> ExpressionMatrix:
    """Parse a delimited text matrix into an :class:`ExpressionMatrix`."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"matrix file not found: {path}")
    rows = _read_rows(path, _delimiter_for(path, options.delimiter))
    if not rows:
        raise DataError(f"matrix file is empty: {path}")
    na = options.na_token

    def non_numeric(cell):
        return not _is_missing(cell, na) and not _is_number(cell)

    header = options.header
    if header is None:
        header = any(non_numeric(c) for c in rows[0])
    col_names = rows[0] if header else None
    body = rows[1:] if header else rows
    if not body:
        raise DataError(f"matrix file has no data rows: {path}")

    widths = {len(r) for r in body}
    if len(widths) != 1:
        bad = next(i for i, r in enumerate(body) if len(r) != len(body[0]))
        raise DataError(f"ragged rows: data row {bad} has {len(body[bad])} cells, expected {len(body[0])}")
    width = widths.pop()

    row_ids = options.row_ids
    if row_ids is None:
        row_ids = any(non_numeric(r[0]) for r in body) or (col_names is not None and len(col_names) == width - 1)
    first = 1 if row_ids else 0
    if first >= width:
        raise DataError("matrix has no value columns")
    ids = [r[0] for r in body] if row_ids else None

    if col_names is not None:
        if len(col_names) == width:
            col_names = col_names[first:]
        elif len(col_names) != width - first:
            raise DataError(f"header has {len(col_names)} cells, data rows have {width}")

    values = np.empty((len(body), width - first))
    mask = np.ones(values.shape, dtype=bool)
    for i, r in enumerate(body):
        for j, cell in enumerate(r[first:]):
            if _is_missing(cell, na):
                mask[i, j] = False
                values[i, j] = np.nan
            else:
                try:
                    values[i, j] = float(cell)
                except ValueError:
                    raise DataError(f"unparseable cell {cell!r} at data row {i}, column {j + first}") from None
                if not math.isfinite(values[i, j]):
                    raise DataError(f"non-finite cell {cell!r} at data row {i}, column {j + first}")

    if options.genes_as_rows:
        return ExpressionMatrix(values.T, mask.T, gene_ids=ids, sample_ids=col_names)
    return ExpressionMatrix(values, mask, gene_ids=col_names, sample_ids=ids)


def encode_labels(raw: Sequence[str]) -> LabelVector:
    """Map raw label strings to ``0..C-1``.

    Integer spellings map in ascending numeric order (so ``0..C-1`` is the
    identity); any other spelling maps in order of first appearance.
    """
    raw = [str(r).strip() for r in raw]
    try:
        as_int = [int(r) for r in raw]
    except ValueError:
        as_int = None
    if as_int is not None:
        order = sorted(set(as_int))
        lookup = {v: k for k, v in enumerate(order)}
        return LabelVector(np.array([lookup[v] for v in as_int], dtype=int), len(order),
                           tuple(str(v) for v in order))
    order: list[str] = []
    for r in raw:
        if r not in order:
            order.append(r)
    lookup = {v: k for k, v in enumerate(order)}
    return LabelVector(np.array([lookup[v] for v in raw], dtype=int), len(order), tuple(order))


def read_labels(path, delimiter: str | None = None) -> LabelVector:
    """One label per line. With several fields on a line the last one is the label."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"labels file not found: {path}")
    raw = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            fields = [f for f in (line.split(delimiter) if delimiter else line.replace(",", " ").replace("\t", " ").split())]
            raw.append(fields[-1].strip())
    if not raw:
        raise DataError(f"labels file is empty: {path}")
    return encode_labels(raw)


def load_dataset(matrix_path, labels_path, options: LoadOptions = LoadOptions()) -> Dataset:
    """Read a matrix file and a labels file into a validated :class:`Dataset`."""
    x = read_matrix(matrix_path, options)
    y = read_labels(labels_path)
    if x.n != len(y):
        raise DataError(f"label/sample count mismatch: {x.n} samples, {len(y)} labels")
    if y.class_count < 2:
        raise DataError("a class with zero members: labels contain a single class")
    return Dataset(x, y)


def format_value(v: float) -> str:
    """Shortest decimal text that round-trips to the same float."""
    return repr(float(v))


def save_dataset(d: Dataset, matrix_path, labels_path, na_token: str = "NA", delimiter: str = ",") -> None:
    """Write ``d`` with a gene-id header and a leading sample-id column."""
    with open(matrix_path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(["sample"] + list(d.x.gene_ids))
        for i in range(d.n):
            w.writerow([d.x.sample_ids[i]] + [format_value(v) if m else na_token
                                              for v, m in zip(d.x.values[i], d.x.mask[i])])
    with open(labels_path, "w") as fh:
        for lab in d.y.labels:
            fh.write(d.y.class_names[lab] + "\n")


def column_means(x: ExpressionMatrix) -> np.ndarray:
    """Means over observed entries; raises on a fully missing column."""
    counts = x.mask.sum(axis=0)
    if np.any(counts == 0):
        bad = np.flatnonzero(counts == 0).tolist()
        raise DataError(f"fully-missing columns: {bad}")
    return x.filled(0.0).sum(axis=0) / counts


def center_columns(x: ExpressionMatrix) -> tuple[ExpressionMatrix, np.ndarray]:
    """Subtract each column's observed-entry mean.

    Returns
    -------
    centered : ExpressionMatrix
    means : ndarray, shape (p,)
        To be subtracted from new samples.
    """
    means = column_means(x)
    return x.with_values(x.values - means), means
