"""Multi-layer design matrices, binary responses and their plumbing.

A :class:`LayerStack` is a column-partitioned ``N x P`` matrix. Each layer is a
contiguous block of columns measured on the same individuals; the first layer
may be flagged as non-penalised (clinical covariates that always enter the
model).
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DegenerateDesignError(ValueError):
    """Raised when no usable column survives standardization."""


class FoldDegenerateError(ValueError):
    """Raised when a train/test split leaves a class empty or a fold id is invalid."""


class ParseError(ValueError):
    """Raised for malformed CSV/manifest input. The message names the cell."""


@dataclass(frozen=True)
class Layer:
    name: str
    start: int
    stop: int
    penalised: bool = True

    @property
    def size(self) -> int:
        return self.stop - self.start

    @property
    def columns(self) -> range:
        return range(self.start, self.stop)


@dataclass(frozen=True, eq=False)
class LayerStack:
    """Design matrix with ordered layer metadata.

    Parameters
    ----------
    matrix : ndarray of shape (N, P)
    layers : sequence of Layer
        Disjoint, contiguous and covering ``[0, P)``. Only the first layer may
        be non-penalised.
    row_ids, column_names : sequence of str, optional
        Generated when omitted.
    """

    matrix: np.ndarray
    layers: tuple[Layer, ...]
    row_ids: tuple[str, ...] = ()
    column_names: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.array(self.matrix, dtype=float, copy=True)
        if X.ndim != 2:
            raise ValueError("matrix must be 2-D")
        X.setflags(write=False)
        object.__setattr__(self, "matrix", X)
        n, p = X.shape
        if n < 2 or p < 1:
            raise ValueError(f"need N >= 2 and P >= 1, got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("matrix contains non-finite entries")
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        pos = 0
        for i, layer in enumerate(layers):
            if layer.start != pos or layer.stop <= layer.start:
                raise ValueError(f"layer {layer.name!r} does not continue the partition at column {pos}")
            if not layer.penalised and i > 0:
                raise ValueError("only the first layer may be non-penalised")
            pos = layer.stop
        if pos != p:
            raise ValueError(f"layers cover [0, {pos}) but matrix has {p} columns")
        if len({la.name for la in layers}) != len(layers):
            raise ValueError("layer names must be unique")
        row_ids = tuple(self.row_ids) or tuple(f"r{i}" for i in range(n))
        cols = tuple(self.column_names) or tuple(f"x{j}" for j in range(p))
        if len(row_ids) != n or len(cols) != p:
            raise ValueError("row_ids/column_names length mismatch")
        object.__setattr__(self, "row_ids", row_ids)
        object.__setattr__(self, "column_names", cols)

    @classmethod
    def from_blocks(cls, blocks: Sequence[tuple[str, np.ndarray, bool]], row_ids=(), column_names=()):
        """Build a stack from ``(name, matrix, penalised)`` blocks in order."""
        mats, layers, pos = [], [], 0
        for name, mat, penalised in blocks:
            mat = np.asarray(mat, dtype=float)
            if mat.ndim == 1:
                mat = mat[:, None]
            if mat.shape[1] == 0:
                continue
            layers.append(Layer(name, pos, pos + mat.shape[1], penalised))
            mats.append(mat)
            pos += mat.shape[1]
        return cls(np.hstack(mats), tuple(layers), row_ids, column_names)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]

    @property
    def penalised_mask(self) -> np.ndarray:
        mask = np.ones(self.n_cols, dtype=bool)
        for layer in self.layers:
            if not layer.penalised:
                mask[layer.start:layer.stop] = False
        return mask

    @property
    def unpenalised_columns(self) -> np.ndarray:
        return np.flatnonzero(~self.penalised_mask)

    @property
    def penalised_layers(self) -> list[Layer]:
        return [la for la in self.layers if la.penalised]

    @property
    def clinical(self) -> Layer | None:
        first = self.layers[0]
        return None if first.penalised else first

    def layer(self, name: str) -> Layer:
        for la in self.layers:
            if la.name == name:
                return la
        raise KeyError(name)

    def layer_of(self, column: int) -> Layer:
        for la in self.layers:
            if la.start <= column < la.stop:
                return la
        raise IndexError(column)

    def default_weights(self) -> np.ndarray:
        """Penalty weights: 1 on penalised columns, 0 on the clinical block."""
        return self.penalised_mask.astype(float)

    def take_rows(self, rows) -> "LayerStack":
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return LayerStack(self.matrix[rows], self.layers,
                          tuple(self.row_ids[i] for i in rows), self.column_names)

    def take_columns(self, columns) -> "LayerStack":
        """Restrict to ``columns`` (sorted), keeping non-empty layers only."""
        columns = np.unique(np.asarray(columns, dtype=int))
        layers, pos = [], 0
        for la in self.layers:
            k = int(np.count_nonzero((columns >= la.start) & (columns < la.stop)))
            if k:
                layers.append(Layer(la.name, pos, pos + k, la.penalised))
                pos += k
        return LayerStack(self.matrix[:, columns], tuple(layers), self.row_ids,
                          tuple(self.column_names[j] for j in columns))

    def take_layers(self, names: Sequence[str]) -> "LayerStack":
        cols = np.concatenate([np.arange(self.layer(n).start, self.layer(n).stop) for n in names])
        return self.take_columns(cols)


@dataclass(frozen=True, eq=False)
class StandardizationParams:
    """Column means and population standard deviations of the fitted data.

    ``kept`` lists the input columns that survived (non-zero variance) and
    ``dropped`` those removed.
    """

    means: np.ndarray
    scales: np.ndarray
    kept: np.ndarray
    dropped: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def apply(self, stack: LayerStack) -> LayerStack:
        if stack.n_cols != self.means.size:
            raise ValueError("column count differs from the standardized data")
        X = (stack.matrix - self.means) / np.where(self.scales > 0, self.scales, 1.0)
        out = LayerStack(X, stack.layers, stack.row_ids, stack.column_names)
        return out.take_columns(self.kept) if self.dropped.size else out


def check_response(y, n: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError("response must be 1-D")
    if n is not None and y.size != n:
        raise ValueError(f"response has {y.size} entries, design has {n} rows")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("response entries must be 0 or 1")
    return y.astype(float)


def standardize(stack: LayerStack, var_tol: float = 1e-12) -> tuple[LayerStack, StandardizationParams]:
    """Centre each column to mean 0 and scale to population variance 1.

    Zero-variance columns are dropped with a warning; the returned params
    record them so :meth:`StandardizationParams.apply` reproduces the same
    transform on new rows.
    """
    X = stack.matrix
    means = X.mean(axis=0)
    scales = X.std(axis=0)
    flat = scales <= var_tol * np.maximum(1.0, np.abs(means))
    if flat.all():
        raise DegenerateDesignError("degenerate design: every column has zero variance")
    kept, dropped = np.flatnonzero(~flat), np.flatnonzero(flat)
    if dropped.size:
        warnings.warn(f"dropping {dropped.size} zero-variance column(s): "
                      + ", ".join(stack.column_names[j] for j in dropped[:10]), stacklevel=2)
    scales = np.where(flat, 0.0, scales)
    params = StandardizationParams(means, scales, kept, dropped)
    return params.apply(stack), params


def split(stack: LayerStack, y, fold_assignment, held_out_fold: int, n_folds: int | None = None):
    """Partition rows into ``(train_stack, y_train), (test_stack, y_test)``."""
    y = check_response(y, stack.n_rows)
    folds = np.asarray(fold_assignment, dtype=int)
    if folds.shape != (stack.n_rows,):
        raise FoldDegenerateError("fold assignment length differs from row count")
    k = int(folds.max()) + 1 if n_folds is None else n_folds
    if folds.min() < 0 or folds.max() >= k:
        raise FoldDegenerateError("fold ids must lie in [0, K)")
    if not 0 <= held_out_fold < k:
        raise FoldDegenerateError(f"held-out fold {held_out_fold} outside [0, {k})")
    test = folds == held_out_fold
    y_train = y[~test]
    if y_train.size == 0 or y_train.min() == y_train.max():
        raise FoldDegenerateError(f"fold degenerate: training part of fold {held_out_fold} lacks a class")
    return (stack.take_rows(~test), y_train), (stack.take_rows(test), y[test])


def _fmt(v: float) -> str:
    return "%.17g" % v


def save_csv(stack: LayerStack, y, matrix_path, manifest_path, response: str = "y") -> None:
    """Write ``stack`` and ``y`` as a matrix CSV plus a JSON layer manifest."""
    y = check_response(y, stack.n_rows)
    with open(matrix_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *stack.column_names, response])
        for rid, row, label in zip(stack.row_ids, stack.matrix, y):
            w.writerow([rid, *map(_fmt, row), str(int(label))])
    manifest = {
        "response": response,
        "layers": [{"name": la.name, "columns": list(stack.column_names[la.start:la.stop]),
                    "penalised": la.penalised} for la in stack.layers],
    }
    Path(manifest_path).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def read_manifest(manifest_path) -> dict:
    try:
        manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if not isinstance(manifest, dict) or "layers" not in manifest:
        raise ParseError(f"{manifest_path}: manifest needs a 'layers' list")
    for i, la in enumerate(manifest["layers"]):
        if not {"name", "columns"} <= set(la):
            raise ParseError(f"{manifest_path}: layer #{i} needs 'name' and 'columns'")
    return manifest


def load_csv(matrix_path, manifest_path, require_response: bool = True,
             allow_missing_response: bool = False):
    """Read a matrix CSV and its manifest.

    Returns ``(stack, y)``; ``y`` is ``None`` when the manifest names no
    response and ``require_response`` is false. With
    ``allow_missing_response`` an empty or ``NA`` response cell becomes NaN.
    """
    manifest = read_manifest(manifest_path)
    response = manifest.get("response")
    if response is None and require_response:
        raise ParseError(f"{manifest_path}: manifest names no response column")
    with open(matrix_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{matrix_path}: empty file")
    header = rows[0]
    if not header or header[0] != "id":
        raise ParseError(f"{matrix_path}: first header cell must be 'id'")
    index = {}
    for j, name in enumerate(header):
        if name in index:
            raise ParseError(f"{matrix_path}: duplicate column {name!r}")
        index[name] = j
    order, layers, names, pos = [], [], [], 0
    for la in manifest["layers"]:
        for c in la["columns"]:
            if c not in index:
                raise ParseError(f"{matrix_path}: missing column {c!r} declared in layer {la['name']!r}")
            order.append(index[c])
            names.append(c)
        layers.append(Layer(la["name"], pos, pos + len(la["columns"]), bool(la.get("penalised", True))))
        pos += len(la["columns"])
    if response is not None and response not in index:
        raise ParseError(f"{matrix_path}: missing response column {response!r}")
    body = rows[1:]
    X = np.empty((len(body), len(order)))
    y = np.empty(len(body)) if response is not None else None
    ids, seen = [], set()
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise ParseError(f"{matrix_path}: line {i} has {len(row)} cells, header has {len(header)}")
        rid = row[0]
        if rid in seen:
            raise ParseError(f"{matrix_path}: duplicate row id {rid!r} at line {i}")
        seen.add(rid)
        ids.append(rid)
        for k, j in enumerate(order):
            try:
                X[i - 2, k] = float(row[j])
            except ValueError:
                raise ParseError(f"{matrix_path}: non-numeric cell {row[j]!r} at line {i}, column {header[j]!r}") from None
        if y is not None:
            cell = row[index[response]].strip()
            if allow_missing_response and cell in ("", "NA", "NaN", "nan"):
                y[i - 2] = np.nan
                continue
            if cell not in ("0", "1", "0.0", "1.0"):
                raise ParseError(f"{matrix_path}: response {cell!r} at line {i}, column {response!r} is not 0/1")
            y[i - 2] = float(cell)
    return LayerStack(X, tuple(layers), tuple(ids), tuple(names)), y
