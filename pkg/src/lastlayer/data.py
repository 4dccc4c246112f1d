"""Dataset construction: synthetic regression generator, CSV ingestion,
splitting and standardization.

Datasets are immutable pairs of float64 matrices (inputs N x d_in, targets
N x d_out) plus provenance text recording how they were made.  The
synthetic generator draws a random two-layer tanh teacher and is fully
determined by its seed.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import jsonio
from .linalg import Matrix
from .rng import Rng, derive

DATASET_FORMAT_VERSION = 1

SYNTHETIC_INPUT_DIM = 10
SYNTHETIC_HIDDEN_DIM = 5


class CsvFormatError(ValueError):
    """CSV structure problem; carries 1-based line (and column) position."""

    def __init__(self, message: str, line: int, column: Optional[int] = None):
        self.line = line
        self.column = column
        where = f"line {line}" if column is None else f"line {line}, column {column}"
        super().__init__(f"{message} ({where})")


@dataclass
class Dataset:
    x: Matrix
    y: Matrix
    feature_names: Optional[list] = None
    target_names: Optional[list] = None
    provenance: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.ndim != 2 or self.y.ndim != 2:
            raise ValueError("dataset matrices must be 2-D")
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError(
                f"inputs have {self.x.shape[0]} rows but targets have {self.y.shape[0]}"
            )
        if self.x.shape[0] < 1:
            raise ValueError("dataset must contain at least one sample")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset contains non-finite values")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def input_dim(self) -> int:
        return self.x.shape[1]

    @property
    def output_dim(self) -> int:
        return self.y.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.x[idx].copy(),
            self.y[idx].copy(),
            feature_names=self.feature_names,
            target_names=self.target_names,
            provenance=self.provenance,
        )


@dataclass
class Split:
    train: Dataset
    test: Dataset
    fraction: float
    seed: int


def gen_synthetic(n: int = 10000, seed: int = 0) -> Dataset:
    """Teacher-generated regression data.

    Inputs are uniform on [0,1]^10; targets come from a fixed random
    two-layer teacher, tanh(X @ W1) @ W2, with W1 uniform on [-1,1]^(10x5)
    and W2 uniform on [-1,1]^(5x1) drawn once per call.  Every |y| is at
    most 5 by construction.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = Rng(seed)
    x = rng.uniform_matrix(n, SYNTHETIC_INPUT_DIM)
    w1 = rng.uniform_matrix(SYNTHETIC_INPUT_DIM, SYNTHETIC_HIDDEN_DIM, -1.0, 1.0)
    w2 = rng.uniform_matrix(SYNTHETIC_HIDDEN_DIM, 1, -1.0, 1.0)
    y = np.tanh(x @ w1) @ w2
    teacher = {
        "w1": [[float(v) for v in row] for row in w1],
        "w2": [[float(v) for v in row] for row in w2],
    }
    provenance = (
        f"synthetic tanh teacher: n={n} seed={seed} "
        f"x~U[0,1]^{SYNTHETIC_INPUT_DIM} teacher={jsonio.dumps(teacher)}"
    )
    return Dataset(x, y, provenance=provenance)


def _parse_cell(cell: str, line: int, column: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise CsvFormatError(f"non-numeric cell {cell!r}", line, column) from None
    if not math.isfinite(value):
        raise CsvFormatError(f"non-finite cell {cell!r}", line, column)
    return value


def _resolve_columns(requested, header, width: int, what: str) -> list:
    resolved = []
    for item in requested:
        if isinstance(item, int):
            if not 0 <= item < width:
                raise ValueError(f"{what} column index {item} out of range [0, {width})")
            resolved.append(item)
        else:
            if header is None:
                raise ValueError(
                    f"{what} column {item!r} requested by name but the file has no header"
                )
            if item not in header:
                raise ValueError(f"{what} column {item!r} not found in header {header}")
            resolved.append(header.index(item))
    return resolved


def load_csv(path: str, feature_columns, target_columns, has_header: bool = True) -> Dataset:
    """Load a numeric comma-separated file into a Dataset.

    Columns may be selected by name (requires a header) or 0-based index.
    Ragged rows and non-numeric cells are reported with their 1-based line
    number.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise CsvFormatError("empty file", 1)

    header = None
    data_rows = rows
    first_line = 1
    if has_header:
        header = [cell.strip() for cell in rows[0]]
        data_rows = rows[1:]
        first_line = 2
    if not data_rows:
        raise CsvFormatError("no data rows", first_line)

    width = len(data_rows[0])
    f_idx = _resolve_columns(feature_columns, header, width, "feature")
    t_idx = _resolve_columns(target_columns, header, width, "target")

    x = np.empty((len(data_rows), len(f_idx)), dtype=np.float64)
    y = np.empty((len(data_rows), len(t_idx)), dtype=np.float64)
    for r, row in enumerate(data_rows):
        line = first_line + r
        if len(row) != width:
            raise CsvFormatError(
                f"expected {width} columns, found {len(row)}", line
            )
        for c, col in enumerate(f_idx):
            x[r, c] = _parse_cell(row[col], line, col + 1)
        for c, col in enumerate(t_idx):
            y[r, c] = _parse_cell(row[col], line, col + 1)

    feature_names = [header[i] for i in f_idx] if header else None
    target_names = [header[i] for i in t_idx] if header else None
    return Dataset(
        x,
        y,
        feature_names=feature_names,
        target_names=target_names,
        provenance=f"csv: path={path} features={feature_columns} targets={target_columns}",
    )


def save_csv(ds: Dataset, path: str) -> None:
    """Write the dataset as headered CSV with exact-round-trip numbers."""
    feature_names = ds.feature_names or [f"x{i}" for i in range(ds.input_dim)]
    target_names = ds.target_names or [f"y{i}" for i in range(ds.output_dim)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(list(feature_names) + list(target_names)) + "\n")
        for r in range(ds.n):
            cells = [jsonio.format_float(v) for v in ds.x[r]]
            cells += [jsonio.format_float(v) for v in ds.y[r]]
            fh.write(",".join(cells) + "\n")


def split(ds: Dataset, fraction: float, seed: int) -> Split:
    """Seeded permutation, then prefix/suffix partition.

    Train gets floor(fraction * N) samples; the index sets are disjoint and
    cover the source exactly.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    n_train = int(math.floor(fraction * ds.n))
    if n_train < 1 or ds.n - n_train < 1:
        raise ValueError(
            f"degenerate split: {n_train} train / {ds.n - n_train} test from {ds.n} samples"
        )
    perm = Rng(derive(seed, "split")).permutation(ds.n)
    return Split(
        train=ds.subset(perm[:n_train]),
        test=ds.subset(perm[n_train:]),
        fraction=fraction,
        seed=seed,
    )


@dataclass
class StandardizeParams:
    mean: np.ndarray
    std: np.ndarray  # 1.0 for passthrough (constant) columns


def standardize(ds: Dataset) -> tuple:
    """Scale feature columns to zero mean, unit variance.

    Returns the transformed dataset and the per-column statistics so a test
    set can be transformed with the training statistics.  Constant columns
    pass through unchanged with a warning.
    """
    mean = np.mean(ds.x, axis=0)
    std = np.std(ds.x, axis=0)
    constant = std == 0.0
    if np.any(constant):
        cols = np.flatnonzero(constant).tolist()
        warnings.warn(f"constant feature columns {cols} left unscaled")
        mean = mean.copy()
        std = std.copy()
        mean[constant] = 0.0
        std[constant] = 1.0
    params = StandardizeParams(mean=mean, std=std)
    return apply_standardization(ds, params), params


def apply_standardization(ds: Dataset, params: StandardizeParams) -> Dataset:
    x = (ds.x - params.mean[None, :]) / params.std[None, :]
    return Dataset(
        x,
        ds.y.copy(),
        feature_names=ds.feature_names,
        target_names=ds.target_names,
        provenance=ds.provenance + " | standardized",
    )


def dataset_to_dict(ds: Dataset) -> dict:
    return {
        "format_version": DATASET_FORMAT_VERSION,
        "provenance": ds.provenance,
        "feature_names": ds.feature_names,
        "target_names": ds.target_names,
        "x": [[float(v) for v in row] for row in ds.x],
        "y": [[float(v) for v in row] for row in ds.y],
    }


def dataset_from_dict(doc: dict) -> Dataset:
    version = doc.get("format_version")
    if version != DATASET_FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format_version {version!r}")
    return Dataset(
        np.array(doc["x"], dtype=np.float64),
        np.array(doc["y"], dtype=np.float64),
        feature_names=doc.get("feature_names"),
        target_names=doc.get("target_names"),
        provenance=doc.get("provenance", ""),
    )


def save_dataset(ds: Dataset, path: str) -> None:
    jsonio.dump(dataset_to_dict(ds), path)


def load_dataset(path: str) -> Dataset:
    return dataset_from_dict(jsonio.load(path))
