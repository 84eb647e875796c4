"""Instance generation and file ingestion.

Supported inputs: CSV triplets ``i,j,value[,weight]`` with 0-based indices,
MatrixMarket coordinate files (1-based), MovieLens-style ratings (``::`` or
comma separated, ids remapped to dense 0-based indices), and dense CSV
matrices.  Synthetic instances follow the noisy low-rank recipe
M = A @ B.T + E with configurable weight laws.
"""

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import WeightedProblem

WEIGHT_LAWS = ("uniform", "binary", "constant")


@dataclass
class SimulationSpec:
    """Noisy low-rank instance: dimensions, true rank, noise, weight law."""

    n: int
    p: int
    r: int
    sigma: float = 1.0
    weight_law: str = "uniform"
    weight_param: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise ValueError("dimensions must be positive")
        if not 1 <= self.r <= min(self.n, self.p):
            raise ValueError("true rank must satisfy 1 <= r <= min(n, p)")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.weight_law not in WEIGHT_LAWS:
            raise ValueError(f"unknown weight law {self.weight_law!r}")
        if self.weight_law in ("binary", "constant") and not 0 <= self.weight_param <= 1:
            raise ValueError("weight parameter must lie in [0, 1]")


def simulate(spec):
    """Draw M = A @ B.T + E with standard-normal factors and N(0, sigma^2) noise.

    Weights are drawn U(0, 1) (``uniform``), Bernoulli(prob) (``binary``),
    or set to a constant.  Fully reproducible from the seed.
    """
    rng = np.random.default_rng(spec.seed)
    A = rng.standard_normal((spec.n, spec.r))
    B = rng.standard_normal((spec.p, spec.r))
    M = A @ B.T
    if spec.sigma > 0:
        M = M + spec.sigma * rng.standard_normal((spec.n, spec.p))
    if spec.weight_law == "uniform":
        W = rng.random((spec.n, spec.p))
    elif spec.weight_law == "binary":
        W = (rng.random((spec.n, spec.p)) < spec.weight_param).astype(float)
    else:
        W = np.full((spec.n, spec.p), float(spec.weight_param))
    return WeightedProblem(M, W)


@dataclass
class TripletDataset:
    """Validated (row, col, value[, weight]) records with a declared shape."""

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    shape: tuple
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        n, p = self.shape
        if len(self.rows) != len(self.cols) or len(self.rows) != len(self.values):
            raise ValueError("triplet arrays must have equal length")
        if len(self.rows) and (
            self.rows.min() < 0 or self.rows.max() >= n
            or self.cols.min() < 0 or self.cols.max() >= p
        ):
            raise ValueError(f"index out of range for shape ({n}, {p})")
        flat = self.rows * p + self.cols
        if len(np.unique(flat)) != len(flat):
            raise ValueError("duplicate (i, j) entries")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if len(self.weights) != len(self.rows):
                raise ValueError("weight array length mismatch")
            if len(self.weights) and (self.weights.min() <= 0 or self.weights.max() > 1):
                raise ValueError("weights must lie in (0, 1]")

    def __len__(self):
        return len(self.rows)

    def to_problem(self):
        """Sparse-stored weighted problem; unit weight on observed entries
        unless an explicit weight column was provided."""
        return WeightedProblem.from_triplets(
            self.rows, self.cols, self.values, self.shape, self.weights
        )

    def save(self, path):
        """Write as CSV triplets (with the weight column when present)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["# shape", self.shape[0], self.shape[1]])
            for idx in range(len(self.rows)):
                row = [self.rows[idx], self.cols[idx], repr(float(self.values[idx]))]
                if self.weights is not None:
                    row.append(repr(float(self.weights[idx])))
                writer.writerow(row)


class ParseError(ValueError):
    """File-format error, annotated with the offending line number(s)."""


def _check_duplicates(rows, cols, shape, line_numbers):
    flat = np.asarray(rows, dtype=np.int64) * shape[1] + np.asarray(cols, dtype=np.int64)
    order = np.argsort(flat, kind="stable")
    sorted_flat = flat[order]
    dup = np.nonzero(sorted_flat[1:] == sorted_flat[:-1])[0]
    if len(dup):
        first, second = order[dup[0]], order[dup[0] + 1]
        i, j = rows[first], cols[first]
        raise ParseError(
            f"duplicate entry ({i}, {j}) at lines "
            f"{line_numbers[first]} and {line_numbers[second]}"
        )


def load_csv_triplets(path, shape=None):
    """Read ``i,j,value[,weight]`` lines (0-based).  A leading comment line
    ``# shape,n,p`` declares the dimensions when the caller does not."""
    rows, cols, values, weights, lines = [], [], [], [], []
    declared = shape
    with open(path, newline="") as fh:
        for lineno, raw in enumerate(csv.reader(fh), start=1):
            if not raw:
                continue
            if raw[0].lstrip().startswith("#"):
                if raw[0].strip().startswith("# shape") and len(raw) >= 3:
                    declared = (int(raw[1]), int(raw[2]))
                continue
            if len(raw) not in (3, 4):
                raise ParseError(f"line {lineno}: expected 3 or 4 fields, got {len(raw)}")
            try:
                i, j = int(raw[0]), int(raw[1])
                v = float(raw[2])
                w = float(raw[3]) if len(raw) == 4 else None
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            rows.append(i)
            cols.append(j)
            values.append(v)
            lines.append(lineno)
            if w is not None:
                weights.append(w)
    if weights and len(weights) != len(values):
        raise ParseError("weight column present on only some lines")
    if declared is None:
        if not rows:
            raise ParseError("empty triplet file with no declared shape")
        declared = (max(rows) + 1, max(cols) + 1)
    for idx in range(len(rows)):
        if not (0 <= rows[idx] < declared[0] and 0 <= cols[idx] < declared[1]):
            raise ParseError(
                f"line {lines[idx]}: index ({rows[idx]}, {cols[idx]}) "
                f"out of range for shape {declared}"
            )
    _check_duplicates(rows, cols, declared, lines)
    return TripletDataset(
        rows, cols, values, declared, weights if weights else None
    )


def load_matrix_market(path):
    """Read a MatrixMarket coordinate file (real/integer, general, 1-based)."""
    rows, cols, values, lines = [], [], [], []
    shape = None
    expected = None
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("%%MatrixMarket"):
            raise ParseError("line 1: missing MatrixMarket header")
        fields = header.lower().split()
        if "coordinate" not in fields:
            raise ParseError("line 1: only coordinate format is supported")
        if "complex" in fields or "pattern" in fields:
            raise ParseError("line 1: only real or integer entries are supported")
        if not ("general" in fields):
            raise ParseError("line 1: only general symmetry is supported")
        for lineno, raw in enumerate(fh, start=2):
            text = raw.strip()
            if not text or text.startswith("%"):
                continue
            parts = text.split()
            if shape is None:
                if len(parts) != 3:
                    raise ParseError(f"line {lineno}: expected 'n p nnz'")
                shape = (int(parts[0]), int(parts[1]))
                expected = int(parts[2])
                continue
            if len(parts) != 3:
                raise ParseError(f"line {lineno}: expected 'i j value'")
            try:
                i, j, v = int(parts[0]) - 1, int(parts[1]) - 1, float(parts[2])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            if not (0 <= i < shape[0] and 0 <= j < shape[1]):
                raise ParseError(f"line {lineno}: index out of range for shape {shape}")
            rows.append(i)
            cols.append(j)
            values.append(v)
            lines.append(lineno)
    if shape is None:
        raise ParseError("missing size line")
    if expected is not None and len(rows) != expected:
        raise ParseError(f"declared {expected} entries, found {len(rows)}")
    _check_duplicates(rows, cols, shape, lines)
    return TripletDataset(rows, cols, values, shape)


def load_movielens(path):
    """Read MovieLens-style ratings (``user::item::rating[::ts]`` or CSV).

    Raw ids are remapped to dense 0-based indices in order of first
    appearance.  Returns (dataset, user_ids, item_ids) so the caller can
    persist the mapping.
    """
    users, items, ratings, lines = [], [], [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split("::") if "::" in text else text.split(",")
            if lineno == 1 and not parts[0].strip().isdigit():
                continue  # header row
            if len(parts) < 3:
                raise ParseError(f"line {lineno}: expected at least user, item, rating")
            try:
                u, m, r = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            users.append(u)
            items.append(m)
            ratings.append(r)
            lines.append(lineno)
    user_ids, user_idx = np.unique(users, return_inverse=True)
    item_ids, item_idx = np.unique(items, return_inverse=True)
    shape = (len(user_ids), len(item_ids))
    _check_duplicates(user_idx, item_idx, shape, lines)
    dataset = TripletDataset(user_idx, item_idx, ratings, shape)
    return dataset, user_ids, item_ids


def save_id_mapping(path, ids):
    np.savetxt(path, np.column_stack([np.arange(len(ids)), ids]),
               fmt="%d", delimiter=",", header="index,raw_id", comments="")


def load_dense_matrix(path):
    M = np.loadtxt(path, delimiter=",", ndmin=2)
    return M


def save_dense_matrix(path, M):
    np.savetxt(path, np.asarray(M), delimiter=",")


def load_triplets(path, fmt="csv-triplet", shape=None):
    """Load a triplet dataset in any supported format."""
    if fmt == "csv-triplet":
        return load_csv_triplets(path, shape)
    if fmt == "matrix-market":
        return load_matrix_market(path)
    if fmt == "movielens":
        return load_movielens(path)[0]
    raise ValueError(f"unknown triplet format {fmt!r}")
