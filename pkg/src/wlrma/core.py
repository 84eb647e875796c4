"""Domain types and matrix kernels shared by all solvers.

The optimization instance is a target matrix M together with an elementwise
weight matrix W with entries in [0, 1].  Binary weights recover classical
matrix completion (observed/missing); fractional weights arise e.g. from
iteratively reweighted GLM fits.  Two formulations are supported:

* rank-constrained: minimize sum_ij w_ij (m_ij - x_ij)^2 over rank(X) <= k
* nuclear-norm:     minimize 1/2 sum_ij w_ij (m_ij - x_ij)^2 + lam * ||X||_*

Both proximal kernels (rank truncation and singular-value soft-thresholding)
live here, along with the deterministic SVD wrapper they share.
"""

from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.sparse as sp

RANK_TOLERANCE = 1e-9


# ---------------------------------------------------------------------------
# formulations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RankConstrained:
    """Rank-k constraint; the proximal map is SVD truncation."""

    k: int
    t: float = 1.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"rank must be >= 1, got {self.k}")
        if not 0.0 < self.t <= 1.0:
            raise ValueError(f"learning rate must be in (0, 1], got {self.t}")


@dataclass(frozen=True)
class NuclearNorm:
    """Nuclear-norm penalty lam; the proximal map is soft-thresholding."""

    lam: float
    t: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"penalty must be >= 0, got {self.lam}")
        if not 0.0 < self.t <= 1.0:
            raise ValueError(f"learning rate must be in (0, 1], got {self.t}")


Formulation = Union[RankConstrained, NuclearNorm]


# ---------------------------------------------------------------------------
# problem instance
# ---------------------------------------------------------------------------

class WeightedProblem:
    """Target matrix M plus weight matrix W, stored dense or as triplets.

    Dense storage keeps full (n, p) arrays M and W.  Sparse storage keeps
    only the triplets (i, j, m_ij, w_ij) with w_ij > 0; entries not stored
    have weight zero and never enter any sum.
    """

    def __init__(self, M, W):
        M = np.asarray(M, dtype=float)
        W = np.asarray(W, dtype=float)
        if M.ndim != 2:
            raise ValueError("target matrix must be 2-D")
        if M.shape != W.shape:
            raise ValueError(f"shape mismatch: M is {M.shape}, W is {W.shape}")
        if not np.isfinite(M).all():
            raise ValueError("target matrix contains non-finite entries")
        if W.min() < 0.0 or W.max() > 1.0:
            raise ValueError("weights must lie in [0, 1]")
        self.M = M
        self.W = W
        self.rows = None
        self.cols = None
        self.values = None
        self.weights = None
        self._shape = M.shape

    @classmethod
    def from_triplets(cls, rows, cols, values, shape, weights=None):
        """Build a sparse-stored instance from (i, j, value[, weight]) triplets."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        n, p = int(shape[0]), int(shape[1])
        if not (len(rows) == len(cols) == len(values)):
            raise ValueError("triplet arrays must have equal length")
        if weights is None:
            weights = np.ones(len(rows))
        else:
            weights = np.asarray(weights, dtype=float)
            if len(weights) != len(rows):
                raise ValueError("weight array length mismatch")
        if len(rows) and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= p):
            raise ValueError(f"triplet index out of range for shape ({n}, {p})")
        if not np.isfinite(values).all():
            raise ValueError("triplet values contain non-finite entries")
        if len(weights) and (weights.min() <= 0.0 or weights.max() > 1.0):
            raise ValueError("stored triplet weights must lie in (0, 1]")
        flat = rows * p + cols
        if len(np.unique(flat)) != len(flat):
            raise ValueError("duplicate (i, j) triplets")
        self = cls.__new__(cls)
        self.M = None
        self.W = None
        self.rows = rows
        self.cols = cols
        self.values = values
        self.weights = weights
        self._shape = (n, p)
        return self

    @property
    def shape(self):
        return self._shape

    @property
    def is_sparse(self):
        return self.M is None

    @property
    def omega_size(self):
        """Number of entries with nonzero weight."""
        if self.is_sparse:
            return len(self.rows)
        return int(np.count_nonzero(self.W))

    def to_dense(self):
        """Materialize dense storage (no-op for already-dense instances)."""
        if not self.is_sparse:
            return self
        n, p = self._shape
        M = np.zeros((n, p))
        W = np.zeros((n, p))
        M[self.rows, self.cols] = self.values
        W[self.rows, self.cols] = self.weights
        return WeightedProblem(M, W)

    def weight_csr(self):
        """Weights as a scipy CSR matrix (sparse storage only)."""
        if not self.is_sparse:
            raise ValueError("dense problem has no triplet storage")
        return sp.csr_matrix((self.weights, (self.rows, self.cols)), shape=self._shape)

    def residual_sq(self, X):
        """Weighted squared residual sum_ij w_ij (m_ij - x_ij)^2 at a dense X."""
        if self.is_sparse:
            diff = self.values - X[self.rows, self.cols]
            return float(np.dot(self.weights, diff * diff))
        diff = self.M - X
        return float(np.sum(self.W * diff * diff))

    def column_means(self):
        """Weighted per-column means of M (zero where a column has no weight)."""
        if self.is_sparse:
            n, p = self._shape
            num = np.bincount(self.cols, weights=self.weights * self.values, minlength=p)
            den = np.bincount(self.cols, weights=self.weights, minlength=p)
        else:
            num = np.einsum("ij,ij->j", self.W, self.M)
            den = self.W.sum(axis=0)
        means = np.zeros_like(num)
        np.divide(num, den, out=means, where=den > 0)
        return means

    def blend(self, X, t=1.0):
        """Post-gradient matrix t*W*M + (1 - t*W)*X (dense storage only)."""
        if self.is_sparse:
            raise ValueError("blend requires dense storage; call to_dense() first")
        return X + t * self.W * (self.M - X)


# ---------------------------------------------------------------------------
# iterates
# ---------------------------------------------------------------------------

@dataclass
class DenseIterate:
    """Current solution X and post-gradient auxiliary matrix Y."""

    X: np.ndarray
    Y: np.ndarray


@dataclass
class FactorPair:
    """Skinny factors (A, B) representing X = A @ B.T."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        if self.A.ndim != 2 or self.B.ndim != 2:
            raise ValueError("factors must be 2-D")
        if self.A.shape[1] != self.B.shape[1]:
            raise ValueError(
                f"factor column counts differ: {self.A.shape[1]} vs {self.B.shape[1]}"
            )
        if self.k > min(self.A.shape[0], self.B.shape[0]):
            raise ValueError("factor rank exceeds min(n, p)")

    @property
    def k(self):
        return self.A.shape[1]

    def product(self):
        return self.A @ self.B.T


# ---------------------------------------------------------------------------
# deterministic SVD and derived kernels
# ---------------------------------------------------------------------------

def svd_factors(X):
    """Thin SVD with a fixed sign convention so repeated runs are reproducible.

    Each left singular vector is flipped so that its largest-magnitude entry
    is nonnegative (first index wins ties).  Returns (U, d, Vt).
    """
    U, d, Vt = np.linalg.svd(np.asarray(X, dtype=float), full_matrices=False)
    if U.shape[1]:
        idx = np.abs(U).argmax(axis=0)
        signs = np.sign(U[idx, np.arange(U.shape[1])])
        signs[signs == 0] = 1.0
        U *= signs
        Vt *= signs[:, None]
    return U, d, Vt


def singular_values(X):
    return np.linalg.svd(np.asarray(X, dtype=float), compute_uv=False)


def rank_from_singular_values(d, tol=RANK_TOLERANCE):
    """Numerical rank: count of values above tol times the largest one."""
    d = np.asarray(d)
    if d.size == 0 or d[0] <= 0.0:
        return 0
    return int(np.count_nonzero(d > tol * d[0]))


def matrix_rank(X, tol=RANK_TOLERANCE):
    return rank_from_singular_values(singular_values(X), tol)


def svd_truncate(X, k):
    """Frobenius-closest matrix of rank <= k (top-k part of the SVD)."""
    X_k, _ = svd_truncate_with_values(X, k)
    return X_k


def svd_truncate_with_values(X, k):
    """As svd_truncate, but also returns the retained singular values."""
    if k < 1:
        raise ValueError(f"rank must be >= 1, got {k}")
    U, d, Vt = svd_factors(X)
    k = min(k, len(d))
    kept = np.zeros_like(d)
    kept[:k] = d[:k]
    return (U[:, :k] * d[:k]) @ Vt[:k], kept


def soft_threshold(X, lam):
    """Shrink every singular value by lam and floor at zero."""
    X_s, _ = soft_threshold_with_values(X, lam)
    return X_s


def soft_threshold_with_values(X, lam):
    """As soft_threshold, but also returns the shrunk singular values."""
    if lam < 0:
        raise ValueError(f"threshold must be >= 0, got {lam}")
    U, d, Vt = svd_factors(X)
    shrunk = np.maximum(d - lam, 0.0)
    return (U * shrunk) @ Vt, shrunk


def nuclear_norm(X):
    """Sum of singular values."""
    return float(singular_values(X).sum())


# ---------------------------------------------------------------------------
# losses and gradients
# ---------------------------------------------------------------------------

def weighted_loss(problem, X, formulation):
    """Objective value at a dense X.

    Rank-constrained mode returns the weighted residual sum of squares; the
    nuclear-norm mode returns half of it plus lam times the nuclear norm.
    """
    X = np.asarray(X, dtype=float)
    if X.shape != problem.shape:
        raise ValueError(f"shape mismatch: X is {X.shape}, problem is {problem.shape}")
    rss = problem.residual_sq(X)
    if isinstance(formulation, RankConstrained):
        return rss
    return 0.5 * rss + formulation.lam * nuclear_norm(X)


def loss_from_parts(residual_sq, sv, formulation):
    """Assemble the objective from a precomputed residual and singular values."""
    if isinstance(formulation, RankConstrained):
        return float(residual_sq)
    return 0.5 * float(residual_sq) + formulation.lam * float(np.sum(sv))


def weighted_gradient(problem, X):
    """Gradient -W * (M - X) of the smooth half-quadratic term.

    Sparse-stored problems yield a CSR matrix supported on the stored
    triplets; dense problems yield a dense array.
    """
    X = np.asarray(X, dtype=float)
    if X.shape != problem.shape:
        raise ValueError(f"shape mismatch: X is {X.shape}, problem is {problem.shape}")
    if problem.is_sparse:
        vals = -problem.weights * (problem.values - X[problem.rows, problem.cols])
        return sp.csr_matrix((vals, (problem.rows, problem.cols)), shape=problem.shape)
    return -problem.W * (problem.M - X)
