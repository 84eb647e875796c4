"""SVD-free alternating least squares over skinny factors (A, B).

Each outer iteration blends the target into the current product through the
weights and updates each factor by an unweighted (or ridge) multiresponse
regression — only k x k systems are ever factorized.  For sparsely weighted
problems the post-gradient matrix is kept in sparse + low-rank form
S + A @ B.T with S = W*(M - A @ B.T) supported on the stored triplets, so no
n x p array is ever materialized.  Acceleration operates on the stacked
factor matrix Z = [A; B].
"""

import math
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import accel, core
from .prox import (
    ConvergenceTrace,
    DivergenceError,
    TraceRecord,
    relative_change,
)


class DegenerateFactorError(RuntimeError):
    """A factor's k x k Gram matrix was singular with no ridge to rescue it."""


@dataclass
class SparseResidual:
    """Triplets of S = W*(M - A @ B.T) over the stored weight support."""

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    shape: tuple

    def to_csr(self):
        return sp.csr_matrix((self.values, (self.rows, self.cols)), shape=self.shape)


@dataclass
class FactorStack:
    """Vertical concatenation Z = [A; B], the acceleration variable."""

    Z: np.ndarray
    n_rows: int

    @classmethod
    def from_pair(cls, factors):
        return cls(np.vstack([factors.A, factors.B]), factors.A.shape[0])

    def split(self):
        return core.FactorPair(self.Z[: self.n_rows], self.Z[self.n_rows:])


def sparse_residual(problem, factors, t=1.0):
    """Compute S = t*W*(M - A @ B.T) on the stored triplets in O(k * |omega|)."""
    if not problem.is_sparse:
        raise ValueError("sparse residual requires triplet storage")
    fitted = np.einsum("ij,ij->i", factors.A[problem.rows], factors.B[problem.cols])
    vals = t * problem.weights * (problem.values - fitted)
    return SparseResidual(problem.rows, problem.cols, vals, problem.shape)


def factorized_loss(problem, factors, formulation):
    """Objective at X = A @ B.T without forming the product densely.

    Rank mode: weighted residual sum of squares.  Nuclear mode: half of it
    plus the ridge term lam/2 * (||A||_F^2 + ||B||_F^2), which equals the
    nuclear norm at a balanced factorization of the solution.
    """
    if problem.is_sparse:
        fitted = np.einsum("ij,ij->i", factors.A[problem.rows], factors.B[problem.cols])
        diff = problem.values - fitted
        rss = float(np.dot(problem.weights, diff * diff))
    else:
        rss = problem.residual_sq(factors.product())
    if isinstance(formulation, core.RankConstrained):
        return rss
    ridge = float(np.sum(factors.A ** 2) + np.sum(factors.B ** 2))
    return 0.5 * rss + 0.5 * formulation.lam * ridge


def _ridge(formulation):
    if isinstance(formulation, core.NuclearNorm):
        return formulation.t * formulation.lam
    return 0.0


def _ridge_solve(gram, rhs, lam, factor_name):
    """Solve rhs @ inv(gram + lam*I) through a Cholesky factorization."""
    k = gram.shape[0]
    system = gram + lam * np.eye(k) if lam else gram
    try:
        cho = scipy.linalg.cho_factor(system, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise DegenerateFactorError(
            f"factor {factor_name} has a singular {k}x{k} Gram matrix "
            "(rank-deficient factor with no ridge penalty)"
        ) from exc
    return scipy.linalg.cho_solve(cho, rhs.T).T


def als_step_dense(problem, factors, formulation, inner_iters=1):
    """One alternation pass (B then A) against the dense post-gradient matrix.

    The default single pass refreshes the post-gradient matrix between the
    two regressions.  With inner_iters > 1 both regressions are instead
    repeated against the initial post-gradient matrix, approaching its exact
    proximal projection.
    """
    if problem.is_sparse:
        raise ValueError("dense ALS step requires dense storage; use als_step_sparse")
    A, B = factors.A, factors.B
    t = formulation.t
    lam = _ridge(formulation)
    Y = problem.blend(A @ B.T, t)
    if inner_iters == 1:
        B = _ridge_solve(A.T @ A, Y.T @ A, lam, "A")
        Y = problem.blend(A @ B.T, t)
        A = _ridge_solve(B.T @ B, Y @ B, lam, "B")
    else:
        for _ in range(inner_iters):
            B = _ridge_solve(A.T @ A, Y.T @ A, lam, "A")
            A = _ridge_solve(B.T @ B, Y @ B, lam, "B")
    return core.FactorPair(A, B)


def als_step_sparse(problem, factors, formulation, inner_iters=1):
    """Sparse + low-rank variant of als_step_dense; same result, no n x p array.

    With Y = A0 @ B0.T + S the regressions need only skinny products, e.g.
    Y.T @ A = B0 @ (A0.T @ A) + S.T @ A, costing O(k * |omega|) plus k x k
    solves.
    """
    if not problem.is_sparse:
        raise ValueError("sparse ALS step requires triplet storage")
    A0, B0 = factors.A, factors.B
    t = formulation.t
    lam = _ridge(formulation)

    S = sparse_residual(problem, factors, t).to_csr()
    if inner_iters == 1:
        B = _ridge_solve(A0.T @ A0, B0 @ (A0.T @ A0) + S.T @ A0, lam, "A")
        S = sparse_residual(problem, core.FactorPair(A0, B), t).to_csr()
        A = _ridge_solve(B.T @ B, A0 @ (B.T @ B) + S @ B, lam, "B")
    else:
        A, B = A0, B0
        for _ in range(inner_iters):
            B = _ridge_solve(A.T @ A, B0 @ (A0.T @ A) + S.T @ A, lam, "A")
            A = _ridge_solve(B.T @ B, A0 @ (B0.T @ B) + S @ B, lam, "B")
    return core.FactorPair(A, B)


def als_step(problem, factors, formulation, inner_iters=1):
    """Dispatch to the dense or sparse alternation based on problem storage."""
    if problem.is_sparse:
        return als_step_sparse(problem, factors, formulation, inner_iters)
    return als_step_dense(problem, factors, formulation, inner_iters)


def solution_rank(factors, tol=core.RANK_TOLERANCE):
    """Numerical rank and singular values of A @ B.T via two skinny SVDs.

    A = U_A D_A V_A.T, then Btilde = B @ V_A @ D_A carries the product's
    spectrum: its singular values are exactly those of A @ B.T.
    """
    _, d_A, Vt_A = core.svd_factors(factors.A)
    Btilde = (factors.B @ Vt_A.T) * d_A
    d_B = core.singular_values(Btilde)
    return core.rank_from_singular_values(d_B, tol), d_B


@dataclass
class NesterovState:
    prev: FactorStack
    index: int = 1


def als_accelerated_step(problem, stack, formulation, mode, state,
                         anderson=None, inner_iters=1):
    """One accelerated ALS update over the stacked factors.

    ``nesterov`` extrapolates the stack (equivalently A and B separately)
    before the alternation pass; ``anderson`` mixes flattened stacks over
    the fixed point Z = phi(Z) with the usual guarded fallback.  Returns
    (stack_next, state); pass state=None on the first call.
    """
    if mode == "nesterov":
        if state is None:
            state = NesterovState(prev=stack)
        V = accel.nesterov_extrapolate(stack.Z, state.prev.Z, state.index)
        nxt = als_step(problem, FactorStack(V, stack.n_rows).split(),
                       formulation, inner_iters)
        return FactorStack.from_pair(nxt), NesterovState(stack, state.index + 1)

    if mode != "anderson":
        raise ValueError(f"unknown acceleration mode {mode!r}")
    if anderson is None:
        anderson = accel.AndersonConfig()
    if state is None:
        state = accel.AndersonState(anderson.m)

    plain_pair = als_step(problem, stack.split(), formulation, inner_iters)
    plain_stack = FactorStack.from_pair(plain_pair)
    f = accel.vec(plain_stack.Z)
    state.observe(f, f - accel.vec(stack.Z))

    alpha = None
    if state.iteration >= anderson.delay:
        alpha = state.mix_coefficients(anderson)

    state.last_alpha = None
    state.last_guard_used = None
    state.last_fallback = alpha is None
    state.last_plain_loss = None

    def plain_loss():
        return factorized_loss(problem, plain_pair, formulation)

    if alpha is None:
        chosen, loss = plain_stack, plain_loss()
    else:
        Z_mix = accel.unvec(state.mixed(alpha), stack.Z.shape)
        if not np.isfinite(Z_mix).all():
            state.reset()
            state.last_fallback = True
            chosen, loss = plain_stack, plain_loss()
        else:
            state.record_alpha(alpha)
            state.last_alpha = alpha
            mix_stack = FactorStack(Z_mix, stack.n_rows)
            loss_mix = factorized_loss(problem, mix_stack.split(), formulation)
            if anderson.guarded:
                loss_plain = plain_loss()
                state.last_plain_loss = loss_plain
                if loss_plain < loss_mix:
                    state.last_guard_used = True
                    chosen, loss = plain_stack, loss_plain
                else:
                    state.last_guard_used = False
                    chosen, loss = mix_stack, loss_mix
            else:
                chosen, loss = mix_stack, loss_mix

    state.trim()
    state.iteration += 1
    state.last_loss = loss
    return chosen, state


def random_factors(n, p, k, seed):
    """Standard-normal factors scaled by 1/sqrt(k), reproducible from seed."""
    rng = np.random.default_rng(seed)
    return core.FactorPair(
        rng.standard_normal((n, k)) / math.sqrt(k),
        rng.standard_normal((p, k)) / math.sqrt(k),
    )


def init_factors(problem, config, k):
    mode = config.resolved_init()
    if mode == "warm-start":
        pair = config.warm_start
        if pair is None:
            raise ValueError("warm-start init requires a FactorPair")
        if pair.A.shape[0] != problem.shape[0] or pair.B.shape[0] != problem.shape[1]:
            raise ValueError("warm-start factor shapes do not match the problem")
        if pair.k != k:
            raise ValueError(f"warm-start factors have k={pair.k}, expected {k}")
        return pair
    if mode == "random-factors":
        if config.init_seed is None:
            raise ValueError("random-factors init requires init_seed")
        n, p = problem.shape
        return random_factors(n, p, k, config.init_seed)
    raise ValueError(f"ALS methods require random-factors or warm-start init, got {mode!r}")


def als_rank_for(problem, config):
    """Factor count: the constraint rank in rank mode, else the configured cap."""
    if isinstance(config.formulation, core.RankConstrained):
        return config.formulation.k
    if config.als_rank is not None:
        return config.als_rank
    return min(problem.shape)


def run_als(problem, config):
    """Driver for the als-* methods; mirrors the prox driver's stopping rule."""
    formulation = config.formulation
    k = als_rank_for(problem, config)
    factors = init_factors(problem, config, k)
    trace = ConvergenceTrace()
    loss_prev = factorized_loss(problem, factors, formulation)
    start = time.perf_counter()

    mode = config.method.split("-", 1)[1]
    state = None
    a_cfg = config.anderson_config()
    stack = FactorStack.from_pair(factors) if mode != "baseline" else None

    for i in range(1, config.max_iters + 1):
        alpha = guard_used = plain_loss = None
        if mode == "baseline":
            factors = als_step(problem, factors, formulation, config.inner_iters)
            loss = factorized_loss(problem, factors, formulation)
        elif mode == "nesterov":
            stack, state = als_accelerated_step(
                problem, stack, formulation, "nesterov", state,
                inner_iters=config.inner_iters,
            )
            factors = stack.split()
            loss = factorized_loss(problem, factors, formulation)
        else:
            stack, state = als_accelerated_step(
                problem, stack, formulation, "anderson", state,
                anderson=a_cfg, inner_iters=config.inner_iters,
            )
            factors = stack.split()
            loss = state.last_loss
            alpha = state.last_alpha
            guard_used = state.last_guard_used
            plain_loss = state.last_plain_loss

        delta = relative_change(loss, loss_prev)
        rank, _ = solution_rank(factors)
        trace.append(TraceRecord(
            iteration=i,
            loss=loss,
            delta=delta,
            rank=rank,
            seconds=time.perf_counter() - start,
            alpha=alpha,
            guard_used=guard_used,
            guard_plain_loss=plain_loss,
        ))
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite loss at iteration {i}", trace)
        loss_prev = loss
        if delta < config.epsilon:
            break

    return factors, trace


def unweighted_als(problem, k, lam=0.0, max_iters=50, seed=0, tol=1e-6):
    """Warm-start helper: ALS on the zero-imputed target with unit weights.

    Entries with zero weight are treated as observed zeros, turning the fit
    into plain (ridge) alternating regressions against a fixed matrix; with
    triplet storage everything stays sparse.
    """
    n, p = problem.shape
    if problem.is_sparse:
        M0 = sp.csr_matrix(
            (problem.values, (problem.rows, problem.cols)), shape=problem.shape
        )
        sq_norm = float(np.dot(problem.values, problem.values))
    else:
        M0 = np.where(problem.W > 0, problem.M, 0.0)
        sq_norm = float(np.sum(M0 * M0))
    factors = random_factors(n, p, k, seed)
    A, B = factors.A, factors.B
    loss_prev = math.inf
    for _ in range(max_iters):
        B = _ridge_solve(A.T @ A, (M0.T @ A), lam, "A")
        A = _ridge_solve(B.T @ B, (M0 @ B), lam, "B")
        # ||M0 - A B^T||^2 assembled from skinny products
        cross = float(np.einsum("ij,ij->", np.asarray(M0 @ B), A))
        prod_sq = float(np.einsum("ij,ij->", A.T @ A, B.T @ B))
        rss = sq_norm - 2.0 * cross + prod_sq
        loss = 0.5 * rss + 0.5 * lam * float(np.sum(A * A) + np.sum(B * B))
        if relative_change(loss, loss_prev) < tol:
            break
        loss_prev = loss
    return core.FactorPair(A, B)
