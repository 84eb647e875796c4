"""Proximal-gradient solvers and the iteration driver shared by all methods.

The baseline update blends the target into the current iterate through the
weights, Y = t*W*M + (1 - t*W)*X, and applies the formulation's proximal
kernel (rank truncation or singular-value soft-thresholding).  ``run``
drives any configured method — including the ALS family — with a uniform
relative-loss-change stopping rule.
"""

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import accel, core

METHODS = (
    "prox-baseline",
    "prox-nesterov",
    "prox-anderson",
    "als-baseline",
    "als-nesterov",
    "als-anderson",
)

INIT_MODES = ("zeros", "column-means", "random-factors", "warm-start")

ZERO_LOSS_FLOOR = 1e-15


class DivergenceError(RuntimeError):
    """Raised when a non-finite loss is encountered; carries the partial trace."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class SolverConfig:
    """Method, formulation, stopping rule, and initialization for one run."""

    formulation: core.Formulation
    method: str = "prox-baseline"
    epsilon: float = 1e-8
    max_iters: int = 300
    anderson: Optional[accel.AndersonConfig] = None
    init: Optional[str] = None
    init_seed: Optional[int] = None
    warm_start: Optional[core.FactorPair] = None
    als_rank: Optional[int] = None
    inner_iters: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.inner_iters < 1:
            raise ValueError("inner_iters must be >= 1")
        if self.init is not None and self.init not in INIT_MODES:
            raise ValueError(f"unknown init mode {self.init!r}")

    def resolved_init(self):
        if self.init is not None:
            return self.init
        return "random-factors" if self.method.startswith("als") else "zeros"

    def anderson_config(self):
        return self.anderson if self.anderson is not None else accel.AndersonConfig()


@dataclass
class TraceRecord:
    iteration: int
    loss: float
    delta: float
    rank: int
    seconds: float
    alpha: Optional[np.ndarray] = None
    guard_used: Optional[bool] = None
    guard_plain_loss: Optional[float] = None


@dataclass
class ConvergenceTrace:
    """Per-iteration loss, relative change, rank, timing, and mixing diagnostics."""

    records: list = field(default_factory=list)

    def append(self, record):
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ValueError("iteration indices must be strictly increasing")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def losses(self):
        return np.array([r.loss for r in self.records])

    def deltas(self):
        return np.array([r.delta for r in self.records])

    def iterations_to(self, eps):
        """First iteration whose relative change drops below eps, or None."""
        for r in self.records:
            if r.delta < eps:
                return r.iteration
        return None


def relative_change(curr, prev):
    """|curr - prev| / |prev|, defined as 0 when both losses are ~0."""
    if abs(curr) < ZERO_LOSS_FLOOR and abs(prev) < ZERO_LOSS_FLOOR:
        return 0.0
    if prev == 0.0:
        return math.inf
    return abs(curr - prev) / abs(prev)


def prox_step(problem, X, formulation):
    """One proximal-gradient update; returns (X_next, Y_next).

    Y_next = t*W*M + (1 - t*W)*X is returned alongside so acceleration
    layers can reuse the post-gradient matrix.
    """
    X = np.asarray(X, dtype=float)
    if X.shape != problem.shape:
        raise ValueError(f"shape mismatch: X is {X.shape}, problem is {problem.shape}")
    Y = problem.blend(X, formulation.t)
    if isinstance(formulation, core.RankConstrained):
        return core.svd_truncate(Y, formulation.k), Y
    return core.soft_threshold(Y, formulation.t * formulation.lam), Y


def init_matrix(problem, config):
    """Starting matrix for the dense solvers.

    ``column-means`` is the weighted column-mean imputation t of the target:
    observed entries blended with per-column means.
    """
    n, p = problem.shape
    mode = config.resolved_init()
    if mode == "zeros":
        return np.zeros((n, p))
    if mode == "column-means":
        means = np.broadcast_to(problem.column_means(), (n, p)).copy()
        return problem.blend(means)
    if mode == "random-factors":
        if config.init_seed is None:
            raise ValueError("random-factors init requires init_seed")
        if isinstance(config.formulation, core.RankConstrained):
            k = config.formulation.k
        else:
            k = config.als_rank or min(n, p)
        rng = np.random.default_rng(config.init_seed)
        A = rng.standard_normal((n, k)) / math.sqrt(k)
        B = rng.standard_normal((p, k)) / math.sqrt(k)
        return A @ B.T
    if mode == "warm-start":
        if config.warm_start is None:
            raise ValueError("warm-start init requires a FactorPair")
        return config.warm_start.product()
    raise ValueError(f"unknown init mode {mode!r}")


def run(problem, config):
    """Iterate the configured method until the relative loss change drops
    below epsilon or max_iters is reached.

    Returns (solution, trace) where the solution is a DenseIterate for the
    prox family and a FactorPair for the ALS family.  A non-finite loss
    raises DivergenceError carrying the trace collected so far.
    """
    if config.method.startswith("als"):
        from . import als

        return als.run_als(problem, config)

    if problem.is_sparse:
        problem = problem.to_dense()
    formulation = config.formulation

    X = init_matrix(problem, config)
    trace = ConvergenceTrace()
    loss_prev = core.weighted_loss(problem, X, formulation)
    start = time.perf_counter()

    if config.method == "prox-baseline":
        Y = X
        for i in range(1, config.max_iters + 1):
            Y = problem.blend(X, formulation.t)
            X, sv = _kernel(Y, formulation)
            loss = core.loss_from_parts(problem.residual_sq(X), sv, formulation)
            loss_prev, done = _record(trace, i, loss, loss_prev, sv, start, config)
            if done:
                break
        return core.DenseIterate(X, Y), trace

    if config.method == "prox-nesterov":
        X_prev = X
        Y = X
        for i in range(1, config.max_iters + 1):
            V = accel.nesterov_extrapolate(X, X_prev, i)
            Y = problem.blend(V, formulation.t)
            X_prev = X
            X, sv = _kernel(Y, formulation)
            loss = core.loss_from_parts(problem.residual_sq(X), sv, formulation)
            loss_prev, done = _record(trace, i, loss, loss_prev, sv, start, config)
            if done:
                break
        return core.DenseIterate(X, Y), trace

    # prox-anderson: mix the fixed-point map Y -> W*M + (1-W)*prox(Y)
    a_cfg = config.anderson_config()
    state = accel.AndersonState(a_cfg.m)
    Y = X.copy()
    X, _ = _kernel(Y, formulation)
    for i in range(1, config.max_iters + 1):
        f_matrix = problem.blend(X, formulation.t)
        Y, X, state = accel.anderson_step(
            state, Y, X, f_matrix, a_cfg, problem, formulation
        )
        loss_prev, done = _record(
            trace, i, state.last_loss, loss_prev, state.last_sv, start, config,
            alpha=state.last_alpha, guard_used=state.last_guard_used,
            guard_plain_loss=state.last_plain_loss,
        )
        if done:
            break
    return core.DenseIterate(X, Y), trace


def _kernel(Y, formulation):
    if isinstance(formulation, core.RankConstrained):
        return core.svd_truncate_with_values(Y, formulation.k)
    return core.soft_threshold_with_values(Y, formulation.t * formulation.lam)


def _record(trace, i, loss, loss_prev, sv, start, config,
            alpha=None, guard_used=None, guard_plain_loss=None):
    delta = relative_change(loss, loss_prev)
    trace.append(TraceRecord(
        iteration=i,
        loss=loss,
        delta=delta,
        rank=core.rank_from_singular_values(sv),
        seconds=time.perf_counter() - start,
        alpha=alpha,
        guard_used=guard_used,
        guard_plain_loss=guard_plain_loss,
    ))
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite loss at iteration {i}", trace)
    return loss, delta < config.epsilon
