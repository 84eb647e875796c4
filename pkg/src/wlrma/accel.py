"""Nesterov momentum and Anderson mixing for the proximal fixed-point maps.

Anderson mixing keeps the last m+1 map outputs f and residuals r = f - y
(flattened column-major) and replaces the plain update with the affine
combination F @ alpha whose coefficients minimize ||R @ alpha|| subject to
sum(alpha) = 1.  An optional ridge penalty gamma * ||alpha - alpha_prev||^2
smooths the coefficient path; the guarded variant falls back to the plain
step whenever mixing does not improve the objective.
"""

import numpy as np

from . import core

CONDITION_LIMIT = 1e12


def vec(X):
    """Column-major flattening; the fixed convention for all mixing buffers."""
    return np.ravel(X, order="F")


def unvec(x, shape):
    return np.reshape(x, shape, order="F")


def nesterov_extrapolate(X_curr, X_prev, i):
    """Momentum extrapolation X + (i-1)/(i+2) * (X - X_prev) at iteration i >= 1."""
    if i < 1:
        raise ValueError(f"iteration index must be >= 1, got {i}")
    if np.shape(X_curr) != np.shape(X_prev):
        raise ValueError("iterate shapes differ")
    coeff = (i - 1.0) / (i + 2.0)
    if coeff == 0.0:
        return X_curr
    return X_curr + coeff * (X_curr - X_prev)


def solve_alpha(G):
    """Coefficients minimizing ||R @ alpha|| with sum(alpha) = 1, from G = R.T @ R.

    Solves G @ theta = 1 and normalizes.  Returns None when G is singular or
    has condition estimate above CONDITION_LIMIT; callers then take a plain
    step for this iteration.
    """
    G = np.asarray(G, dtype=float)
    w = G.shape[0]
    if w == 1:
        return np.ones(1)
    if not np.isfinite(G).all() or np.linalg.cond(G) > CONDITION_LIMIT:
        return None
    try:
        theta = np.linalg.solve(G, np.ones(w))
    except np.linalg.LinAlgError:
        return None
    total = theta.sum()
    if not np.isfinite(total) or abs(total) < 1e-300:
        return None
    return theta / total


def solve_alpha_regularized(G, alpha_prev, gamma):
    """Equality-constrained ridge coefficients.

    Minimizes alpha.T G alpha + gamma * ||alpha - alpha_prev||^2 subject to
    sum(alpha) = 1, by solving the stationarity system of size w + 1.  The
    rank-one closed form (I + gamma*K) @ alpha_star quoted for this problem
    is numerically identical (symmetric G); the direct solve keeps the code
    obviously correct.  Returns None on an ill-conditioned system.
    """
    G = np.asarray(G, dtype=float)
    w = G.shape[0]
    alpha_prev = np.asarray(alpha_prev, dtype=float)
    if alpha_prev.shape != (w,):
        raise ValueError(f"alpha_prev must have length {w}")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if w == 1:
        return np.ones(1)
    system = np.zeros((w + 1, w + 1))
    system[:w, :w] = 2.0 * (G + gamma * np.eye(w))
    system[:w, w] = 1.0
    system[w, :w] = 1.0
    rhs = np.concatenate([2.0 * gamma * alpha_prev, [1.0]])
    if not np.isfinite(system).all() or np.linalg.cond(system) > CONDITION_LIMIT:
        return None
    try:
        alpha = np.linalg.solve(system, rhs)[:w]
    except np.linalg.LinAlgError:
        return None
    total = alpha.sum()
    if not np.isfinite(total) or abs(total) < 1e-300:
        return None
    return alpha / total


class AndersonConfig:
    """Settings for (stabilized, guarded, delayed) Anderson mixing."""

    def __init__(self, m=3, gamma=0.0, reg_depth=3, guarded=True, delay=0):
        if m < 1:
            raise ValueError("depth m must be >= 1")
        if gamma < 0:
            raise ValueError("gamma must be >= 0")
        if reg_depth < 1:
            raise ValueError("reg_depth must be >= 1")
        if delay < 0:
            raise ValueError("delay must be >= 0")
        self.m = m
        self.gamma = gamma
        self.reg_depth = reg_depth
        self.guarded = guarded
        self.delay = delay


class AndersonState:
    """Ring buffers of map outputs/residuals with an incrementally updated Gram.

    Buffers hold at most m+1 columns (oldest first).  G always equals
    R.T @ R for the current buffer contents; appending a column costs
    O(len(r) * m) and dropping one is a submatrix view.
    """

    def __init__(self, m):
        self.m = m
        self.F = []
        self.R = []
        self.G = np.zeros((0, 0))
        self.alpha_history = []
        self.iteration = 0
        # step diagnostics, refreshed by anderson_step
        self.last_alpha = None
        self.last_guard_used = None
        self.last_fallback = False
        self.last_loss = None
        self.last_plain_loss = None
        self.last_sv = None

    @property
    def width(self):
        return len(self.R)

    def observe(self, f, r):
        """Append one map output and residual, updating the Gram matrix."""
        w = self.width
        G_new = np.empty((w + 1, w + 1))
        G_new[:w, :w] = self.G
        cross = np.array([rj @ r for rj in self.R])
        G_new[:w, w] = cross
        G_new[w, :w] = cross
        G_new[w, w] = r @ r
        self.F.append(f)
        self.R.append(r)
        self.G = G_new

    def trim(self):
        """Drop oldest columns until at most m remain (call after mixing)."""
        while len(self.R) > self.m:
            self.F.pop(0)
            self.R.pop(0)
            self.G = self.G[1:, 1:].copy()

    def reset(self):
        self.F = []
        self.R = []
        self.G = np.zeros((0, 0))

    def mixed(self, alpha):
        """Affine combination of the buffered map outputs."""
        out = alpha[0] * self.F[0]
        for a, f in zip(alpha[1:], self.F[1:]):
            out = out + a * f
        return out

    def alpha_prev(self, width, reg_depth):
        """Average of up to reg_depth previous coefficient vectors.

        Vectors are aligned on their most recent entries (front-padded with
        zeros or front-truncated) and the average is renormalized to sum 1.
        With no history the uniform vector is used.
        """
        if not self.alpha_history:
            return np.full(width, 1.0 / width)
        recent = self.alpha_history[-reg_depth:]
        acc = np.zeros(width)
        for a in recent:
            if len(a) >= width:
                acc += a[len(a) - width:]
            else:
                acc[width - len(a):] += a
        acc /= len(recent)
        total = acc.sum()
        if abs(total) < 1e-12:
            return np.full(width, 1.0 / width)
        return acc / total

    def record_alpha(self, alpha):
        self.alpha_history.append(np.asarray(alpha, dtype=float))
        if len(self.alpha_history) > 64:
            del self.alpha_history[0]

    def mix_coefficients(self, config):
        """Solve for the mixing coefficients, regularized when gamma > 0."""
        if config.gamma > 0.0:
            prev = self.alpha_prev(self.width, config.reg_depth)
            return solve_alpha_regularized(self.G, prev, config.gamma)
        return solve_alpha(self.G)


def _prox_with_values(Y, formulation):
    if isinstance(formulation, core.RankConstrained):
        return core.svd_truncate_with_values(Y, formulation.k)
    return core.soft_threshold_with_values(Y, formulation.t * formulation.lam)


def anderson_step(state, y_curr, x_curr, map_output, config, problem, formulation):
    """One (guarded) Anderson iteration of the prox fixed-point map.

    ``map_output`` is the current map value W*M + (1-W)*x_curr.  Appends the
    new residual, solves for coefficients, mixes, applies the proximal
    kernel, and — when guarded — keeps whichever of the mixed and plain
    candidates has the lower objective.  A singular coefficient solve falls
    back to the plain step without touching the buffers; non-finite mixed
    values additionally clear them (restart).

    Returns (y_next, x_next, state); diagnostics for the step (coefficients,
    guard decision, chosen loss and singular values) are left on the state.
    """
    f = vec(map_output)
    state.observe(f, f - vec(y_curr))

    alpha = None
    if state.iteration >= config.delay:
        alpha = state.mix_coefficients(config)

    plain_x = plain_sv = plain_loss = None

    def eval_plain():
        nonlocal plain_x, plain_sv, plain_loss
        if plain_x is None:
            plain_x, plain_sv = _prox_with_values(map_output, formulation)
            plain_loss = core.loss_from_parts(
                problem.residual_sq(plain_x), plain_sv, formulation
            )
        return plain_x, plain_sv, plain_loss

    state.last_alpha = None
    state.last_guard_used = None
    state.last_fallback = alpha is None
    state.last_plain_loss = None

    if alpha is None:
        y_next = map_output
        x_next, sv, loss = eval_plain()
    else:
        y_mix = unvec(state.mixed(alpha), problem.shape)
        if not np.isfinite(y_mix).all():
            state.reset()
            state.last_fallback = True
            y_next = map_output
            x_next, sv, loss = eval_plain()
        else:
            state.record_alpha(alpha)
            state.last_alpha = alpha
            x_mix, sv_mix = _prox_with_values(y_mix, formulation)
            loss_mix = core.loss_from_parts(
                problem.residual_sq(x_mix), sv_mix, formulation
            )
            if config.guarded:
                eval_plain()
                state.last_plain_loss = plain_loss
                if plain_loss < loss_mix:
                    state.last_guard_used = True
                    y_next, x_next, sv, loss = map_output, plain_x, plain_sv, plain_loss
                else:
                    state.last_guard_used = False
                    y_next, x_next, sv, loss = y_mix, x_mix, sv_mix, loss_mix
            else:
                y_next, x_next, sv, loss = y_mix, x_mix, sv_mix, loss_mix

    state.trim()
    state.iteration += 1
    state.last_loss = loss
    state.last_sv = sv
    return y_next, x_next, state
