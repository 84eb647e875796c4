import numpy as np
import pytest

from wlrma import accel, core
from wlrma.accel import AndersonConfig, AndersonState


# ---------------------------------------------------------------------------
# nesterov_extrapolate
# ---------------------------------------------------------------------------

def test_nesterov_first_iteration_is_identity():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((3, 2))
    out = accel.nesterov_extrapolate(X, rng.standard_normal((3, 2)), 1)
    assert np.array_equal(out, X)


def test_nesterov_zero_momentum_when_stationary():
    X = np.arange(6.0).reshape(3, 2)
    for i in (1, 2, 5, 50):
        assert np.allclose(accel.nesterov_extrapolate(X, X, i), X)


def test_nesterov_quarter_coefficient_at_i2():
    rng = np.random.default_rng(1)
    X_prev = rng.standard_normal((4, 3))
    X_curr = 2.0 * X_prev
    out = accel.nesterov_extrapolate(X_curr, X_prev, 2)
    # coefficient (2-1)/(2+2) = 0.25, so result is X_curr + 0.25 * X_prev
    assert np.allclose(out, X_curr + 0.25 * X_prev, atol=1e-14)


def test_nesterov_rejects_bad_index():
    X = np.zeros((2, 2))
    with pytest.raises(ValueError):
        accel.nesterov_extrapolate(X, X, 0)


# ---------------------------------------------------------------------------
# solve_alpha
# ---------------------------------------------------------------------------

def test_alpha_single_column():
    assert np.array_equal(accel.solve_alpha(np.array([[4.2]])), [1.0])


def test_alpha_uniform_for_orthonormal_residuals():
    for w in (2, 3, 4):
        alpha = accel.solve_alpha(np.eye(w))
        assert np.allclose(alpha, np.full(w, 1.0 / w), atol=1e-12)


def _reduced_ls_alpha(R):
    # eliminate alpha_0 = 1 - sum(beta) and solve the unconstrained problem
    r0 = R[:, 0]
    D = R[:, 1:] - r0[:, None]
    beta = np.linalg.solve(D.T @ D, -D.T @ r0)
    return np.concatenate([[1.0 - beta.sum()], beta])


def test_alpha_matches_reduced_normal_equations():
    rng = np.random.default_rng(2)
    R = rng.standard_normal((25, 3))
    alpha = accel.solve_alpha(R.T @ R)
    assert np.abs(alpha - _reduced_ls_alpha(R)).max() < 1e-6
    assert abs(alpha.sum() - 1.0) < 1e-12


def test_alpha_singular_gram_falls_back():
    r = np.ones(10)
    R = np.column_stack([r, r])  # identical residuals
    assert accel.solve_alpha(R.T @ R) is None


# ---------------------------------------------------------------------------
# solve_alpha_regularized
# ---------------------------------------------------------------------------

def test_regularized_gamma_zero_matches_plain():
    rng = np.random.default_rng(3)
    R = rng.standard_normal((20, 4))
    G = R.T @ R
    prev = np.array([0.5, 0.3, 0.1, 0.1])
    a0 = accel.solve_alpha(G)
    a_reg = accel.solve_alpha_regularized(G, prev, 0.0)
    assert np.abs(a0 - a_reg).max() < 1e-10


def test_regularized_fixed_point_when_prev_is_optimum():
    rng = np.random.default_rng(4)
    R = rng.standard_normal((20, 3))
    G = R.T @ R
    prev = accel.solve_alpha(G)
    for gamma in (0.1, 1.0, 25.0):
        out = accel.solve_alpha_regularized(G, prev, gamma)
        assert np.abs(out - prev).max() < 1e-9


def _reduced_ridge_alpha(R, prev, gamma):
    # alpha = a + N beta with a = e_0; N maps beta to (-sum(beta), beta)
    w = R.shape[1]
    a = np.zeros(w); a[0] = 1.0
    N = np.vstack([-np.ones(w - 1), np.eye(w - 1)])
    lhs = (R @ N).T @ (R @ N) + gamma * N.T @ N
    rhs = -(R @ N).T @ (R @ a) - gamma * N.T @ (a - prev)
    beta = np.linalg.solve(lhs, rhs)
    return a + N @ beta


def test_regularized_matches_reduced_oracle():
    rng = np.random.default_rng(5)
    R = rng.standard_normal((30, 3))
    G = R.T @ R
    prev = np.array([1.0, 0.0, 0.0])
    out = accel.solve_alpha_regularized(G, prev, 1.0)
    assert np.abs(out - _reduced_ridge_alpha(R, prev, 1.0)).max() < 1e-8


def test_regularized_matches_rank_one_update_closed_form():
    # the (I + gamma*K) alpha* form is equivalent to the KKT solve
    rng = np.random.default_rng(6)
    for _ in range(5):
        R = rng.standard_normal((25, 4))
        G = R.T @ R
        gamma = rng.uniform(0.05, 10.0)
        prev = rng.standard_normal(4)
        prev /= prev.sum()
        Q = np.linalg.inv(G + gamma * np.eye(4))
        ones = np.ones(4)
        a_star = Q @ ones / (ones @ Q @ ones)
        K = Q @ (np.outer(prev, ones) - np.outer(ones, prev))
        closed = (np.eye(4) + gamma * K) @ a_star
        out = accel.solve_alpha_regularized(G, prev, gamma)
        assert np.abs(out - closed).max() < 1e-10


def test_regularization_continuity_as_gamma_vanishes():
    rng = np.random.default_rng(7)
    R = rng.standard_normal((40, 4))
    G = R.T @ R
    prev = np.full(4, 0.25)
    a0 = accel.solve_alpha(G)
    a_eps = accel.solve_alpha_regularized(G, prev, 1e-12)
    assert np.abs(a0 - a_eps).max() < 1e-6


# ---------------------------------------------------------------------------
# AndersonState bookkeeping
# ---------------------------------------------------------------------------

def test_state_gram_tracks_buffers():
    rng = np.random.default_rng(8)
    state = AndersonState(m=3)
    for _ in range(10):
        f = rng.standard_normal(30)
        r = rng.standard_normal(30)
        state.observe(f, r)
        R = np.column_stack(state.R)
        assert np.abs(state.G - R.T @ R).max() < 1e-10
        state.trim()
        assert state.width <= 3
        R = np.column_stack(state.R)
        assert np.abs(state.G - R.T @ R).max() < 1e-10


def test_alpha_prev_alignment_and_averaging():
    state = AndersonState(m=3)
    assert np.allclose(state.alpha_prev(3, 3), np.full(3, 1 / 3))
    state.record_alpha(np.array([1.0]))
    state.record_alpha(np.array([0.25, 0.75]))
    # width 3: entries align on the most recent positions, then renormalize
    prev = state.alpha_prev(3, 3)
    assert abs(prev.sum() - 1.0) < 1e-12
    expected = (np.array([0.0, 0.0, 1.0]) + np.array([0.0, 0.25, 0.75])) / 2
    assert np.allclose(prev, expected)
    # width 1: truncate to the newest entry and renormalize
    prev1 = state.alpha_prev(1, 3)
    assert abs(prev1.sum() - 1.0) < 1e-12


# ---------------------------------------------------------------------------
# anderson_step over the prox fixed-point map
# ---------------------------------------------------------------------------

def _problem(seed=9, n=6, p=5):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, p))
    W = rng.random((n, p))
    return core.WeightedProblem(M, W)


def _drive(problem, formulation, config, iters):
    """Run the Algorithm-style loop, returning per-step records."""
    state = AndersonState(config.m)
    Y = np.zeros(problem.shape)
    X = np.zeros(problem.shape)
    records = []
    for _ in range(iters):
        f_matrix = problem.blend(X)
        Y, X, state = accel.anderson_step(
            state, Y, X, f_matrix, config, problem, formulation
        )
        records.append({
            "Y": Y.copy(), "X": X.copy(),
            "alpha": None if state.last_alpha is None else state.last_alpha.copy(),
            "fallback": state.last_fallback,
            "guard_used": state.last_guard_used,
            "loss": state.last_loss,
            "plain_loss": state.last_plain_loss,
        })
    return records


def test_first_step_is_pure_prox():
    problem = _problem()
    form = core.RankConstrained(2)
    config = AndersonConfig(m=2, guarded=False)
    records = _drive(problem, form, config, 1)
    plain = core.svd_truncate(problem.blend(np.zeros(problem.shape)), 2)
    assert np.abs(records[0]["X"] - plain).max() < 1e-12


def test_identical_residuals_fall_back():
    problem = core.WeightedProblem(np.zeros((3, 3)), np.zeros((3, 3)))
    form = core.RankConstrained(1)
    config = AndersonConfig(m=1, guarded=False)
    # zero weights: the map is constant, residuals vanish, Gram is singular
    records = _drive(problem, form, config, 3)
    assert records[-1]["fallback"]


def test_mixing_identity_with_stored_iterates():
    # the mixed auxiliary matrix equals the blend of the mixed X history
    problem = _problem(10)
    form = core.RankConstrained(2)
    config = AndersonConfig(m=2, guarded=False)
    state = AndersonState(config.m)
    Y = np.zeros(problem.shape)
    X = np.zeros(problem.shape)
    x_history = []
    for i in range(30):
        x_history.append(X.copy())
        f_matrix = problem.blend(X)
        Y, X, state = accel.anderson_step(
            state, Y, X, f_matrix, config, problem, form
        )
        alpha = state.last_alpha
        if alpha is None:
            continue
        window = x_history[-len(alpha):]
        mix = sum(a * xj for a, xj in zip(alpha, window))
        assert np.abs(Y - problem.blend(mix)).max() < 1e-10


def test_guard_never_loses_to_plain_candidate():
    problem = _problem(11)
    form = core.NuclearNorm(0.5)
    config = AndersonConfig(m=3, guarded=True)
    records = _drive(problem, form, config, 30)
    for rec in records:
        if rec["plain_loss"] is not None:
            assert rec["loss"] <= rec["plain_loss"] + 1e-12


def test_anderson_beats_baseline_at_equal_budget():
    problem = _problem(12)
    form = core.RankConstrained(2)
    config = AndersonConfig(m=2, guarded=True)
    records = _drive(problem, form, config, 30)
    X = np.zeros(problem.shape)
    for _ in range(30):
        X = core.svd_truncate(problem.blend(X), 2)
    baseline_loss = core.weighted_loss(problem, X, form)
    assert records[-1]["loss"] <= baseline_loss + 1e-12


def test_emitted_coefficients_sum_to_one():
    problem = _problem(13)
    form = core.RankConstrained(2)
    for gamma in (0.0, 0.5):
        config = AndersonConfig(m=3, gamma=gamma, guarded=False)
        records = _drive(problem, form, config, 25)
        seen = 0
        for rec in records:
            if rec["alpha"] is not None:
                seen += 1
                assert abs(rec["alpha"].sum() - 1.0) < 1e-12
        assert seen > 10


def test_delay_postpones_mixing():
    problem = _problem(14)
    form = core.RankConstrained(2)
    config = AndersonConfig(m=2, guarded=False, delay=5)
    records = _drive(problem, form, config, 8)
    for rec in records[:5]:
        assert rec["alpha"] is None and rec["fallback"]
    assert any(rec["alpha"] is not None for rec in records[5:])
