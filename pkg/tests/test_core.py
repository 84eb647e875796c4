import numpy as np
import pytest

from wlrma import core


def random_problem(seed, n=5, p=4, wmin=0.0):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, p))
    W = wmin + (1 - wmin) * rng.random((n, p))
    return core.WeightedProblem(M, W)


# ---------------------------------------------------------------------------
# problem validation
# ---------------------------------------------------------------------------

def test_weight_range_enforced():
    with pytest.raises(ValueError, match="weights"):
        core.WeightedProblem(np.zeros((2, 2)), [[0.5, 1.2], [0.0, 0.1]])
    with pytest.raises(ValueError, match="weights"):
        core.WeightedProblem(np.zeros((2, 2)), [[-0.1, 0.2], [0.0, 0.1]])


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="shape"):
        core.WeightedProblem(np.zeros((2, 3)), np.zeros((3, 2)))


def test_triplet_validation():
    with pytest.raises(ValueError, match="duplicate"):
        core.WeightedProblem.from_triplets([0, 0], [1, 1], [1.0, 2.0], (2, 2))
    with pytest.raises(ValueError, match="range"):
        core.WeightedProblem.from_triplets([0, 2], [1, 1], [1.0, 2.0], (2, 2))
    with pytest.raises(ValueError, match="weights"):
        core.WeightedProblem.from_triplets([0], [1], [1.0], (2, 2), weights=[0.0])


def test_to_dense_round_trip():
    prob = core.WeightedProblem.from_triplets(
        [0, 1, 2], [1, 0, 2], [5.0, -1.0, 2.5], (3, 3), weights=[1.0, 0.5, 0.25]
    )
    dense = prob.to_dense()
    assert dense.M[0, 1] == 5.0 and dense.W[0, 1] == 1.0
    assert dense.M[1, 0] == -1.0 and dense.W[1, 0] == 0.5
    assert dense.W[0, 0] == 0.0 and dense.M[0, 0] == 0.0
    assert prob.omega_size == 3


# ---------------------------------------------------------------------------
# weighted_loss
# ---------------------------------------------------------------------------

def test_loss_zero_at_exact_fit():
    prob = random_problem(0)
    assert core.weighted_loss(prob, prob.M, core.RankConstrained(2)) == 0.0


def test_loss_zero_weights_zero_penalty():
    prob = core.WeightedProblem(np.ones((3, 3)), np.zeros((3, 3)))
    X = np.arange(9.0).reshape(3, 3)
    assert core.weighted_loss(prob, X, core.NuclearNorm(0.0)) == 0.0


def test_loss_hand_computed_2x2():
    prob = core.WeightedProblem([[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.5], [0.5, 1.0]])
    loss = core.weighted_loss(prob, np.zeros((2, 2)), core.RankConstrained(1))
    assert loss == pytest.approx(2.0, abs=1e-14)


def test_loss_binary_weights_is_observed_sum():
    rng = np.random.default_rng(3)
    M = rng.standard_normal((6, 5))
    W = (rng.random((6, 5)) < 0.5).astype(float)
    prob = core.WeightedProblem(M, W)
    X = rng.standard_normal((6, 5))
    expected = sum(
        (M[i, j] - X[i, j]) ** 2
        for i in range(6) for j in range(5) if W[i, j] == 1.0
    )
    assert core.weighted_loss(prob, X, core.RankConstrained(2)) == pytest.approx(expected)


def test_loss_sparse_matches_dense():
    rng = np.random.default_rng(4)
    mask = rng.random((6, 5)) < 0.6
    rows, cols = np.nonzero(mask)
    vals = rng.standard_normal(len(rows))
    w = rng.random(len(rows)) * 0.9 + 0.1
    sparse = core.WeightedProblem.from_triplets(rows, cols, vals, (6, 5), w)
    dense = sparse.to_dense()
    X = rng.standard_normal((6, 5))
    for form in (core.RankConstrained(2), core.NuclearNorm(0.7)):
        assert core.weighted_loss(sparse, X, form) == pytest.approx(
            core.weighted_loss(dense, X, form), rel=1e-12
        )


# ---------------------------------------------------------------------------
# weighted_gradient
# ---------------------------------------------------------------------------

def test_gradient_zero_at_fit():
    prob = random_problem(1)
    g = core.weighted_gradient(prob, prob.M)
    assert np.all(g == 0.0)


def test_gradient_unit_weights_zero_target():
    X = np.arange(12.0).reshape(4, 3)
    prob = core.WeightedProblem(np.zeros((4, 3)), np.ones((4, 3)))
    assert np.allclose(core.weighted_gradient(prob, X), X)


def _fd_gradient(prob, X, h=1e-5):
    grad = np.zeros_like(X)
    for i in range(X.shape[0]):
        for j in range(X.shape[1]):
            Xp = X.copy(); Xp[i, j] += h
            Xm = X.copy(); Xm[i, j] -= h
            fp = 0.5 * prob.residual_sq(Xp)
            fm = 0.5 * prob.residual_sq(Xm)
            grad[i, j] = (fp - fm) / (2 * h)
    return grad


def test_gradient_matches_finite_differences():
    prob = random_problem(7)
    rng = np.random.default_rng(8)
    X = rng.standard_normal(prob.shape)
    g = core.weighted_gradient(prob, X)
    assert np.abs(g - _fd_gradient(prob, X)).max() < 1e-6


def test_gradient_sparse_support():
    prob = core.WeightedProblem.from_triplets(
        [0, 2], [1, 0], [3.0, -2.0], (3, 3), weights=[0.5, 1.0]
    )
    g = core.weighted_gradient(prob, np.zeros((3, 3)))
    dense = g.toarray()
    assert dense[0, 1] == pytest.approx(-0.5 * 3.0)
    assert dense[2, 0] == pytest.approx(-1.0 * -2.0)
    assert np.count_nonzero(dense) == 2


# ---------------------------------------------------------------------------
# svd_truncate
# ---------------------------------------------------------------------------

def test_truncate_rank1_identity():
    rng = np.random.default_rng(10)
    X = np.outer(rng.standard_normal(5), rng.standard_normal(4))
    assert np.abs(core.svd_truncate(X, 1) - X).max() < 1e-12


def test_truncate_full_rank_identity():
    rng = np.random.default_rng(11)
    X = rng.standard_normal((4, 3))
    assert np.abs(core.svd_truncate(X, 3) - X).max() < 1e-12
    assert np.abs(core.svd_truncate(X, 7) - X).max() < 1e-12


def _eig_svd(X):
    # independent SVD via the eigendecomposition of X^T X
    evals, V = np.linalg.eigh(X.T @ X)
    order = np.argsort(evals)[::-1]
    evals, V = evals[order], V[:, order]
    d = np.sqrt(np.maximum(evals, 0.0))
    U = np.zeros((X.shape[0], len(d)))
    for i, di in enumerate(d):
        if di > 1e-12:
            U[:, i] = X @ V[:, i] / di
    return U, d, V


def test_truncate_matches_eigendecomposition_oracle():
    rng = np.random.default_rng(12)
    X = rng.standard_normal((4, 3))
    U, d, V = _eig_svd(X)
    oracle = (U[:, :2] * d[:2]) @ V[:, :2].T
    ours = core.svd_truncate(X, 2)
    assert np.abs(ours - oracle).max() < 1e-8
    err_ours = np.linalg.norm(X - ours)
    err_oracle = np.linalg.norm(X - oracle)
    assert abs(err_ours - err_oracle) < 1e-10


def test_truncate_idempotent():
    rng = np.random.default_rng(13)
    for k in (1, 2, 3):
        X = rng.standard_normal((6, 5))
        once = core.svd_truncate(X, k)
        twice = core.svd_truncate(once, k)
        assert np.abs(once - twice).max() < 1e-10


def test_truncate_is_best_rank_k():
    rng = np.random.default_rng(14)
    X = rng.standard_normal((6, 5))
    k = 2
    best = np.linalg.norm(X - core.svd_truncate(X, k))
    for _ in range(100):
        A = rng.standard_normal((6, k))
        B = rng.standard_normal((5, k))
        assert best <= np.linalg.norm(X - A @ B.T) + 1e-12


# ---------------------------------------------------------------------------
# soft_threshold
# ---------------------------------------------------------------------------

def test_soft_threshold_zero_lambda():
    rng = np.random.default_rng(15)
    X = rng.standard_normal((4, 3))
    assert np.abs(core.soft_threshold(X, 0.0) - X).max() < 1e-12


def test_soft_threshold_kills_everything():
    rng = np.random.default_rng(16)
    X = rng.standard_normal((4, 3))
    top = core.singular_values(X)[0]
    assert np.all(core.soft_threshold(X, top + 1e-9) == 0.0)


def test_soft_threshold_at_second_singular_value():
    rng = np.random.default_rng(17)
    X = rng.standard_normal((4, 3))
    U, d, V = _eig_svd(X)
    lam = d[1]
    out = core.soft_threshold(X, lam)
    oracle = (U * np.maximum(d - lam, 0.0)) @ V.T
    assert np.abs(out - oracle).max() < 1e-10
    assert core.matrix_rank(out) == 1
    assert core.nuclear_norm(out) == pytest.approx(d[0] - d[1], abs=1e-10)


def test_soft_threshold_solves_prox_problem():
    rng = np.random.default_rng(18)
    X = rng.standard_normal((5, 4))
    lam = 0.8
    Z = core.soft_threshold(X, lam)
    obj = 0.5 * np.linalg.norm(X - Z) ** 2 + lam * core.nuclear_norm(Z)
    for _ in range(200):
        Zp = Z + 0.1 * rng.standard_normal(Z.shape)
        alt = 0.5 * np.linalg.norm(X - Zp) ** 2 + lam * core.nuclear_norm(Zp)
        assert obj <= alt + 1e-12


# ---------------------------------------------------------------------------
# nuclear_norm, rank
# ---------------------------------------------------------------------------

def test_nuclear_norm_zero_and_identity():
    assert core.nuclear_norm(np.zeros((3, 4))) == 0.0
    assert core.nuclear_norm(np.eye(5)) == pytest.approx(5.0, abs=1e-12)


def test_nuclear_norm_against_sqrt_gram_trace():
    rng = np.random.default_rng(19)
    X = rng.standard_normal((3, 3))
    evals = np.linalg.eigvalsh(X.T @ X)
    assert core.nuclear_norm(X) == pytest.approx(
        np.sqrt(np.maximum(evals, 0)).sum(), abs=1e-10
    )


def test_matrix_rank_threshold():
    X = np.diag([1.0, 1e-5, 1e-12])
    assert core.matrix_rank(X) == 2
    assert core.matrix_rank(np.zeros((3, 3))) == 0


def test_svd_sign_convention_deterministic():
    rng = np.random.default_rng(20)
    X = rng.standard_normal((6, 4))
    U1, d1, V1 = core.svd_factors(X)
    U2, d2, V2 = core.svd_factors(X.copy())
    assert np.array_equal(U1, U2) and np.array_equal(V1, V2)
    idx = np.abs(U1).argmax(axis=0)
    assert np.all(U1[idx, np.arange(U1.shape[1])] >= 0)
