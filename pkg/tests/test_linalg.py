import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from bilinred.errors import Indefinite, NonHurwitz, SpectraOverlap, TooLarge
from bilinred.linalg import (
    SchurFactor,
    cholesky_psd,
    eig_dense,
    eig_sparse_smallest,
    kron_oracle_generalized_lyapunov,
    kron_oracle_generalized_sylvester,
    solve_lyapunov_dense,
    solve_sylvester_dense,
    solve_triangular_sylvester,
    svd,
)

from conftest import random_stable, rel


def brute_lyapunov(A, W):
    n = A.shape[0]
    K = np.kron(np.eye(n), A) + np.kron(A.conj(), np.eye(n))
    return np.linalg.solve(K, -W.reshape(-1, order="F")).reshape((n, n), order="F")


def test_lyapunov_identity():
    X = solve_lyapunov_dense(-np.eye(2), 2 * np.eye(2))
    np.testing.assert_allclose(X, np.eye(2), atol=1e-14)


def test_lyapunov_diagonal_closed_form():
    X = solve_lyapunov_dense(np.diag([-1.0, -2.0]), np.ones((2, 2)))
    np.testing.assert_allclose(X, [[0.5, 1 / 3], [1 / 3, 0.25]], atol=1e-14)


@pytest.mark.parametrize("complex_", [False, True])
def test_lyapunov_random_vs_vectorized(rng, complex_):
    A = random_stable(rng, 8, complex_)
    B = rng.standard_normal((8, 2))
    W = B @ B.T
    X = solve_lyapunov_dense(A, W)
    assert rel(X, brute_lyapunov(A, W)) <= 1e-10
    assert rel(X, kron_oracle_generalized_lyapunov(A, [], W)) <= 1e-10


def test_lyapunov_rejects_unstable():
    with pytest.raises(NonHurwitz):
        solve_lyapunov_dense(np.diag([-1.0, 0.5]), np.eye(2))


def test_sylvester_identity():
    M = np.arange(6.0).reshape(3, 2)
    X = solve_sylvester_dense(-np.eye(3), -np.eye(2), 2 * M)
    np.testing.assert_allclose(X, M, atol=1e-14)


def test_sylvester_elementwise():
    X = solve_sylvester_dense(np.diag([-1.0, -2.0]), np.diag([-3.0]), np.ones((2, 1)))
    np.testing.assert_allclose(X, [[0.25], [0.2]], atol=1e-15)


def test_sylvester_random_vs_oracle(rng):
    A = random_stable(rng, 6)
    H = random_stable(rng, 4)
    W = rng.standard_normal((6, 4))
    X = solve_sylvester_dense(A, H, W)
    assert rel(X, kron_oracle_generalized_sylvester(A, [], H, [], W)) <= 1e-10


def test_sylvester_overlap():
    with pytest.raises(SpectraOverlap):
        solve_sylvester_dense(np.diag([-1.0, 2.0]), np.diag([1.0]), np.ones((2, 1)))


def test_triangular_sylvester_blocked(rng):
    # sizes above the block size exercise the recursive splitting
    for cplx in (False, True):
        A = random_stable(rng, 150, cplx)
        H = random_stable(rng, 90, cplx)
        sa, sh = SchurFactor(A), SchurFactor(H)
        F = rng.standard_normal((150, 90))
        Y = solve_triangular_sylvester(sa.T, sh.T, F, adjoint2=True)
        assert np.linalg.norm(sa.T @ Y + Y @ sh.T.conj().T - F) <= 1e-10 * np.linalg.norm(F)
        Y = solve_triangular_sylvester(sa.T, sh.T, F, adjoint1=True)
        assert np.linalg.norm(sa.T.conj().T @ Y + Y @ sh.T - F) <= 1e-10 * np.linalg.norm(F)


def test_oracle_trivial():
    P = kron_oracle_generalized_lyapunov(-np.eye(2), [np.eye(2)], np.diag([1.0, 0.0]))
    np.testing.assert_allclose(P, np.diag([1.0, 0.0]), atol=1e-14)


def test_oracle_empty_matches_direct(rng):
    A = random_stable(rng, 5)
    W = np.eye(5)
    assert rel(kron_oracle_generalized_lyapunov(A, [], W), solve_lyapunov_dense(A, W)) <= 1e-12


def test_oracle_guard():
    with pytest.raises(TooLarge):
        kron_oracle_generalized_lyapunov(-np.eye(65), [], np.eye(65))


def test_cholesky_identity_and_diag():
    S = cholesky_psd(np.eye(3))
    np.testing.assert_allclose(S.conj().T @ S, np.eye(3), atol=1e-15)
    S = cholesky_psd(np.diag([4.0, 1.0]))
    np.testing.assert_allclose(np.sort(np.abs(S).sum(axis=0)), [1.0, 2.0], atol=1e-15)
    np.testing.assert_allclose(S.T @ S, np.diag([4.0, 1.0]), atol=1e-15)


def test_cholesky_rank_one(rng):
    v = rng.standard_normal(6)
    M = np.outer(v, v)
    S = cholesky_psd(M)
    assert S.shape[0] == 1
    assert np.linalg.norm(S.T @ S - M) <= 1e-12


def test_cholesky_complex(rng):
    G = rng.standard_normal((5, 3)) + 1j * rng.standard_normal((5, 3))
    M = G @ G.conj().T
    S = cholesky_psd(M)
    assert S.shape[0] == 3
    assert np.linalg.norm(S.conj().T @ S - M) <= 1e-12 * np.linalg.norm(M)


def test_cholesky_indefinite():
    with pytest.raises(Indefinite):
        cholesky_psd(np.diag([1.0, -0.5]))


def test_svd_and_eig():
    _, s, _ = svd(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(s, [3.0, 1.0])
    _, s, _ = svd(np.diag([1.0, 3.0]))
    np.testing.assert_allclose(s, [3.0, 1.0])


def test_eig_shift(rng):
    A = rng.standard_normal((6, 6))
    a = np.sort_complex(eig_dense(A - 0.3 * np.eye(6)))
    b = np.sort_complex(eig_dense(A) - 0.3)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_eig_sparse_smallest_diag():
    d = -np.arange(1.0, 501.0)
    w = eig_sparse_smallest(sp.diags(d), 5)
    np.testing.assert_allclose(w, d[:5], atol=1e-10)


def test_eig_sparse_singular_shift():
    # exactly singular at the shift: 1D Neumann Laplacian
    n = 300
    L = sp.diags([np.ones(n - 1), np.r_[-1, -2 * np.ones(n - 2), -1], np.ones(n - 1)], [-1, 0, 1])
    w = eig_sparse_smallest(L, 4)
    exact = -4 * np.sin(np.pi * np.arange(4) / (2 * n)) ** 2
    np.testing.assert_allclose(w, exact, atol=1e-10)


@settings(max_examples=100, deadline=None)
@given(n=st.integers(2, 32), seed=st.integers(0, 2 ** 32 - 1), cplx=st.booleans())
def test_lyapunov_residual_and_psd(n, seed, cplx):
    rng = np.random.default_rng(seed)
    A = random_stable(rng, n, cplx, margin=0.1 + rng.uniform())
    B = rng.standard_normal((n, 2))
    W = B @ B.T
    X = solve_lyapunov_dense(A, W)
    res = np.linalg.norm(A @ X + X @ A.conj().T + W)
    assert res <= 1e-10 * (np.linalg.norm(A) * np.linalg.norm(X) + np.linalg.norm(W)) * max(1, n / 10)
    assert np.allclose(X, X.conj().T)
    assert np.linalg.eigvalsh(X).min() >= -1e-10 * np.linalg.norm(X, 2)
