import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilinred.errors import NoConvergence, NonHurwitz
from bilinred.gramians import (H2ErrorEvaluator, generalized_residual, gramians, h2_error,
                               h2_error_projected, h2_norm, solve_generalized_lyapunov,
                               solve_generalized_sylvester)
from bilinred.linalg import (kron_oracle_generalized_lyapunov, kron_oracle_generalized_sylvester,
                             solve_lyapunov_dense, solve_sylvester_dense)
from bilinred.system import BilinearSystem, ReducedModel, scale_controls

from conftest import random_bilinear, random_stable, rel


def test_lyapunov_trivial():
    P = solve_generalized_lyapunov(-np.eye(2), [np.eye(2)], np.diag([1.0, 0.0]))
    np.testing.assert_allclose(P, np.diag([1.0, 0.0]), atol=1e-12)


def test_lyapunov_no_coupling(rng):
    A = random_stable(rng, 6)
    W = np.eye(6)
    assert rel(solve_generalized_lyapunov(A, [], W), solve_lyapunov_dense(A, W)) <= 1e-12


@pytest.mark.parametrize("complex_", [False, True])
def test_lyapunov_vs_oracle(rng, complex_):
    sys = random_bilinear(rng, 8, m=2, complex_=complex_, strength=0.5)
    W = sys.B @ sys.B.conj().T
    P = solve_generalized_lyapunov(sys.A, sys.N, W, tol=1e-12)
    assert rel(P, kron_oracle_generalized_lyapunov(sys.A, sys.N, W)) <= 1e-8
    Wq = sys.C.conj().T @ sys.C
    Q = solve_generalized_lyapunov(sys.A, sys.N, Wq, tol=1e-12, adjoint=True)
    At = sys.A.conj().T
    Nt = [N.conj().T for N in sys.N]
    assert rel(Q, kron_oracle_generalized_lyapunov(At, Nt, Wq)) <= 1e-8


def test_sylvester_self_pairing(rng):
    sys = random_bilinear(rng, 6)
    W = sys.B @ sys.B.T
    X = solve_generalized_sylvester(sys.A, sys.N, sys.A, sys.N, W, tol=1e-12)
    P = solve_generalized_lyapunov(sys.A, sys.N, W, tol=1e-12)
    assert rel(X, P) <= 1e-10


def test_sylvester_no_coupling(rng):
    A, H = random_stable(rng, 6), random_stable(rng, 3)
    W = rng.standard_normal((6, 3))
    X = solve_generalized_sylvester(A, [np.zeros((6, 6))], H, [np.zeros((3, 3))], W)
    assert rel(X, solve_sylvester_dense(A, H, W)) <= 1e-12


@pytest.mark.parametrize("complex_", [False, True])
def test_sylvester_vs_oracle(rng, complex_):
    sys = random_bilinear(rng, 8, m=2, complex_=complex_)
    red = random_bilinear(rng, 3, m=2, complex_=complex_)
    W = sys.B @ red.B.conj().T
    X = solve_generalized_sylvester(sys.A, sys.N, red.A, red.N, W, tol=1e-12)
    assert rel(X, kron_oracle_generalized_sylvester(sys.A, sys.N, red.A, red.N, W)) <= 1e-8
    assert generalized_residual(sys.A, sys.N, red.A, red.N, X, W) <= 1e-9 * np.linalg.norm(W)


def test_divergence_detected():
    A = -np.eye(3)
    N = [2.0 * np.eye(3)]
    with pytest.raises(NoConvergence):
        solve_generalized_lyapunov(A, N, np.eye(3), max_iter=50)


def test_non_hurwitz():
    with pytest.raises(NonHurwitz):
        solve_generalized_lyapunov(np.diag([1.0, -1.0]), [], np.eye(2))


def test_h2_norm_examples():
    sys = BilinearSystem(-np.eye(2), [np.eye(2)], np.array([[1.0], [0.0]]), np.array([[1.0, 0.0]]))
    assert h2_norm(sys) == pytest.approx(1.0, abs=1e-8)  # solver tol 1e-9, contraction 1/2
    assert h2_norm(sys.replace(C=np.zeros((1, 2)))) == 0.0


def test_h2_dual_identity(rng):
    for complex_ in (False, True):
        sys = random_bilinear(rng, 10, m=3, complex_=complex_)
        g = gramians(sys, tol=1e-12)
        a = np.trace(sys.C @ g.P @ sys.C.conj().T).real
        b = np.trace(sys.B.conj().T @ g.Q @ sys.B).real
        assert abs(a - b) <= 1e-8 * abs(a)


def _as_reduced(sys, **kw):
    A, N, B, C, D = sys.dense()
    return ReducedModel(A, N, B, C, D, **kw)


def test_h2_error_copy_and_zero(rng):
    sys = random_bilinear(rng, 6)
    nrm = h2_norm(sys)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rep = h2_error(sys, _as_reduced(sys), tol=1e-13)
    assert rep.error <= 1e-6 * nrm  # three-term cancellation limits this route to sqrt(eps)
    assert h2_error_projected(sys, _as_reduced(sys), V=np.eye(6)) <= 1e-8 * nrm
    zero = ReducedModel(-np.eye(2), [np.zeros((2, 2))] * 2, np.zeros((2, 2)), np.zeros((2, 2)))
    assert h2_error(sys, zero).error == pytest.approx(nrm, rel=1e-9)


def test_h2_error_cross_terms_agree(rng):
    sys = random_bilinear(rng, 8)
    red = random_bilinear(rng, 3)
    ev = H2ErrorEvaluator(sys, tol=1e-12)
    x, y = ev.error(red, cross="X"), ev.error(red, cross="Y")
    assert abs(x.error - y.error) <= 1e-6 * x.error


def test_h2_error_routes_agree(rng):
    # for a projected model both routes give the same error when it is not tiny
    sys = random_bilinear(rng, 8)
    V = np.linalg.qr(rng.standard_normal((8, 3)))[0]
    A, N, B, C, _ = sys.dense()
    red = ReducedModel(V.T @ A @ V, [V.T @ Nk @ V for Nk in N], V.T @ B, C @ V, basis=V)
    a = h2_error(sys, red, tol=1e-12).error
    b = h2_error_projected(sys, red)
    assert abs(a - b) <= 1e-7 * b


def test_h2_error_projected_basis_independent(rng):
    # any V gives the exact error, the basis only changes the coordinates
    sys = random_bilinear(rng, 7)
    red = random_bilinear(rng, 2)
    red = _as_reduced(red)
    e1 = h2_error_projected(sys, red, V=np.zeros((7, 2)))
    e2 = h2_error_projected(sys, red, V=rng.standard_normal((7, 2)))
    assert abs(e1 - e2) <= 1e-9 * e1


def test_iterates_monotone(rng):
    sys = random_bilinear(rng, 6, strength=0.6)
    W = sys.B @ sys.B.T
    P1 = solve_lyapunov_dense(sys.A, W)
    traces = [np.trace(P1)]
    P = P1
    for _ in range(15):
        F = W + sum(N @ P @ N.T for N in sys.N)
        P = solve_lyapunov_dense(sys.A, F)
        assert np.linalg.eigvalsh(P).min() >= -1e-12 * np.linalg.norm(P)
        traces.append(np.trace(P))
    assert np.all(np.diff(traces) >= -1e-12 * traces[-1])
    Pfull = solve_generalized_lyapunov(sys.A, sys.N, W, tol=1e-12)
    assert np.linalg.eigvalsh(Pfull - P1).min() >= -1e-10 * np.linalg.norm(Pfull)


def test_scaling_to_linear_limit(rng):
    sys = random_bilinear(rng, 6, strength=0.8)
    P_lin = solve_lyapunov_dense(sys.A, sys.B @ sys.B.T)
    s = scale_controls(sys, 1e6)
    P = solve_generalized_lyapunov(s.A, s.N, s.B @ s.B.T)
    # with B scaled too, compare the normalized Gramians
    assert rel(P * 1e12, P_lin) <= 1e-4


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 31), n=st.integers(2, 20), m=st.integers(1, 3),
       cplx=st.booleans())
def test_oracle_property(seed, n, m, cplx):
    rng = np.random.default_rng(seed)
    sys = random_bilinear(rng, n, m=m, complex_=cplx, strength=rng.uniform(0.05, 0.7))
    W = sys.B @ sys.B.conj().T
    P = solve_generalized_lyapunov(sys.A, sys.N, W, tol=1e-12)
    assert rel(P, kron_oracle_generalized_lyapunov(sys.A, sys.N, W)) <= 1e-8
