"""Dense and sparse linear-algebra kernels.

Bartels-Stewart type solvers for standard Lyapunov and Sylvester
equations, a Kronecker-product oracle for the generalized equations,
a pivoted Cholesky factorization for semidefinite matrices and thin
wrappers around the SVD and the (shift-invert) eigenvalue solvers.

Real input stays real: the real Schur form is used whenever every
coefficient is real, and the complex Schur form otherwise.
"""

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack

from .errors import (
    Indefinite,
    NoConvergence,
    NonHurwitz,
    SingularOperator,
    SingularSylvesterOperator,
    SpectraOverlap,
    TooLarge,
)

DEFAULT_RTOL = 1e-10
_BLOCK = 64


def is_complex(*arrays):
    return any(np.iscomplexobj(a) for a in arrays if a is not None)


def as_dense(M):
    """Return `M` as an ndarray (sparse matrices and operators are densified)."""
    if sp.issparse(M):
        return M.toarray()
    if hasattr(M, "toarray"):
        return M.toarray()
    return np.asarray(M)


def hermitian_part(X):
    return 0.5 * (X + X.conj().T)


# -- triangular Sylvester kernel ---------------------------------------------

def _split(T, k):
    # never cut a 2x2 block of a real quasi-triangular factor
    if k < T.shape[0] and T[k, k - 1] != 0:
        k += 1
    return k


def _trsyl(T1, op1, T2, op2, F):
    cplx = is_complex(T1, T2, F)
    dtype = np.complex128 if cplx else np.float64
    trsyl = lapack.ztrsyl if cplx else lapack.dtrsyl
    h = "C" if cplx else "T"
    X, scale, info = trsyl(
        np.asarray(T1, dtype=dtype), np.asarray(T2, dtype=dtype), np.asarray(F, dtype=dtype),
        trana=h if op1 else "N", tranb=h if op2 else "N",
    )
    if info < 0:
        raise ValueError(f"trsyl: illegal argument {-info}")
    if info == 1:
        raise SingularSylvesterOperator("Sylvester operator is (nearly) singular")
    return X / scale


def solve_triangular_sylvester(T1, T2, F, adjoint1=False, adjoint2=False):
    """Solve ``op1(T1) X + X op2(T2) = F`` for upper quasi-triangular T1, T2.

    ``op(T)`` is ``T`` or its conjugate transpose, selected by the
    ``adjoint`` flags. The problem is split recursively so that the bulk
    of the work is done in matrix products; blocks of size at most 64
    are handed to LAPACK ``trsyl``.
    """
    m, n = F.shape
    if m <= _BLOCK and n <= _BLOCK:
        return _trsyl(T1, adjoint1, T2, adjoint2, F)
    if m >= n:
        k = _split(T1, m // 2)
        if k >= m:
            return _trsyl(T1, adjoint1, T2, adjoint2, F)
        A11, A12, A22 = T1[:k, :k], T1[:k, k:], T1[k:, k:]
        if not adjoint1:
            X2 = solve_triangular_sylvester(A22, T2, F[k:], adjoint1, adjoint2)
            X1 = solve_triangular_sylvester(A11, T2, F[:k] - A12 @ X2, adjoint1, adjoint2)
        else:
            X1 = solve_triangular_sylvester(A11, T2, F[:k], adjoint1, adjoint2)
            X2 = solve_triangular_sylvester(A22, T2, F[k:] - A12.conj().T @ X1, adjoint1, adjoint2)
        return np.vstack([X1, X2])
    k = _split(T2, n // 2)
    if k >= n:
        return _trsyl(T1, adjoint1, T2, adjoint2, F)
    B11, B12, B22 = T2[:k, :k], T2[:k, k:], T2[k:, k:]
    if not adjoint2:
        X1 = solve_triangular_sylvester(T1, B11, F[:, :k], adjoint1, adjoint2)
        X2 = solve_triangular_sylvester(T1, B22, F[:, k:] - X1 @ B12, adjoint1, adjoint2)
    else:
        X2 = solve_triangular_sylvester(T1, B22, F[:, k:], adjoint1, adjoint2)
        X1 = solve_triangular_sylvester(T1, B11, F[:, :k] - X2 @ B12.conj().T, adjoint1, adjoint2)
    return np.hstack([X1, X2])


# -- Schur factor with reusable solves ------------------------------------------

class SchurFactor:
    """Schur decomposition ``A = U T U*`` kept for repeated solves.

    The real Schur form is used for real `A`; `complex_` forces the
    complex form.
    """

    def __init__(self, A, complex_=None):
        A = as_dense(A)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"square matrix expected, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ValueError("matrix has non-finite entries")
        if complex_ is None:
            complex_ = np.iscomplexobj(A)
        self.T, self.U = sla.schur(A, output="complex" if complex_ else "real")
        self.n = A.shape[0]
        self.norm = np.linalg.norm(A, 1) if self.n else 0.0

    @property
    def is_complex(self):
        return np.iscomplexobj(self.T)

    def eigenvalues(self):
        if self.is_complex:
            return np.diag(self.T).copy()
        return sla.eigvals(self.T)

    def spectral_abscissa(self):
        if self.n == 0:
            return -np.inf
        return float(np.max(self.eigenvalues().real))

    def reconstruct(self):
        return self.U @ self.T @ self.U.conj().T

    def require_hurwitz(self, what="A"):
        a = self.spectral_abscissa()
        if a >= 0:
            raise NonHurwitz(f"{what} is not Hurwitz (spectral abscissa {a:.3e})")
        if 2 * abs(a) <= 1e3 * np.finfo(float).eps * max(self.norm, 1.0):
            raise SingularSylvesterOperator(
                f"{what} has eigenvalues too close to the imaginary axis ({a:.3e})")

    def as_complex(self):
        if self.is_complex:
            return self
        out = object.__new__(SchurFactor)
        out.T, out.U = sla.rsf2csf(self.T, self.U)
        out.n, out.norm = self.n, self.norm
        return out

    def _pair(self, other, W):
        if self.is_complex or other.is_complex or is_complex(W):
            return self.as_complex(), other.as_complex()
        return self, other

    def solve_sylvester(self, other, W):
        """Solve ``A X + X H* + W = 0`` with ``H`` given by the factor `other`."""
        W = np.asarray(W)
        a, b = self._pair(other, W)
        F = -(a.U.conj().T @ W @ b.U)
        Y = solve_triangular_sylvester(a.T, b.T, F, adjoint2=True)
        return a.U @ Y @ b.U.conj().T

    def solve_adjoint_sylvester(self, other, W):
        """Solve ``A* X + X H + W = 0`` with ``H`` given by the factor `other`."""
        W = np.asarray(W)
        a, b = self._pair(other, W)
        F = -(a.U.conj().T @ W @ b.U)
        Y = solve_triangular_sylvester(a.T, b.T, F, adjoint1=True)
        return a.U @ Y @ b.U.conj().T

    def solve_lyapunov(self, W, adjoint=False):
        """Solve ``A X + X A* + W = 0`` (or ``A* X + X A + W = 0``)."""
        X = self.solve_adjoint_sylvester(self, W) if adjoint else self.solve_sylvester(self, W)
        return hermitian_part(X)


# -- standard equations -------------------------------------------------------------

def _check_square(name, M):
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")


def solve_lyapunov_dense(A, W, check_residual=True, rtol=DEFAULT_RTOL):
    """Solve ``A X + X A* + W = 0`` for Hurwitz `A` and Hermitian `W`.

    Raises
    ------
    NonHurwitz
        If `A` has an eigenvalue with nonnegative real part.
    SingularSylvesterOperator
        If ``lambda_i + conj(lambda_j)`` is numerically zero.
    """
    A = as_dense(A)
    W = np.asarray(W)
    _check_square("A", A)
    if W.shape != A.shape:
        raise ValueError(f"W has shape {W.shape}, expected {A.shape}")
    if np.linalg.norm(W - W.conj().T) > 1e-8 * max(np.linalg.norm(W), 1e-300):
        raise ValueError("W must be Hermitian")
    sf = SchurFactor(A, complex_=is_complex(A, W))
    sf.require_hurwitz()
    X = sf.solve_lyapunov(W)
    if check_residual:
        res = np.linalg.norm(A @ X + X @ A.conj().T + W)
        scale = np.linalg.norm(A) * np.linalg.norm(X) + np.linalg.norm(W)
        if res > rtol * max(scale, 1e-300) * max(1.0, A.shape[0] / 10):
            raise SingularSylvesterOperator(f"Lyapunov residual {res:.2e} too large")
    return X


def solve_sylvester_dense(A, H, W, rtol=DEFAULT_RTOL):
    """Solve ``A X + X H* + W = 0`` for `X`.

    Raises
    ------
    SpectraOverlap
        If the spectra of `A` and ``-H*`` (numerically) intersect.
    """
    A, H, W = as_dense(A), as_dense(H), np.asarray(W)
    _check_square("A", A)
    _check_square("H", H)
    if W.shape != (A.shape[0], H.shape[0]):
        raise ValueError(f"W has shape {W.shape}, expected {(A.shape[0], H.shape[0])}")
    cplx = is_complex(A, H, W)
    sa, sh = SchurFactor(A, cplx), SchurFactor(H, cplx)
    la, lh = sa.eigenvalues(), sh.eigenvalues()
    gap = np.min(np.abs(la[:, None] + lh.conj()[None, :])) if la.size and lh.size else np.inf
    scale = max(sa.norm, sh.norm, 1e-300)
    if gap <= 1e3 * np.finfo(float).eps * scale:
        raise SpectraOverlap(f"spectra of A and -H* overlap (gap {gap:.2e})")
    try:
        X = sa.solve_sylvester(sh, W)
    except SingularSylvesterOperator as exc:
        raise SpectraOverlap(str(exc)) from exc
    res = np.linalg.norm(A @ X + X @ H.conj().T + W)
    if res > rtol * max(scale * np.linalg.norm(X) + np.linalg.norm(W), 1e-300) * max(1.0, A.shape[0] / 10):
        raise SpectraOverlap(f"Sylvester residual {res:.2e} too large; spectra nearly overlap")
    return X


# -- Kronecker oracles -------------------------------------------------------------

ORACLE_MAX_N = 64


def kron_oracle_generalized_sylvester(A, N_list, Ah, Nh_list, W):
    """Brute-force solution of ``A X + X Ah* + sum N_k X Nh_k* + W = 0``.

    The equation is vectorized (column-major) into a dense linear system
    of size ``n*d``; used as an independent reference in tests.
    """
    A, Ah, W = as_dense(A), as_dense(Ah), np.asarray(W)
    n, d = A.shape[0], Ah.shape[0]
    if n * d > ORACLE_MAX_N ** 2:
        raise TooLarge(f"oracle limited to n*d <= {ORACLE_MAX_N ** 2}, got {n * d}")
    In, Id = np.eye(n), np.eye(d)
    K = np.kron(Id, A) + np.kron(Ah.conj(), In)
    for N, Nh in zip(N_list, Nh_list):
        K = K + np.kron(as_dense(Nh).conj(), as_dense(N))
    rhs = -W.reshape(-1, order="F")
    try:
        lu = sla.lu_factor(K)
    except (ValueError, sla.LinAlgError) as exc:
        raise SingularOperator(str(exc)) from exc
    if np.min(np.abs(np.diag(lu[0]))) <= 1e3 * np.finfo(float).eps * np.abs(K).max():
        raise SingularOperator("vectorized operator is singular")
    x = sla.lu_solve(lu, rhs)
    return x.reshape((n, d), order="F")


def kron_oracle_generalized_lyapunov(A, N_list, W):
    """Brute-force solution of ``A P + P A* + sum N_k P N_k* + W = 0`` (n <= 64)."""
    A = as_dense(A)
    if A.shape[0] > ORACLE_MAX_N:
        raise TooLarge(f"oracle limited to n <= {ORACLE_MAX_N}, got {A.shape[0]}")
    P = kron_oracle_generalized_sylvester(A, N_list, A, N_list, W)
    return hermitian_part(P) if np.allclose(W, np.asarray(W).conj().T) else P


# -- factorizations ---------------------------------------------------------------

def cholesky_psd(M, rtol=1e-12, indefinite_tol=1e-10, pivot_rtol=None):
    """Pivoted Cholesky factor of a Hermitian positive semidefinite matrix.

    Returns `S` with ``S* S = M``. `S` has ``rank`` rows, where the rank
    is revealed by diagonal pivoting: the factorization ends once the
    remaining pivots fall below `pivot_rtol` times the largest diagonal
    entry. The default ``max(rtol**2, n * eps)`` is the roundoff level of
    the Schur-complement pivots of a generic matrix; strongly graded
    matrices can carry accurate pivots far below it, which a smaller
    `pivot_rtol` keeps.

    Raises
    ------
    Indefinite
        If `M` has a negative eigenvalue below ``-indefinite_tol * ||M||``.
    """
    M = np.asarray(M)
    _check_square("M", M)
    n = M.shape[0]
    if n == 0:
        return np.zeros((0, 0), dtype=M.dtype)
    M = hermitian_part(M)
    dmax = float(np.max(np.real(np.diag(M))))
    nrm = np.linalg.norm(M, 2) if n <= 200 else np.linalg.norm(M)
    if dmax <= 0:
        if nrm == 0:
            return np.zeros((0, n), dtype=M.dtype)
        raise Indefinite("matrix has no positive diagonal entry")
    pstrf = lapack.zpstrf if np.iscomplexobj(M) else lapack.dpstrf
    if pivot_rtol is None:
        pivot_rtol = max(rtol ** 2, n * np.finfo(float).eps)
    c, piv, rank, info = pstrf(M, tol=pivot_rtol * dmax, lower=0)
    if info < 0:
        raise ValueError(f"pstrf: illegal argument {-info}")
    R = np.triu(c[:rank, :])
    S = np.zeros((rank, n), dtype=c.dtype)
    S[:, piv - 1] = R
    res = np.linalg.norm(S.conj().T @ S - M)
    if res > max(indefinite_tol * nrm, 1e3 * n * np.finfo(float).eps * nrm):
        raise Indefinite(f"matrix is not positive semidefinite (residual {res:.2e}, norm {nrm:.2e})")
    return S


def svd(M):
    """Thin SVD with singular values sorted descending."""
    U, s, Vh = sla.svd(as_dense(M), full_matrices=False, lapack_driver="gesdd")
    return U, s, Vh.conj().T


def eig_dense(M):
    """All eigenvalues of a dense matrix."""
    return sla.eigvals(as_dense(M))


def eig_sparse_smallest(M, k, shift=0.0, maxiter=300, tol=1e-10, return_vectors=False):
    """The `k` eigenvalues closest to `shift`, sorted by magnitude.

    Shift-invert Arnoldi (ARPACK) with a sparse LU factorization at the
    shift. When `M` is exactly singular at the shift, the shift is moved
    off the spectrum by a tiny relative amount.

    Raises
    ------
    NoConvergence
        If ARPACK hits the restart cap or the residuals are too large.
    """
    M = sp.csc_matrix(M) if not sp.issparse(M) else M.tocsc()
    n = M.shape[0]
    nrm = spla.norm(M, 1) if M.nnz else 0.0
    limit = tol * max(nrm, 1.0) * 1e2
    if k >= n - 1:
        w, v = sla.eig(M.toarray())
        order = np.argsort(np.abs(w - shift))[:k]
        w, v = w[order], v[:, order]
    else:
        # an exactly singular shift can give a useless factorization without
        # an error; retry slightly off the spectrum
        sigmas = [shift, shift - 1e-9 * max(nrm, 1.0), shift - 1e-7 * max(nrm, 1.0)]
        for attempt, sigma in enumerate(sigmas):
            try:
                w, v = spla.eigs(M, k=k, sigma=sigma, which="LM", maxiter=maxiter, tol=tol * 1e-2)
            except RuntimeError as exc:
                if "singular" not in str(exc).lower() or attempt == len(sigmas) - 1:
                    raise
                continue
            except spla.ArpackNoConvergence as exc:
                raise NoConvergence(f"ARPACK did not converge within {maxiter} restarts") from exc
            res = np.linalg.norm(M @ v - v * w, axis=0)
            if np.all(res <= limit):
                break
    order = np.argsort(np.abs(w))
    w, v = w[order], v[:, order]
    res = np.linalg.norm(M @ v - v * w, axis=0)
    if np.any(res > limit):
        raise NoConvergence(f"eigenpair residual {res.max():.2e} exceeds tolerance")
    if np.all(np.abs(w.imag) == 0):
        w = w.real
    return (w, v) if return_vectors else w
