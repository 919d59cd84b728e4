"""Generalized Lyapunov/Sylvester equations, H2 norms and H2 errors.

The generalized equations

    A X + X Ah* + sum_k N_k X Nh_k* + W = 0

are solved by the fixed-point iteration ``X_0 = 0``,
``A X_i + X_i Ah* = -(W + sum_k N_k X_{i-1} Nh_k*)``, each step being a
standard Sylvester solve with precomputed Schur factors of `A` and `Ah`.
The iteration converges when the linear operator
``X -> L^{-1}(sum N X Nh*)`` is a contraction, which is what the control
scaling ``eta`` is used to enforce.
"""

import dataclasses
import logging
import warnings
from functools import cached_property

import numpy as np

from .errors import NoConvergence, NumericalError
from .linalg import SchurFactor, as_dense, hermitian_part
from .system import LowRankUpdate

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 200
_EPS = np.finfo(float).eps


@dataclasses.dataclass
class SolveInfo:
    """Diagnostics of a generalized fixed-point solve."""

    iterations: int
    change: float
    residual: float
    converged: bool
    history: list


def _adj(M):
    if isinstance(M, LowRankUpdate):
        return M.conj_transpose()
    return M.conj().T


def _sandwich(N, X, Nh):
    """``N X Nh*`` for sparse, dense or factored `N`, `Nh`."""
    return N @ (Nh @ X.conj().T).conj().T


def _op_norm(M):
    # cheap upper bound on ||M||_2 used only to scale residual tolerances
    M = M if not isinstance(M, LowRankUpdate) else M.base
    if hasattr(M, "nnz"):
        absM = abs(M)
        return float(np.sqrt(absM.sum(axis=0).max() * absM.sum(axis=1).max())) if M.nnz else 0.0
    M = np.asarray(M)
    return float(np.sqrt(np.linalg.norm(M, 1) * np.linalg.norm(M, np.inf))) if M.size else 0.0


def _factor(M, schur):
    if schur is not None:
        return schur
    return SchurFactor(as_dense(M))


def generalized_residual(A, N_list, Ah, Nh_list, X, W, adjoint=False):
    """Frobenius norm of the residual of the generalized equation.

    ``A X + X Ah* + sum N X Nh* + W`` or, with `adjoint`,
    ``A* X + X Ah + sum N* X Nh + W``.
    """
    if adjoint:
        A, Ah = _adj(A), _adj(Ah)
        N_list = [_adj(N) for N in N_list]
        Nh_list = [_adj(N) for N in Nh_list]
    R = A @ X + (Ah @ X.conj().T).conj().T + W
    for N, Nh in zip(N_list, Nh_list):
        R = R + _sandwich(N, X, Nh)
    return float(np.linalg.norm(R))


def solve_generalized_sylvester(A, N_list, Ah, Nh_list, W, tol=DEFAULT_TOL,
                                max_iter=DEFAULT_MAX_ITER, adjoint=False, schur=None,
                                schur_h=None, full_output=False):
    """Solve the generalized Sylvester equation by fixed-point iteration.

    Solves ``A X + X Ah* + sum_k N_k X Nh_k* + W = 0``, or with
    ``adjoint=True`` the dual ``A* X + X Ah + sum_k N_k* X Nh_k + W = 0``.

    Parameters
    ----------
    A : (n, n) matrix (dense, sparse or factored)
    N_list : sequence of (n, n) matrices
    Ah : (d, d) matrix
    Nh_list : sequence of (d, d) matrices, same length as `N_list`
    W : (n, d) array
    tol : float
        Stop when ``||X_i - X_{i-1}||_F <= tol ||X_i||_F`` and the true
        residual is at most ``tol ||W||_F`` (or at roundoff level).
    schur, schur_h : SchurFactor, optional
        Precomputed Schur factors of `A` and `Ah`, reused across calls.
    full_output : bool
        Also return a `SolveInfo`.

    Raises
    ------
    NonHurwitz
        If `A` or `Ah` is not Hurwitz.
    NoConvergence
        If the iteration diverges or `max_iter` is reached.
    """
    W = np.asarray(W)
    if len(N_list) != len(Nh_list):
        raise ValueError("N_list and Nh_list must have equal length")
    sa, sh = _factor(A, schur), _factor(Ah, schur_h)
    sa.require_hurwitz("A")
    sh.require_hurwitz("Ah")
    if adjoint:
        solve = sa.solve_adjoint_sylvester
        Ns = [_adj(N) for N in N_list]
        Nhs = [_adj(N) for N in Nh_list]
    else:
        solve = sa.solve_sylvester
        Ns, Nhs = list(N_list), list(Nh_list)
    lyap = sh is sa and all(a is b for a, b in zip(N_list, Nh_list))
    nW = np.linalg.norm(W)
    if nW == 0:
        X = np.zeros(W.shape, dtype=np.result_type(W, sa.T, sh.T))
        info = SolveInfo(0, 0.0, 0.0, True, [])
        return (X, info) if full_output else X

    def step(F):
        X = solve(sh, F)
        return hermitian_part(X) if lyap else X

    X = step(W)
    history = []
    nrm_ops = sa.norm + sh.norm + sum(_op_norm(N) * _op_norm(Nh) for N, Nh in zip(N_list, Nh_list))
    change, res = np.inf, np.inf
    growth = 0
    for it in range(2, max_iter + 1):
        if not Ns:
            change = 0.0
        else:
            F = W
            for N, Nh in zip(Ns, Nhs):
                F = F + _sandwich(N, X, Nh)
            Xn = step(F)
            nx = np.linalg.norm(Xn)
            prev = change
            change = np.linalg.norm(Xn - X) / nx if nx > 0 else 0.0
            X = Xn
            history.append((it, change))
            log.debug("generalized solve: iteration %d, change %.3e", it, change)
            growth = growth + 1 if change > prev else 0
            if not np.isfinite(change) or (growth >= 3 and change > 1):
                raise NoConvergence(
                    f"fixed-point iteration diverges (change {change:.2e} at iteration {it}); "
                    "the bilinear terms are too strong, increase the control scaling")
        if change <= tol:
            res = generalized_residual(A, N_list, Ah, Nh_list, X, W, adjoint=adjoint)
            floor = 1e2 * _EPS * nrm_ops * np.linalg.norm(X)
            log.debug("generalized solve: residual %.3e (target %.3e)", res, max(tol * nW, floor))
            if res <= max(tol * nW, floor):
                info = SolveInfo(it if Ns else 1, change, res, True, history)
                return (X, info) if full_output else X
            if not Ns:
                raise NoConvergence(f"standard solve residual {res:.2e} exceeds tolerance")
    raise NoConvergence(f"no convergence in {max_iter} iterations (change {change:.2e})",
                        result=X)


def solve_generalized_lyapunov(A, N_list, W, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                               adjoint=False, schur=None, full_output=False):
    """Solve ``A P + P A* + sum_k N_k P N_k* + W = 0`` (or its adjoint form).

    With ``adjoint=True`` the observability form
    ``A* Q + Q A + sum_k N_k* Q N_k + W = 0`` is solved. See
    `solve_generalized_sylvester` for the parameters. The iterates are
    Hermitian and, for positive semidefinite `W`, increasing.
    """
    sa = _factor(A, schur)
    return solve_generalized_sylvester(A, N_list, A, N_list, W, tol=tol, max_iter=max_iter,
                                       adjoint=adjoint, schur=sa, schur_h=sa,
                                       full_output=full_output)


@dataclasses.dataclass
class GramianPair:
    """Controllability and observability Gramians with solver diagnostics."""

    P: np.ndarray
    Q: np.ndarray
    info_P: SolveInfo
    info_Q: SolveInfo


def gramians(sys, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Generalized Gramians ``P`` (from ``B B*``) and ``Q`` (from ``C* C``) of `sys`."""
    P, iP = solve_generalized_lyapunov(sys.A, sys.N, sys.B @ sys.B.conj().T, tol=tol,
                                       max_iter=max_iter, schur=sys.schur, full_output=True)
    Q, iQ = solve_generalized_lyapunov(sys.A, sys.N, sys.C.conj().T @ sys.C, tol=tol,
                                       max_iter=max_iter, adjoint=True, schur=sys.schur,
                                       full_output=True)
    log.info("gramians: n=%d, iterations P=%d Q=%d", sys.n, iP.iterations, iQ.iterations)
    return GramianPair(P, Q, iP, iQ)


def h2_norm(sys, gramian_pair=None, rtol=1e-6):
    """H2 norm ``sqrt(tr(C P C*))`` of `sys`.

    The dual value ``tr(B* Q B)`` is computed as well; the two must agree
    to `rtol`.
    """
    g = gramian_pair if gramian_pair is not None else gramians(sys)
    a = float(np.real(np.trace(sys.C @ g.P @ sys.C.conj().T)))
    b = float(np.real(np.trace(sys.B.conj().T @ g.Q @ sys.B)))
    if abs(a - b) > rtol * max(abs(a), abs(b), 1e-300):
        raise NumericalError(f"dual H2 traces disagree: tr(CPC*) = {a:.12e}, tr(B*QB) = {b:.12e}")
    return float(np.sqrt(max(a, 0.0)))


@dataclasses.dataclass
class H2Report:
    """Terms of ``||S - Sr||^2 = full - 2 cross + reduced``."""

    full: float
    cross: float
    reduced: float
    error_squared: float
    error: float
    cross_term: str = "X"
    clamped: bool = False

    @property
    def relative(self):
        return self.error / np.sqrt(self.full) if self.full > 0 else np.nan


class H2ErrorEvaluator:
    """H2 errors of reduced models against one full system.

    The Schur factor of `A` and the Gramian(s) of the full system are
    computed once and shared by all evaluations.
    """

    def __init__(self, sys, P=None, Q=None, tol=DEFAULT_TOL):
        self.sys = sys
        self.tol = tol
        if P is not None:
            self.__dict__["P"] = P
        if Q is not None:
            self.__dict__["Q"] = Q

    @cached_property
    def P(self):
        s = self.sys
        return solve_generalized_lyapunov(s.A, s.N, s.B @ s.B.conj().T, tol=self.tol,
                                          schur=s.schur)

    @cached_property
    def Q(self):
        s = self.sys
        return solve_generalized_lyapunov(s.A, s.N, s.C.conj().T @ s.C, tol=self.tol,
                                          adjoint=True, schur=s.schur)

    def error(self, red, cross="X"):
        """H2 error of `red` using the cross term from ``X`` (default) or ``Y``."""
        s = self.sys
        if red.m != s.m or red.l != s.l:
            raise ValueError("full and reduced systems differ in inputs or outputs")
        sh = SchurFactor(as_dense(red.A))
        Ah = as_dense(red.A)
        Nh = [as_dense(N) for N in red.N]
        if cross == "X":
            full = float(np.real(np.trace(s.C @ self.P @ s.C.conj().T)))
            X = solve_generalized_sylvester(s.A, s.N, Ah, Nh, s.B @ red.B.conj().T, tol=self.tol,
                                            schur=s.schur, schur_h=sh)
            Ph = solve_generalized_lyapunov(Ah, Nh, red.B @ red.B.conj().T, tol=self.tol,
                                            schur=sh)
            cr = float(np.real(np.trace(s.C @ X @ red.C.conj().T)))
            rd = float(np.real(np.trace(red.C @ Ph @ red.C.conj().T)))
        elif cross == "Y":
            full = float(np.real(np.trace(s.B.conj().T @ self.Q @ s.B)))
            Y = solve_generalized_sylvester(s.A, s.N, Ah, Nh, -(s.C.conj().T @ red.C),
                                            tol=self.tol, adjoint=True, schur=s.schur,
                                            schur_h=sh)
            Qh = solve_generalized_lyapunov(Ah, Nh, red.C.conj().T @ red.C, tol=self.tol,
                                            adjoint=True, schur=sh)
            cr = -float(np.real(np.trace(s.B.conj().T @ Y @ red.B)))
            rd = float(np.real(np.trace(red.B.conj().T @ Qh @ red.B)))
        else:
            raise ValueError(f"cross must be 'X' or 'Y', got {cross!r}")
        e2 = full - 2 * cr + rd
        clamped = e2 < 0
        if clamped:
            warnings.warn(f"H2 error squared is negative ({e2:.3e}); clamped to 0",
                          RuntimeWarning, stacklevel=2)
        return H2Report(full, cr, rd, e2, float(np.sqrt(max(e2, 0.0))), cross, bool(clamped))


def h2_error(sys, red, P=None, Q=None, cross="X", tol=DEFAULT_TOL):
    """H2 error of the reduced model `red` with respect to `sys`.

    Evaluated from ``tr(C P C*) - 2 tr(C X Ch*) + tr(Ch Ph Ch*)`` with
    ``A X + X Ah* + sum N X Nh* + B Bh* = 0``, or from the dual terms when
    ``cross="Y"``. The error system itself is never assembled.
    """
    return H2ErrorEvaluator(sys, P=P, Q=Q, tol=tol).error(red, cross=cross)


def h2_error_projected(sys, red, V=None, tol=1e-12):
    """H2 error computed in the error coordinates ``e = x - V xh``.

    For a reduced model obtained with a trial basis `V` the error system
    is block upper triangular in ``(e, xh)`` and its output is
    ``C e + (C V - Ch) xh``. The squared error is then a single
    positive semidefinite quadratic form, which avoids the cancellation
    of the three-term formula when the error is tiny. Any `V` gives the
    exact error; it defaults to ``red.basis``. Dense, intended as an
    independent check.
    """
    if V is None:
        V = getattr(red, "basis", None)
        if V is None:
            raise ValueError("reduced model carries no trial basis; pass V")
    A = as_dense(sys.A)
    N = [as_dense(Nk) for Nk in sys.N]
    Ah = as_dense(red.A)
    Nh = [as_dense(Nk) for Nk in red.N]
    V = np.asarray(V)
    n, d = V.shape
    Z = np.zeros((d, n))
    Ae = np.block([[A, A @ V - V @ Ah], [Z, Ah]])
    Ne = [np.block([[M, M @ V - V @ Mh], [Z, Mh]]) for M, Mh in zip(N, Nh)]
    Be = np.vstack([sys.B - V @ red.B, red.B])
    Ce = np.hstack([sys.C, sys.C @ V - red.C])
    Pe = solve_generalized_lyapunov(Ae, Ne, Be @ Be.conj().T, tol=tol)
    e2 = float(np.real(np.trace(Ce @ Pe @ Ce.conj().T)))
    return float(np.sqrt(max(e2, 0.0)))
