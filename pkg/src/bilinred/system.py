"""Bilinear control systems and their preprocessing transforms.

A bilinear system in standard form is

    x' = A x + sum_k (N_k x + b_k) u_k,    y = C x + D,

with zero initial state. The transforms in this module bring a purely
bilinear system ``x' = A x + sum_k u_k N_k x`` with a marginally stable
`A` into that form: shift to a stationary state, elimination of the
conserved direction (or a discount shift of `A`) and a rescaling of the
controls. Every transform returns a new system and appends a record to
its provenance so that the chain can be replayed from the original.
"""

import dataclasses
import logging
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    BadDimension,
    InputError,
    NonSimpleNull,
    NoNullVector,
    NotPurelyBilinear,
    NotStabilizing,
    RowSumViolation,
)
from .linalg import SchurFactor, as_dense, eig_sparse_smallest

log = logging.getLogger(__name__)

ROWSUM_RTOL = 1e-10
NULL_RTOL = 1e-10
NULL_GAP = 1e3
DENSE_EIG_MAX = 3000


class LowRankUpdate:
    """Matrix ``base + U V*`` kept in factored form.

    Used for the projected coefficients, where `base` is a sparse block of
    the original matrix and ``U V*`` is a rank-one correction. Supports
    products with vectors and dense matrices without densifying.
    """

    __array_ufunc__ = None  # make ndarray @ self defer to __rmatmul__

    def __init__(self, base, U, V):
        self.base = base
        self.U = np.atleast_2d(np.asarray(U).reshape(base.shape[0], -1))
        self.V = np.atleast_2d(np.asarray(V).reshape(base.shape[1], -1))
        self.shape = base.shape
        self.ndim = 2
        self.dtype = np.result_type(base.dtype, self.U.dtype, self.V.dtype)

    def __matmul__(self, x):
        x = np.asarray(x)
        return self.base @ x + self.U @ (self.V.conj().T @ x)

    def __rmatmul__(self, x):
        x = np.asarray(x)
        return x @ self.base + (x @ self.U) @ self.V.conj().T

    def __truediv__(self, c):
        return LowRankUpdate(self.base / c, self.U / c, self.V)

    def __neg__(self):
        return LowRankUpdate(-self.base, -self.U, self.V)

    def toarray(self):
        return as_dense(self.base) + self.U @ self.V.conj().T

    def conj_transpose(self):
        return LowRankUpdate(self.base.conj().T, self.V, self.U)

    def shifted(self, alpha):
        """Return ``self - alpha I`` in factored form."""
        base = self.base - alpha * sp.identity(self.shape[0], format="csr") \
            if sp.issparse(self.base) else self.base - alpha * np.eye(self.shape[0])
        return LowRankUpdate(base, self.U, self.V)

    def __repr__(self):
        return f"LowRankUpdate(shape={self.shape}, rank={self.U.shape[1]})"


def _matrix(M):
    if sp.issparse(M):
        return sp.csr_matrix(M)
    if isinstance(M, LowRankUpdate):
        return M
    return np.asarray(M)


def matrix_norm_inf(M):
    """Infinity norm for dense, sparse or low-rank-updated matrices."""
    if sp.issparse(M):
        return float(spla.norm(M, np.inf)) if M.nnz else 0.0
    if isinstance(M, LowRankUpdate):
        return float(np.max(np.abs(M.toarray()).sum(axis=1))) if M.shape[0] <= DENSE_EIG_MAX \
            else matrix_norm_inf(M.base) + float(np.max(np.abs(M.U).sum(1)) * np.abs(M.V).sum())
    return float(np.linalg.norm(M, np.inf)) if np.size(M) else 0.0


def _norm1(M):
    if sp.issparse(M):
        return float(spla.norm(M, 1)) if M.nnz else 0.0
    return float(np.linalg.norm(as_dense(M), 1)) if np.size(M) else 0.0


def _finite(M):
    if sp.issparse(M):
        return bool(np.all(np.isfinite(M.data)))
    if isinstance(M, LowRankUpdate):
        return _finite(M.base) and _finite(M.U) and _finite(M.V)
    return bool(np.all(np.isfinite(M)))


def _is_complex_matrix(M):
    return np.issubdtype(M.dtype, np.complexfloating)


@dataclasses.dataclass(frozen=True, eq=False)
class BilinearSystem:
    """Bilinear system ``x' = A x + sum_k (N_k x + b_k) u_k``, ``y = C x + D``.

    Parameters
    ----------
    A : (n, n) array, sparse matrix or LowRankUpdate
    N : sequence of m matrices of shape (n, n)
    B : (n, m) array, optional
        Columns ``b_k``; zero for a purely bilinear system.
    C : (l, n) array
    D : (l,) array, optional
        Constant output offset.
    provenance : tuple of dict
        Transforms applied since `origin`, oldest first.
    origin : BilinearSystem, optional
        The system the provenance chain starts from.
    """

    A: object
    N: tuple
    B: np.ndarray = None
    C: np.ndarray = None
    D: np.ndarray = None
    provenance: tuple = ()
    origin: object = None
    name: str = ""

    def __post_init__(self):
        A = _matrix(self.A)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise BadDimension(f"A must be square, got shape {A.shape}")
        n = A.shape[0]
        N = tuple(_matrix(Nk) for Nk in self.N)
        for k, Nk in enumerate(N):
            if Nk.shape != (n, n):
                raise BadDimension(f"N[{k}] has shape {Nk.shape}, expected {(n, n)}")
        m = len(N)
        B = np.zeros((n, m)) if self.B is None else np.asarray(self.B)
        if B.ndim == 1:
            B = B.reshape(n, -1)
        if B.shape != (n, m):
            raise BadDimension(f"B has shape {B.shape}, expected {(n, m)}")
        C = np.zeros((0, n)) if self.C is None else np.atleast_2d(np.asarray(self.C))
        if C.shape[1] != n:
            raise BadDimension(f"C has {C.shape[1]} columns, expected {n}")
        D = np.zeros(C.shape[0]) if self.D is None else np.asarray(self.D).reshape(-1)
        if D.shape != (C.shape[0],):
            raise BadDimension(f"D has shape {D.shape}, expected {(C.shape[0],)}")
        for name, M in [("A", A), ("B", B), ("C", C), ("D", D)] + [
                (f"N[{k}]", Nk) for k, Nk in enumerate(N)]:
            if not _finite(M):
                raise InputError(f"{name} has non-finite entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "provenance", tuple(self.provenance))

    # -- shape and metadata ---------------------------------------------------
    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return len(self.N)

    @property
    def l(self):
        return self.C.shape[0]

    @property
    def field(self):
        mats = [self.A, *self.N, self.B, self.C, self.D]
        return "complex" if any(_is_complex_matrix(M) for M in mats) else "real"

    @property
    def is_purely_bilinear(self):
        return not np.any(self.B)

    @property
    def _history(self):
        return self.provenance

    @property
    def eta(self):
        """Product of all control scalings applied so far."""
        return float(np.prod([p["eta"] for p in self._history if p["op"] == "scale_controls"]))

    @property
    def alpha(self):
        """Sum of all discount shifts applied so far."""
        return float(sum(p["alpha"] for p in self._history if p["op"] == "discount_shift"))

    @property
    def stabilization(self):
        ops = [p["op"] for p in self._history]
        if "project_out_null" in ops:
            return "project"
        if "discount_shift" in ops:
            return "shift"
        return "none"

    # -- dense views and spectra ----------------------------------------------
    def dense(self):
        """Dense copies ``(A, [N_k], B, C, D)``."""
        return as_dense(self.A), [as_dense(Nk) for Nk in self.N], self.B, self.C, self.D

    @cached_property
    def schur(self):
        """Schur factor of `A` (computed once per system)."""
        return SchurFactor(as_dense(self.A))

    def eigenvalues(self):
        if self.n <= DENSE_EIG_MAX:
            return sla.eigvals(as_dense(self.A))
        raise BadDimension(f"dense spectrum requested for n = {self.n} > {DENSE_EIG_MAX}")

    def spectral_abscissa(self):
        if "schur" in self.__dict__ or self.n <= DENSE_EIG_MAX:
            return self.schur.spectral_abscissa()
        w = spla.eigs(self.A, k=6, which="LR", return_eigenvectors=False, maxiter=3000)
        return float(np.max(w.real))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def _derived(self, record, **changes):
        origin = self.origin if self.origin is not None else self
        return dataclasses.replace(self, provenance=self.provenance + (record,), origin=origin,
                                   **changes)


@dataclasses.dataclass(frozen=True, eq=False)
class ReducedModel(BilinearSystem):
    """Reduced bilinear system together with how it was obtained.

    `method` is one of ``"BT"``, ``"SP"`` or ``"H2"``; `parent` holds the
    provenance of the system that was reduced and `info` free-form run
    details such as the Hankel singular values kept. `basis` is an
    ``n x d`` trial basis with ``x ~ basis @ xh``, used to evaluate the
    reduction error in error coordinates.
    """

    method: str = "BT"
    parent: tuple = ()
    info: dict = dataclasses.field(default_factory=dict)
    basis: np.ndarray = None

    @property
    def d(self):
        return self.n

    @property
    def _history(self):
        # scaling and stabilization were applied to the parent
        return tuple(self.parent) + self.provenance


@dataclasses.dataclass(frozen=True)
class StationaryState:
    """Null vector of `A` with its residual and normalization."""

    x: np.ndarray
    residual: float
    normalization: str
    next_eigenvalue: complex = np.nan


def _sum_weights(weights, n):
    return np.ones(n) if weights is None else np.asarray(weights).reshape(-1)


def stationary_state(sys, weights=None, gap=NULL_GAP, rtol=NULL_RTOL):
    """Normalized null vector ``x_e`` of the system matrix.

    Parameters
    ----------
    sys : BilinearSystem
    weights : (n,) array, optional
        Linear functional fixing the scale, ``weights @ x_e = 1``. Defaults
        to the plain sum. If the functional vanishes on the null vector the
        vector is normalized to unit 2-norm instead.
    gap : float
        The second smallest eigenvalue magnitude must exceed ``gap`` times
        the residual of the first.

    Raises
    ------
    NoNullVector
        If the smallest eigenvalue magnitude exceeds ``rtol * ||A||``.
    NonSimpleNull
        If a second eigenvalue lies within the gap tolerance of 0.
    """
    A = sys.A
    n = sys.n
    nrm = _norm1(A) or 1.0
    if n == 1:
        w = np.array([as_dense(A)[0, 0]])
        V = np.ones((1, 1))
    elif sp.issparse(A) and n > 200:
        w, V = eig_sparse_smallest(A, k=2, shift=0.0, return_vectors=True)
    else:
        w, V = sla.eig(as_dense(A))
        order = np.argsort(np.abs(w))
        w, V = w[order], V[:, order]
    v = V[:, 0]
    if not _is_complex_matrix(A) and np.max(np.abs(v.imag)) <= 1e-8 * np.max(np.abs(v)):
        v = v.real
    resid = np.linalg.norm(A @ v) / np.linalg.norm(v)
    if abs(w[0]) > rtol * nrm or resid > rtol * nrm:
        raise NoNullVector(f"smallest eigenvalue {w[0]:.3e} is not zero (||A|| = {nrm:.3e})")
    nxt = w[1] if len(w) > 1 else np.inf
    if abs(nxt) <= gap * max(resid, abs(w[0]), np.finfo(float).eps * nrm):
        raise NonSimpleNull(f"null eigenvalue is not simple (next eigenvalue {nxt:.3e})")
    wts = _sum_weights(weights, n)
    s = wts @ v
    if abs(s) > 1e-12 * np.linalg.norm(v) * np.linalg.norm(wts):
        x, tag = v / s, "sum" if weights is None else "weights"
    else:
        x, tag = v / np.linalg.norm(v), "2-norm"
    if np.iscomplexobj(x) and np.max(np.abs(x.imag)) == 0:
        x = x.real
    return StationaryState(x=x, residual=float(np.linalg.norm(A @ x)), normalization=tag,
                           next_eigenvalue=complex(nxt))


def _check_stationary(sys, x_e, rtol=NULL_RTOL):
    x_e = np.asarray(x_e).reshape(-1)
    if x_e.shape != (sys.n,):
        raise BadDimension(f"x_e has length {x_e.size}, expected {sys.n}")
    res = np.linalg.norm(sys.A @ x_e)
    if res > rtol * max(_norm1(sys.A), 1.0) * np.linalg.norm(x_e):
        raise InputError(f"x_e is not stationary: ||A x_e|| = {res:.3e}")
    return x_e


def shift_to_standard_form(sys, x_e):
    """Expand a purely bilinear system around its stationary state `x_e`.

    In the deviation ``x - x_e`` the system acquires input columns
    ``b_k = N_k x_e`` and the output offset ``D = C x_e``; the initial
    state of interest, ``x(0) = x_e``, becomes zero.

    Raises
    ------
    NotPurelyBilinear
        If `sys` already has a nonzero `B`.
    """
    if not sys.is_purely_bilinear:
        raise NotPurelyBilinear("shift_to_standard_form expects B = 0")
    x_e = _check_stationary(sys, x_e)
    B = np.column_stack([Nk @ x_e for Nk in sys.N]) if sys.m else np.zeros((sys.n, 0))
    record = {"op": "shift_to_standard_form", "x_e": x_e}
    return sys._derived(record, B=B, D=sys.D + sys.C @ x_e)


def _drop_index(M, p, n):
    keep = np.r_[0:p, p + 1:n]
    if sp.issparse(M):
        M = sp.csr_matrix(M)
        return M[keep][:, keep], np.asarray(M[keep][:, [p]].todense()).ravel()
    if isinstance(M, LowRankUpdate):
        raise InputError("project_out_null cannot be applied twice")
    M = np.asarray(M)
    return M[np.ix_(keep, keep)], M[keep, p]


def _functional_violation(w, M, scale):
    viol = np.abs(w.conj() @ M) if not sp.issparse(M) else np.abs(M.conj().T @ w)
    return float(np.max(viol)) / max(scale, 1e-300) if np.size(viol) else 0.0


def project_out_null(sys, x_e=None, functional=None, pivot=None, rtol=ROWSUM_RTOL):
    """Eliminate the conserved direction of a mass-preserving system.

    If ``w* A = w* N_k = 0`` for a functional `w` (the all-ones vector by
    default), the deviation from the stationary state stays in the
    hyperplane ``w* x = 0``. The coordinate `pivot` is eliminated there,
    ``x_p = -(w_{-p}* x_{-p}) / w_p``, which turns the marginally stable
    generator into a Hurwitz one of dimension ``n - 1``. The new
    coefficients are the original sparse blocks plus rank-one updates.

    Parameters
    ----------
    sys : BilinearSystem
        System in standard form (after `shift_to_standard_form`).
    x_e : array, optional
        Stationary state; checked for ``A x_e = 0`` when given.
    functional : (n,) array, optional
        Conserved functional `w`. Defaults to ones.
    pivot : int, optional
        Eliminated coordinate; defaults to the last index with ``w_p != 0``.

    Raises
    ------
    RowSumViolation
        If ``w* A``, ``w* N_k`` or ``w* B`` is not zero to
        ``rtol * ||A||_inf``; the maximal violation is attached.
    """
    n = sys.n
    w = np.ones(n) if functional is None else np.asarray(functional).reshape(-1)
    if w.shape != (n,):
        raise BadDimension(f"functional has length {w.size}, expected {n}")
    if x_e is not None:
        _check_stationary(sys, x_e)
    if pivot is None:
        pivot = int(np.flatnonzero(w)[-1])
    p = int(pivot)
    if w[p] == 0:
        raise InputError(f"functional vanishes at pivot {p}")
    scale = matrix_norm_inf(sys.A) * np.max(np.abs(w))
    viol = max([_functional_violation(w, sys.A, scale)]
               + [_functional_violation(w, Nk, scale) for Nk in sys.N]
               + [_functional_violation(w, sys.B, scale)])
    if viol > rtol:
        raise RowSumViolation(f"conservation violated: max |w* M| / ||A|| = {viol:.3e}", viol)
    keep = np.r_[0:p, p + 1:n]
    # w* x = 0 gives x_p = -c x_keep
    c = (w[keep] / w[p]).conj()

    def project(M):
        base, col = _drop_index(M, p, n)
        return LowRankUpdate(base, -col, c.conj()) if sp.issparse(M) else base - np.outer(col, c)

    A = project(sys.A)
    N = tuple(project(Nk) for Nk in sys.N)
    C = sys.C[:, keep] - np.outer(sys.C[:, p], c)
    record = {"op": "project_out_null", "functional": w, "pivot": p}
    return sys._derived(record, A=A, N=N, B=sys.B[keep], C=C)


def lift_state(z, functional, pivot):
    """Reinsert the eliminated coordinate: inverse of the projection on states.

    `z` may be a vector or a matrix whose rows are reduced coordinates.
    """
    w = np.asarray(functional).reshape(-1)
    p = int(pivot)
    keep = np.r_[0:p, p + 1:w.size]
    z = np.asarray(z)
    xp = -((w[keep] / w[p]).conj() @ z)
    return np.insert(z, p, xp, axis=0)


def _shift_matrix(M, alpha):
    if alpha == 0:
        return M
    if isinstance(M, LowRankUpdate):
        return M.shifted(alpha)
    if sp.issparse(M):
        return sp.csr_matrix(M - alpha * sp.identity(M.shape[0]))
    return M - alpha * np.eye(M.shape[0])


def default_alpha(sys):
    """Automatic discount, ``1e-3 * ||A||_1``."""
    return 1e-3 * _norm1(sys.A)


def discount_shift(sys, alpha=None, check=True):
    """Replace `A` by ``A - alpha I``.

    The shifted system describes outputs discounted by ``exp(-alpha t)``.
    With ``alpha=None`` the value of `default_alpha` is used.

    Raises
    ------
    NotStabilizing
        If ``A - alpha I`` still has an eigenvalue with nonnegative real part.
    """
    if alpha is None:
        alpha = default_alpha(sys)
    alpha = float(alpha)
    if alpha < 0:
        raise InputError("alpha must be nonnegative")
    if alpha == 0:
        return sys
    out = sys._derived({"op": "discount_shift", "alpha": alpha}, A=_shift_matrix(sys.A, alpha))
    if check:
        a = out.spectral_abscissa()
        if a >= 0:
            raise NotStabilizing(f"A - alpha I is not Hurwitz (abscissa {a:.3e})")
    return out


def scale_controls(sys, eta):
    """Rescale the controls, ``N_k -> N_k / eta`` and ``B -> B / eta``.

    Driving the scaled system with ``eta * u`` reproduces the original
    trajectory; only the Gramians change.
    """
    eta = float(eta)
    if not eta >= 1:
        raise InputError(f"eta must be >= 1, got {eta}")
    if eta == 1:
        return sys
    N = tuple(Nk / eta for Nk in sys.N)
    return sys._derived({"op": "scale_controls", "eta": eta}, N=N, B=sys.B / eta)


_REPLAY = {
    "shift_to_standard_form": lambda s, r: shift_to_standard_form(s, r["x_e"]),
    "project_out_null": lambda s, r: project_out_null(s, functional=r["functional"],
                                                      pivot=r["pivot"]),
    "discount_shift": lambda s, r: discount_shift(s, r["alpha"], check=False),
    "scale_controls": lambda s, r: scale_controls(s, r["eta"]),
}


def replay(sys):
    """Re-apply the provenance chain of `sys` to its origin."""
    out = sys.origin if sys.origin is not None else sys
    for record in sys.provenance:
        out = _REPLAY[record["op"]](out, record)
    return out


# -- stability certificate ------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class StabilityCertificate:
    """Exponential-envelope constants and the fixed-point contraction test.

    Two envelope pairs ``||exp(A t)|| <= lam * exp(-mu t)`` are reported:
    the bare spectral pair ``(1, -abscissa)``, valid for normal `A`, and a
    certified pair from the Lyapunov function ``x* L x`` with
    ``A* L + L A + I = 0``. `passes` uses the certified pair, or the
    spectral one when `A` is normal. The input bound `M` is given in both
    readings ``(mu/lam) sum||N_k||`` and ``mu / (lam sum||N_k||)``.
    """

    abscissa: float
    is_normal: bool
    lam_spectral: float
    mu_spectral: float
    lam_certified: float
    mu_certified: float
    norms_N: tuple
    contraction_spectral: float
    contraction_certified: float
    passes: bool
    M_product: float
    M_quotient: float

    @property
    def contraction(self):
        if self.is_normal:
            return min(self.contraction_spectral, self.contraction_certified)
        return self.contraction_certified


def _norm2(M):
    if M.shape[0] <= 400:
        return float(np.linalg.norm(as_dense(M), 2))
    if isinstance(M, LowRankUpdate):
        op = spla.LinearOperator(M.shape, matvec=lambda x: M @ x,
                                 rmatvec=lambda x: M.conj_transpose() @ x, dtype=M.dtype)
        return float(spla.svds(op, k=1, return_singular_vectors=False)[0])
    return float(spla.svds(M, k=1, return_singular_vectors=False)[0])


def check_assumption1(sys):
    """Evaluate the exponential-stability/contraction certificate of `sys`.

    Failure is reported through ``passes``; nothing is raised.
    """
    A = as_dense(sys.A)
    n = sys.n
    norms = tuple(_norm2(Nk) for Nk in sys.N)
    s2 = sum(x ** 2 for x in norms)
    s1 = sum(norms)
    a = sys.spectral_abscissa()
    nrmA = np.linalg.norm(A, 1) if n else 0.0
    normal = bool(np.linalg.norm(A @ A.conj().T - A.conj().T @ A) <= 1e-10 * max(nrmA, 1.0) ** 2)
    mu_s = -a
    if a >= 0:
        return StabilityCertificate(a, normal, 1.0, mu_s, np.inf, 0.0, norms, np.inf, np.inf,
                                    False, 0.0, 0.0)
    L = sys.schur.solve_lyapunov(np.eye(n), adjoint=True)
    ev = np.linalg.eigvalsh(L)
    lam_c = float(np.sqrt(ev[-1] / ev[0])) if ev[0] > 0 else np.inf
    mu_c = float(1.0 / (2 * ev[-1]))
    c_spec = s2 / (2 * mu_s)
    c_cert = lam_c ** 2 * s2 / (2 * mu_c)
    passes = c_cert < 1 or (normal and c_spec < 1)
    lam, mu = (1.0, mu_s) if normal else (lam_c, mu_c)
    M_prod = mu / lam * s1
    M_quot = mu / (lam * s1) if s1 > 0 else np.inf
    return StabilityCertificate(a, normal, 1.0, mu_s, lam_c, mu_c, norms, c_spec, c_cert,
                                bool(passes), M_prod, M_quot)
