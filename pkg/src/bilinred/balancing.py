"""Balancing, balanced truncation and singular-perturbation reduction.

With ``P = Lp Lp*`` and ``Q = Lq Lq*`` and the SVD ``Lq* Lp = U S V*``,
the square-root method gives the balancing pair

    T = Lp V_r S_r^{-1/2},    Tinv = S_r^{-1/2} U_r* Lq*,

for which ``Tinv P Tinv* = T* Q T = diag(S_r)`` in the new coordinates
``z = Tinv x``. Balanced truncation keeps the leading block of the
balanced coefficients; the singular-perturbation variant eliminates the
weak states through a Schur complement of the fast block.
"""

import dataclasses
import logging

import numpy as np
import scipy.linalg as sla

from .errors import BadDimension, Indefinite, RankDeficientGramian, SingularFastBlock
from .linalg import as_dense, cholesky_psd, svd
from .system import BilinearSystem, ReducedModel

log = logging.getLogger(__name__)

HSV_DROP_RTOL = 1e-13
CLUSTER_RTOL = 1e-8


@dataclasses.dataclass(eq=False)
class BalancedRealization:
    """Balancing transformation and the balanced coefficients.

    Attributes
    ----------
    T, Tinv : arrays of shape (n, r) and (r, n)
        ``z = Tinv x`` and ``x = T z`` on the retained subspace.
    hsv : (r,) array
        Retained Hankel singular values, descending.
    hsv_all : array
        All singular values of ``Lq* Lp`` before dropping.
    system : BilinearSystem
        The balanced system ``(Tinv A T, Tinv N_k T, Tinv B, C T, D)``.
    source : BilinearSystem
        The system that was balanced.
    n_dropped : int
        Number of states discarded as numerically unreachable/unobservable.
    """

    T: np.ndarray
    Tinv: np.ndarray
    hsv: np.ndarray
    hsv_all: np.ndarray
    system: BilinearSystem
    source: BilinearSystem
    n_dropped: int

    @property
    def r(self):
        return self.hsv.size


PIVOT_LADDER = (1e-24, 1e-20, 1e-16, 1e-12, None)


def gramian_factor(M):
    """Square-root factor ``S`` with ``S* S = M`` that keeps weak directions.

    Pivots are kept down to ``1e-24`` of the largest diagonal entry, so
    that the Hankel singular value cutoff, not the factorization, decides
    which states are dropped. When the Gramian carries roundoff at a
    higher level, small pivots are noise and the factor no longer
    reproduces it; the threshold is then coarsened step by step, ending
    at the rank-revealing default of `cholesky_psd`.
    """
    for i, rtol in enumerate(PIVOT_LADDER):
        try:
            return cholesky_psd(M, pivot_rtol=rtol)
        except Indefinite:
            if i == len(PIVOT_LADDER) - 1:
                raise
            log.info("Gramian factor: pivot threshold %.0e too small, coarsening", rtol)


def compute_balancing(sys, P, Q, drop_rtol=HSV_DROP_RTOL, strict=False):
    """Balance `sys` given its Gramians.

    Parameters
    ----------
    sys : BilinearSystem
    P, Q : arrays
        Controllability and observability Gramians.
    drop_rtol : float
        Hankel singular values at or below ``drop_rtol * hsv[0]`` are
        discarded before ``S^{-1/2}`` is formed.
    strict : bool
        Raise instead of dropping.

    Raises
    ------
    RankDeficientGramian
        If no state survives, or with `strict` if any would be dropped.
    """
    Sp = gramian_factor(P)
    Sq = gramian_factor(Q)
    # Sp* Sp = P, so Lp = Sp*; likewise Lq = Sq*
    U, s, V = svd(Sq @ Sp.conj().T)
    if s.size == 0 or s[0] <= 0:
        raise RankDeficientGramian("Gramian product is zero", rank=0)
    keep = s > drop_rtol * s[0]
    r = int(np.count_nonzero(keep))
    dropped = sys.n - r
    if strict and dropped:
        raise RankDeficientGramian(f"numerical rank {r} < {sys.n}", rank=r)
    if dropped:
        log.info("balancing: dropped %d of %d states (hsv <= %.1e * hsv[0])", dropped, sys.n,
                 drop_rtol)
    w = 1.0 / np.sqrt(s[:r])
    T = Sp.conj().T @ (V[:, :r] * w)
    Tinv = (U[:, :r] * w).conj().T @ Sq
    Ab = Tinv @ (sys.A @ T)
    Nb = [Tinv @ (Nk @ T) for Nk in sys.N]
    bal = BilinearSystem(Ab, Nb, Tinv @ sys.B, sys.C @ T, sys.D, name=sys.name)
    return BalancedRealization(T, Tinv, s[:r].copy(), s, bal, sys, dropped)


def _reduced(bal, d, method, A, N, B, C, **info):
    src = bal.source
    return ReducedModel(A, N, B, C, bal.system.D, name=src.name, method=method,
                        parent=src.provenance, basis=bal.T[:, :d],
                        info={"d": d, "hsv": bal.hsv, "eta": src.eta, "alpha": src.alpha,
                              "stabilization": src.stabilization, **info})


def _check_order(bal, d):
    d = int(d)
    if not 1 <= d <= bal.r:
        raise BadDimension(f"reduced order must satisfy 1 <= d <= {bal.r}, got {d}")
    return d


def truncate_bt(bal, d):
    """Balanced truncation: the leading ``d x d`` block of the balanced system."""
    d = _check_order(bal, d)
    s = bal.system
    A, N, B, C, _ = s.dense()
    return _reduced(bal, d, "BT", A[:d, :d], [Nk[:d, :d] for Nk in N], B[:d], C[:, :d])


def reduce_sp(bal, d):
    """Singular-perturbation reduction by elimination of the fast block.

    ``Ah = A11 - A12 A22^{-1} A21``, ``Nh_k = N11 - N12 A22^{-1} A21``,
    ``Ch = C1 - C2 A22^{-1} A21`` and ``Bh = B1``, with ``A22^{-1}``
    applied through an LU factorization.

    Raises
    ------
    SingularFastBlock
        If ``A22`` is numerically singular.
    """
    d = _check_order(bal, d)
    s = bal.system
    A, N, B, C, _ = s.dense()
    if d == bal.r:
        return _reduced(bal, d, "SP", A, N, B, C)
    A22 = A[d:, d:]
    lu, piv = sla.lu_factor(A22, check_finite=False)
    rcond = np.min(np.abs(np.diag(lu))) / max(np.max(np.abs(np.diag(lu))), 1e-300)
    if rcond <= 1e3 * np.finfo(float).eps:
        raise SingularFastBlock(f"fast block is singular (pivot ratio {rcond:.2e})")
    K = sla.lu_solve((lu, piv), A[d:, :d], check_finite=False)
    Ah = A[:d, :d] - A[:d, d:] @ K
    Nh = [Nk[:d, :d] - Nk[:d, d:] @ K for Nk in N]
    Ch = C[:, :d] - C[:, d:] @ K
    return _reduced(bal, d, "SP", Ah, Nh, B[:d], Ch)


@dataclasses.dataclass
class StabilityReport:
    """Spectra of the blocks that must be Hurwitz for a clean HSV split."""

    d: int
    eig_A11: np.ndarray
    eig_A22: np.ndarray
    eig_schur: np.ndarray
    max_re_A11: float
    max_re_A22: float
    max_re_schur: float
    threshold: float
    hsv_gap_ratio: float
    cluster_warning: bool

    @property
    def stable(self):
        return max(self.max_re_A11, self.max_re_A22, self.max_re_schur) < self.threshold


def _max_re(w):
    return float(np.max(w.real)) if w.size else -np.inf


def verify_stability(bal, d, rtol=1e-12):
    """Check that ``A11``, ``A22`` and the Schur complement are Hurwitz.

    A block counts as stable when its largest real part is below
    ``-rtol * max(||A||_2, 1)``. The split is flagged as inside a cluster
    when ``hsv[d-1] - hsv[d] <= 1e-8 * hsv[0]``.
    """
    d = _check_order(bal, d)
    A = as_dense(bal.system.A)
    e11 = sla.eigvals(A[:d, :d])
    e22 = sla.eigvals(A[d:, d:]) if d < bal.r else np.zeros(0)
    if d < bal.r:
        try:
            S = A[:d, :d] - A[:d, d:] @ np.linalg.solve(A[d:, d:], A[d:, :d])
            es = sla.eigvals(S)
        except np.linalg.LinAlgError:
            es = np.array([np.inf])
    else:
        es = e11
    thr = -rtol * max(np.linalg.norm(A, 2), 1.0)
    hsv = bal.hsv
    if d < hsv.size:
        gap = hsv[d - 1] / hsv[d] if hsv[d] > 0 else np.inf
        cluster = bool(hsv[d - 1] - hsv[d] <= CLUSTER_RTOL * hsv[0])
    else:
        gap, cluster = np.inf, False
    return StabilityReport(d, e11, e22, es, _max_re(e11), _max_re(e22), _max_re(es), thr,
                           float(gap), cluster)


def suggest_order(hsv, threshold=1e-6):
    """Smallest ``d`` whose relative HSV tail ``sum_{i>d} s_i / sum s_i`` is <= threshold."""
    hsv = np.asarray(hsv, dtype=float)
    total = hsv.sum()
    if total <= 0:
        return 1
    tail = (total - np.cumsum(hsv)) / total
    return int(np.argmax(tail <= threshold) + 1)
