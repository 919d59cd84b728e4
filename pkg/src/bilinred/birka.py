"""Bilinear iterative rational Krylov algorithm (B-IRKA).

Starting from a reduced model ``(Ah, Nh_k, Bh, Ch)``, each step solves

    A X + X Ah* + sum_k N_k X Nh_k* + B Bh* = 0,
    A* Y + Y Ah + sum_k N_k* Y Nh_k - C* Ch = 0,

and projects the full system onto ``V = orth(X)``, ``W = orth(Y)``
(Petrov-Galerkin). Fixed points satisfy the first-order H2-optimality
(Wilson) conditions.
"""

import csv
import dataclasses
import logging
import typing
import warnings

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linear_sum_assignment

from .errors import BadDimension, IllConditionedProjector, UnstableIterate
from .gramians import DEFAULT_TOL, solve_generalized_lyapunov, solve_generalized_sylvester
from .linalg import SchurFactor, as_dense
from .system import ReducedModel

log = logging.getLogger(__name__)

COND_MAX = 1e12
DAMPING = 0.5
MAX_RETRIES = 5


@dataclasses.dataclass
class BirkaState:
    """Current iterate: reduced model, projection bases and history."""

    model: ReducedModel
    V: np.ndarray
    W: np.ndarray
    iteration: int = 0
    history: list = dataclasses.field(default_factory=list)


def _orth(X):
    Q, _ = np.linalg.qr(X)
    return Q


def petrov_galerkin(sys, V, W, iteration=0):
    """Reduced model ``((W*V)^{-1} W* A V, ..., (W*V)^{-1} W* B, C V)``.

    Raises
    ------
    IllConditionedProjector
        If ``cond(W* V) > 1e12``.
    """
    M = W.conj().T @ V
    c = np.linalg.cond(M)
    if not c <= COND_MAX:
        raise IllConditionedProjector(f"cond(W*V) = {c:.2e} exceeds {COND_MAX:.0e}")
    lu = sla.lu_factor(M)
    WH = W.conj().T

    def proj(Z):
        return sla.lu_solve(lu, WH @ Z)

    A = proj(sys.A @ V)
    N = [proj(Nk @ V) for Nk in sys.N]
    B = proj(sys.B)
    C = sys.C @ V
    return ReducedModel(A, N, B, C, sys.D, name=sys.name, method="H2", parent=sys.provenance,
                        basis=V,
                        info={"d": V.shape[1], "iteration": iteration, "eta": sys.eta,
                              "alpha": sys.alpha, "stabilization": sys.stabilization})


def _spectrum_change(old, new):
    # optimal matching so that reordering of nearby eigenvalues does not count
    cost = np.abs(old[:, None] - new[None, :])
    i, j = linear_sum_assignment(cost)
    scale = np.maximum(np.abs(old[i]), np.finfo(float).tiny)
    return float(np.max(cost[i, j] / scale))


def birka_step(sys, state, tol=DEFAULT_TOL):
    """One B-IRKA step with damping of unstable iterates.

    If the new reduced matrix is not Hurwitz, the step is retried with
    ``V <- orth(theta V_old + (1 - theta) V_new)`` (likewise for `W`),
    halving the weight of the new bases up to five times.

    Raises
    ------
    UnstableIterate
        If no damped step yields a Hurwitz reduced matrix.
    IllConditionedProjector
        If ``W* V`` is too ill-conditioned.
    """
    red = state.model
    Ah = as_dense(red.A)
    Nh = [as_dense(N) for N in red.N]
    sh = SchurFactor(Ah)
    sh.require_hurwitz("reduced A")
    X = solve_generalized_sylvester(sys.A, sys.N, Ah, Nh, sys.B @ red.B.conj().T, tol=tol,
                                    schur=sys.schur, schur_h=sh)
    Y = solve_generalized_sylvester(sys.A, sys.N, Ah, Nh, -(sys.C.conj().T @ red.C), tol=tol,
                                    adjoint=True, schur=sys.schur, schur_h=sh)
    Vn, Wn = _orth(X), _orth(Y)
    V, W = Vn, Wn
    theta = 1.0
    for attempt in range(MAX_RETRIES + 1):
        model = petrov_galerkin(sys, V, W, state.iteration + 1)
        ev = sla.eigvals(model.A)
        if np.max(ev.real) < 0:
            break
        if attempt == MAX_RETRIES:
            raise UnstableIterate(
                f"reduced matrix left the open left half-plane (max Re {np.max(ev.real):.3e})")
        theta *= DAMPING
        log.info("B-IRKA: unstable iterate, damping with weight %.3g", theta)
        V = _orth(theta * Vn + (1 - theta) * state.V)
        W = _orth(theta * Wn + (1 - theta) * state.W)
    change = _spectrum_change(sla.eigvals(Ah), ev)
    history = state.history + [{"iteration": state.iteration + 1, "change": change,
                                "damping": theta}]
    log.info("B-IRKA: iteration %d, spectrum change %.3e", state.iteration + 1, change)
    return BirkaState(model, V, W, state.iteration + 1, history)


def initial_state(sys, d, init="bt", balanced=None, seed=0):
    """Starting state for `birka_iterate`.

    Parameters
    ----------
    init : {"bt", "random"} or ReducedModel
        ``"bt"`` uses the balanced truncation of order `d` (the balancing
        may be passed in as `balanced`); ``"random"`` projects onto random
        orthonormal bases drawn with `seed`. A `ReducedModel` is used as
        given.
    """
    if isinstance(init, ReducedModel):
        n = sys.n
        return BirkaState(init, np.eye(n, init.n), np.eye(n, init.n))
    if init == "bt":
        from .balancing import compute_balancing, truncate_bt
        from .gramians import gramians

        if balanced is None:
            g = gramians(sys)
            balanced = compute_balancing(sys, g.P, g.Q)
        red = truncate_bt(balanced, d)
        V = _orth(balanced.T[:, :d])
        W = _orth(balanced.Tinv[:d].conj().T)
        return BirkaState(red, V, W)
    if init == "random":
        rng = np.random.default_rng(seed)
        shape = (sys.n, d)
        V = _orth(rng.standard_normal(shape))
        W = _orth(rng.standard_normal(shape))
        red = petrov_galerkin(sys, V, W)
        if np.max(sla.eigvals(red.A).real) >= 0:
            # one-sided projection is stable when A is dissipative
            red = petrov_galerkin(sys, V, V)
            W = V
        return BirkaState(red, V, W)
    raise ValueError(f"unknown init {init!r}")


class BirkaResult(typing.NamedTuple):
    model: ReducedModel
    wilson: "WilsonResiduals"
    history: list
    converged: bool


def birka_iterate(sys, d, init="bt", tol=1e-6, max_iter=100, balanced=None, seed=0,
                  solve_tol=DEFAULT_TOL, wilson=True):
    """Iterate B-IRKA until the reduced spectrum settles.

    Converged when the largest relative change of the (matched) reduced
    eigenvalues between consecutive iterates is at most `tol`. Without
    convergence the last iterate is returned with ``converged=False`` and
    a warning.

    Returns
    -------
    BirkaResult
        ``(model, wilson, history, converged)``; `wilson` is None when
        ``wilson=False``.
    """
    d = int(d)
    if not 1 <= d <= sys.n:
        raise BadDimension(f"reduced order must satisfy 1 <= d <= {sys.n}, got {d}")
    state = initial_state(sys, d, init=init, balanced=balanced, seed=seed)
    converged = False
    for _ in range(max_iter):
        state = birka_step(sys, state, tol=solve_tol)
        if state.history[-1]["change"] <= tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"B-IRKA did not converge in {max_iter} iterations "
                      f"(last change {state.history[-1]['change']:.2e})", RuntimeWarning,
                      stacklevel=2)
    model = dataclasses.replace(state.model, info={**state.model.info, "converged": converged,
                                                   "iterations": state.iteration})
    wr = wilson_residuals(sys, model, tol=solve_tol) if wilson else None
    return BirkaResult(model, wr, state.history, converged)


@dataclasses.dataclass
class WilsonResiduals:
    """Normalized residuals of the first-order H2-optimality conditions.

    ``A`` : ``Y* A X + Qh Ah Ph`` over ``||Qh|| ||Ah|| ||Ph||``;
    ``N`` : ``Y* N_k X + Qh Nh_k Ph`` (max over k), normalized alike;
    ``B`` : ``Y* B + Qh Bh`` over ``||Qh|| ||Bh||``;
    ``C`` : ``C X - Ch Ph`` over ``||Ch|| ||Ph||``;
    ``gram`` : ``Y* X + Qh Ph`` over ``||Qh|| ||Ph||``.
    """

    A: float
    N: float
    B: float
    C: float
    gram: float

    def max(self):
        return max(self.A, self.N, self.B, self.C, self.gram)


def _rel(M, scale):
    return float(np.linalg.norm(M, 2) / scale) if scale > 0 else float(np.linalg.norm(M, 2))


def wilson_residuals(sys, red, tol=DEFAULT_TOL):
    """Evaluate the Wilson conditions for the pair (`sys`, `red`)."""
    Ah = as_dense(red.A)
    Nh = [as_dense(N) for N in red.N]
    sh = SchurFactor(Ah)
    X = solve_generalized_sylvester(sys.A, sys.N, Ah, Nh, sys.B @ red.B.conj().T, tol=tol,
                                    schur=sys.schur, schur_h=sh)
    Y = solve_generalized_sylvester(sys.A, sys.N, Ah, Nh, -(sys.C.conj().T @ red.C), tol=tol,
                                    adjoint=True, schur=sys.schur, schur_h=sh)
    Ph = solve_generalized_lyapunov(Ah, Nh, red.B @ red.B.conj().T, tol=tol, schur=sh)
    Qh = solve_generalized_lyapunov(Ah, Nh, red.C.conj().T @ red.C, tol=tol, adjoint=True,
                                    schur=sh)
    YH = Y.conj().T
    nP, nQ = np.linalg.norm(Ph, 2), np.linalg.norm(Qh, 2)
    rA = _rel(YH @ (sys.A @ X) + Qh @ Ah @ Ph, nQ * np.linalg.norm(Ah, 2) * nP)
    rN = max([_rel(YH @ (N @ X) + Qh @ M @ Ph, nQ * np.linalg.norm(M, 2) * nP)
              for N, M in zip(sys.N, Nh)], default=0.0)
    rB = _rel(YH @ sys.B + Qh @ red.B, nQ * np.linalg.norm(red.B, 2))
    rC = _rel(sys.C @ X - red.C @ Ph, np.linalg.norm(red.C, 2) * nP)
    rG = _rel(YH @ X + Qh @ Ph, nQ * nP)
    return WilsonResiduals(rA, rN, rB, rC, rG)


def write_history(history, path):
    """Write the convergence history as CSV (iteration, change, damping[, h2_error])."""
    keys = ["iteration", "change", "damping"]
    if any("h2_error" in h for h in history):
        keys.append("h2_error")
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=keys, extrasaction="ignore")
        w.writeheader()
        for h in history:
            w.writerow(h)
