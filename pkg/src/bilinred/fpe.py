"""Controlled Fokker-Planck benchmark on a two-dimensional grid.

The density ``rho(x, t)`` of overdamped Langevin dynamics in the
potential ``V`` with a constant force ``u`` obeys

    d rho / dt = div(beta^{-1} grad rho + rho grad V) - u . grad rho

on a rectangle with zero normal flux. The operator is discretized in
flux form on a node-centred grid: centred differences for the fluxes
between neighbouring nodes and no flux across the outer cell faces. The
discrete generator therefore has vanishing column sums, i.e. it
conserves ``sum(v) * h1 * h2`` exactly.

States are column-wise tensorized, ``v[i + j * n1] = w[i, j]`` with `i`
indexing the first coordinate.
"""

import dataclasses
import json
import logging

import numpy as np
import scipy.sparse as sp

from .errors import ConfigInvalid
from .system import BilinearSystem

log = logging.getLogger(__name__)


def potential_eval(x1, x2):
    """Periodically perturbed quadruple-well potential."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    return 0.01 * ((x1 - 0.1) ** 4 - 20 * x1 ** 2 + (x2 + 0.4) ** 4 - 20 * x2 ** 2
                   + 10 * np.sin(5 * x1) * np.cos(5 * x2) + x1 * x2 + 290.4)


def potential_gradient(x1, x2):
    """Analytic gradient ``(dV/dx1, dV/dx2)`` of `potential_eval`."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    g1 = 0.01 * (4 * (x1 - 0.1) ** 3 - 40 * x1 + 50 * np.cos(5 * x1) * np.cos(5 * x2) + x2)
    g2 = 0.01 * (4 * (x2 + 0.4) ** 3 - 40 * x2 - 50 * np.sin(5 * x1) * np.sin(5 * x2) + x1)
    return g1, g2


def _zero(x1, x2):
    return np.zeros(np.broadcast(x1, x2).shape)


def _zero_gradient(x1, x2):
    z = _zero(x1, x2)
    return z, z


POTENTIALS = {
    "quadruple_well": (potential_eval, potential_gradient),
    "flat": (_zero, _zero_gradient),
}


@dataclasses.dataclass(frozen=True)
class FpeConfig:
    """Grid and physics parameters.

    The grid has ``round(width / h) + 1`` nodes per axis, boundary nodes
    included; the actual spacing is ``width / (nodes - 1)``.
    """

    domain: tuple = (-6.0, 6.0, -5.5, 6.5)
    h: tuple = (0.25, 0.25)
    beta: float = 4.0
    potential: str = "quadruple_well"

    def __post_init__(self):
        try:
            h = self.h if np.ndim(self.h) else (self.h, self.h)
            object.__setattr__(self, "h", tuple(float(x) for x in h))
        except (TypeError, ValueError):
            raise ConfigInvalid(f"h: expected one or two numbers, got {self.h!r}") from None
        try:
            object.__setattr__(self, "domain", tuple(float(x) for x in self.domain))
        except (TypeError, ValueError):
            raise ConfigInvalid(f"domain: expected four numbers, got {self.domain!r}") from None
        try:
            object.__setattr__(self, "beta", float(self.beta))
        except (TypeError, ValueError):
            raise ConfigInvalid(f"beta: expected a number, got {self.beta!r}") from None
        a, b, c, d = self.domain
        if len(self.domain) != 4 or not (b > a and d > c):
            raise ConfigInvalid(f"domain: need a < b and c < d, got {self.domain}")
        if len(self.h) != 2 or min(self.h) <= 0:
            raise ConfigInvalid(f"h: mesh sizes must be positive, got {self.h}")
        if min(self.shape) < 5:
            raise ConfigInvalid(f"h: grid needs at least 3 interior nodes per axis, got {self.shape}")
        if not self.beta > 0:
            raise ConfigInvalid(f"beta: must be positive, got {self.beta}")
        if self.potential not in POTENTIALS:
            raise ConfigInvalid(f"potential: unknown {self.potential!r}")

    @property
    def shape(self):
        a, b, c, d = self.domain
        return (int(round((b - a) / self.h[0])) + 1, int(round((d - c) / self.h[1])) + 1)

    @property
    def n(self):
        n1, n2 = self.shape
        return n1 * n2

    def axes(self):
        a, b, c, d = self.domain
        n1, n2 = self.shape
        return np.linspace(a, b, n1), np.linspace(c, d, n2)

    @property
    def spacing(self):
        x1, x2 = self.axes()
        return x1[1] - x1[0], x2[1] - x2[0]

    @property
    def cell_area(self):
        h1, h2 = self.spacing
        return h1 * h2

    def grid(self):
        """Node coordinates ``(X1, X2)`` flattened in state order."""
        x1, x2 = self.axes()
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        return X1.ravel(order="F"), X2.ravel(order="F")

    def to_json(self):
        return json.dumps(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigInvalid(f"{sorted(unknown)[0]}: unknown field")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(str(exc)) from exc


@dataclasses.dataclass(eq=False)
class FpeAssembly:
    """Assembled generator, control couplings, observables and grid."""

    config: FpeConfig
    A: sp.csr_matrix
    N: tuple
    C: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    quality: dict

    def system(self):
        """The purely bilinear system ``v' = A v + sum u_k N_k v``, ``y = C v``."""
        return BilinearSystem(self.A, self.N, None, self.C, name="fpe")

    @property
    def mass_weights(self):
        """Functional giving the total probability ``sum v * h1 * h2``."""
        return np.full(self.config.n, self.config.cell_area)


def _laplacian_1d(n, h):
    main = np.full(n, -2.0)
    main[0] = main[-1] = -1.0
    return sp.diags([np.ones(n - 1), main, np.ones(n - 1)], [-1, 0, 1]) / h ** 2


def _flux_divergence_1d(n, h):
    # (D f)_i = (F_{i+1/2} - F_{i-1/2}) / h with F_{i+1/2} = (f_i + f_{i+1}) / 2
    # and zero flux through the outer faces
    main = np.zeros(n)
    main[0], main[-1] = 0.5, -0.5
    return sp.diags([-0.5 * np.ones(n - 1), main, 0.5 * np.ones(n - 1)], [-1, 0, 1]) / h


def assemble_fpe(cfg=None, check_quality=True):
    """Assemble the discrete Fokker-Planck generator.

    Returns
    -------
    FpeAssembly
        ``A`` discretizes ``beta^{-1} lap(rho) + div(rho grad V)``;
        ``N_k = -D_k`` with ``D_k`` the flux-form first difference along
        axis `k`, so that a positive ``u_k`` transports density towards
        increasing ``x_k``. `quality` records the checks of
        `spectral_quality` when `check_quality` is set.
    """
    cfg = cfg or FpeConfig()
    n1, n2 = cfg.shape
    h1, h2 = cfg.spacing
    X1, X2 = cfg.grid()
    _, grad = POTENTIALS[cfg.potential]
    g1, g2 = grad(X1, X2)
    I1, I2 = sp.identity(n1), sp.identity(n2)
    L = sp.kron(I2, _laplacian_1d(n1, h1)) + sp.kron(_laplacian_1d(n2, h2), I1)
    D1 = sp.kron(I2, _flux_divergence_1d(n1, h1))
    D2 = sp.kron(_flux_divergence_1d(n2, h2), I1)
    A = (L / cfg.beta + D1 @ sp.diags(g1) + D2 @ sp.diags(g2)).tocsr()
    A.eliminate_zeros()
    N = (sp.csr_matrix(-D1), sp.csr_matrix(-D2))
    C = quadrant_observables(cfg)
    asm = FpeAssembly(cfg, A, N, C, X1, X2, {})
    if check_quality:
        asm.quality = spectral_quality(asm)
        if not asm.quality["ok"]:
            log.warning("FPE discretization fails the spectral quality check: %s",
                        asm.quality["reasons"])
    return asm


def quadrant_observables(cfg):
    """``4 x n`` matrix of quadrant probabilities (NE, NW, SW, SE).

    Row entries are the cell area on nodes of the quadrant; nodes with
    ``x1 >= 0`` count as east and nodes with ``x2 >= 0`` as north.
    """
    X1, X2 = cfg.grid()
    east, north = X1 >= 0, X2 >= 0
    masks = [east & north, ~east & north, ~east & ~north, east & ~north]
    return np.array(masks, dtype=float) * cfg.cell_area


QUADRANTS = ("NE", "NW", "SW", "SE")


def analytic_stationary_density(cfg, u0=(0.0, 0.0)):
    """Canonical density ``exp(-beta V_u)`` with ``V_u = V - u0 . x``.

    Normalized by the two-dimensional trapezoidal rule over the grid and
    returned in state order.
    """
    V, _ = POTENTIALS[cfg.potential]
    X1, X2 = cfg.grid()
    e = -cfg.beta * (V(X1, X2) - u0[0] * X1 - u0[1] * X2)
    rho = np.exp(e - e.max())
    n1, n2 = cfg.shape
    h1, h2 = cfg.spacing
    w1 = np.full(n1, h1)
    w1[[0, -1]] = h1 / 2
    w2 = np.full(n2, h2)
    w2[[0, -1]] = h2 / 2
    weights = np.kron(w2, w1)
    return rho / (weights @ rho)


def m_matrix_violation(A):
    """Most negative off-diagonal entry of ``A`` (0 if the sign pattern holds)."""
    A = sp.coo_matrix(A)
    off = A.data[A.row != A.col]
    return float(min(off.min(initial=0.0), 0.0))


def spectral_quality(asm, k=12, l1_max=0.1, imag_tol=1e-8):
    """Check the discretization against qualitative expectations.

    The stationary density must be close to the analytic one (L1 error at
    most `l1_max`) and the `k` dominant eigenvalues must be real and in
    the closed left half-plane, with the zero eigenvalue simple.
    """
    from .linalg import eig_sparse_smallest

    cfg = asm.config
    reasons = []
    k = min(k, cfg.n - 2)
    w, v = eig_sparse_smallest(asm.A, k, shift=0.0, return_vectors=True)
    w = np.asarray(w, dtype=complex)
    pi = np.real(v[:, 0])
    pi = pi / (pi.sum() * cfg.cell_area)
    mu = analytic_stationary_density(cfg)
    l1 = float(np.abs(pi - mu).sum() * cfg.cell_area)
    if l1 > l1_max:
        reasons.append(f"stationary density L1 error {l1:.3g} > {l1_max}")
    if np.max(np.abs(w.imag)) > imag_tol:
        reasons.append("dominant eigenvalues are not real")
    if np.max(w[1:].real) >= 0:
        reasons.append("nonzero eigenvalue with nonnegative real part")
    return {"ok": not reasons, "reasons": reasons, "eigenvalues": w, "l1_stationary": l1,
            "m_matrix_violation": m_matrix_violation(asm.A)}
