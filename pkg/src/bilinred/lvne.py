"""Dissipative Liouville-von Neumann (Lindblad) benchmark.

The density matrix of a q-level system evolves as

    rho' = -i [H0 - F(t) mu, rho]
           + sum_{i != j} G[i, j] (|i><j| rho |j><i| - {|j><j|, rho} / 2),

where ``G[i, j]`` is the rate of the transition ``j -> i``. Vectorized
with the populations ``rho_ii`` first and the coherences ``rho_ij``
(``i != j``, row-major) after them, this is a bilinear system
``x' = A x + F N x`` with ``N x = vec(i [mu, rho])``. The population
block of `A` is the classical rate matrix and the coherence block is
diagonal.

The bundled level scheme comes from a one-dimensional asymmetric double
well (see `double_well_levels`); rates follow a dipole-weighted model
with detailed balance at temperature ``theta``.
"""

import dataclasses
import json
from importlib import resources

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConfigInvalid
from .system import BilinearSystem

CLASS_NAMES = ("left", "right", "delocalized")


def double_well_levels(q=21, mass=161.25, barrier=1.075, asymmetry=0.05, half_width=2.6,
                       points=1200):
    """Lowest `q` levels of ``V(x) = barrier (x^2 - 1)^2 + asymmetry x``.

    The Hamiltonian ``-1/(2 mass) d^2/dx^2 + V`` is discretized by second
    order finite differences on ``[-half_width, half_width]``. States
    below the top of the barrier are classified by the sign of their mean
    position (left/right), the others as delocalized.

    Returns
    -------
    energies : (q,) array
    position : (q, q) array
        Matrix elements ``<i|x|j>``.
    classes : dict
        Index lists for ``"left"``, ``"right"`` and ``"delocalized"``.
    """
    x = np.linspace(-half_width, half_width, points)
    h = x[1] - x[0]
    V = barrier * (x ** 2 - 1) ** 2 + asymmetry * x
    t = 0.5 / (mass * h * h)
    E, psi = sla.eigh_tridiagonal(V + 2 * t, np.full(points - 1, -t), select="i",
                                  select_range=(0, q - 1))
    # fix the sign convention of each eigenvector for reproducible data
    psi = psi * np.sign(psi[np.argmax(np.abs(psi), axis=0), np.arange(q)])
    X = psi.T @ (x[:, None] * psi)
    centre = np.abs(x) < 0.5
    top = V[centre].max()
    mean = np.diag(X)
    cls = np.where(E > top, 2, np.where(mean < 0, 0, 1))
    classes = {name: np.flatnonzero(cls == k).tolist() for k, name in enumerate(CLASS_NAMES)}
    return E, 0.5 * (X + X.T), classes


DIPOLE_SCALE = 0.8


def double_well_data(dipole_scale=DIPOLE_SCALE, **params):
    """Level scheme in the layout of the bundled data file.

    The dipole is ``dipole_scale`` times the position matrix; `params`
    are passed to `double_well_levels`.
    """
    defaults = dict(q=21, mass=161.25, barrier=1.075, asymmetry=0.05, half_width=2.6,
                    points=1200)
    defaults.update(params)
    E, X, classes = double_well_levels(**defaults)
    desc = (f"Lowest {defaults['q']} levels of V(x) = {defaults['barrier']} (x^2 - 1)^2 + "
            f"{defaults['asymmetry']} x, mass {defaults['mass']}; "
            f"dipole = {dipole_scale} <i|x|j>")
    return {"description": desc, "generator": {**defaults, "dipole_scale": dipole_scale},
            "energies": E.tolist(), "dipole": (dipole_scale * X).tolist(), "classes": classes}


def default_data():
    """The bundled level scheme (energies, dipole matrix, classes)."""
    text = resources.files("bilinred.data").joinpath("double_well.json").read_text()
    return json.loads(text)


def _positive_float(key, value):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigInvalid(f"{key}: expected a number, got {value!r}") from None
    if not value > 0:
        raise ConfigInvalid(f"{key}: must be positive, got {value}")
    return value


@dataclasses.dataclass(frozen=True, eq=False)
class LvneConfig:
    """Level scheme, dissipation and temperature.

    Parameters
    ----------
    energies : (q,) array, nondecreasing
    dipole : (q, q) Hermitian array
    classes : dict
        Partition of ``range(q)`` into ``"left"``, ``"right"`` and
        ``"delocalized"``.
    gamma : float
        Rate of the reference downward transition `reference` (``2 -> 0``).
    theta : float
        Temperature (Boltzmann constant 1).
    rate_table : (q, q) array, optional
        Relative downward rates ``R[i, j]``, ``i < j``; defaults to
        ``|dipole[i, j]|**2``.
    """

    energies: np.ndarray
    dipole: np.ndarray
    classes: dict
    gamma: float = 0.1
    theta: float = 0.1
    rate_table: np.ndarray = None
    reference: tuple = (0, 2)

    def __post_init__(self):
        E = np.asarray(self.energies, dtype=float).reshape(-1)
        mu = np.asarray(self.dipole)
        q = E.size
        object.__setattr__(self, "energies", E)
        object.__setattr__(self, "dipole", mu)
        if q < 2:
            raise ConfigInvalid("energies: need at least two levels")
        if np.any(np.diff(E) < 0):
            raise ConfigInvalid("energies: must be nondecreasing")
        if mu.shape != (q, q) or not np.allclose(mu, mu.conj().T, atol=1e-12):
            raise ConfigInvalid(f"dipole: must be a Hermitian {q}x{q} matrix")
        for key in ("gamma", "theta"):
            object.__setattr__(self, key, _positive_float(key, getattr(self, key)))
        idx = sorted(i for name in CLASS_NAMES for i in self.classes.get(name, []))
        if set(self.classes) - set(CLASS_NAMES) or idx != list(range(q)):
            raise ConfigInvalid(f"classes: must partition range({q}) into {CLASS_NAMES}")
        if self.rate_table is not None:
            R = np.asarray(self.rate_table, dtype=float)
            if R.shape != (q, q) or np.any(R < 0):
                raise ConfigInvalid("rate_table: must be a nonnegative q x q array")
        i, j = self.reference
        if not (0 <= i < j < q) or self._relative()[i, j] <= 0:
            raise ConfigInvalid(f"reference: transition {j} -> {i} must have a positive rate")

    @property
    def q(self):
        return self.energies.size

    @property
    def n(self):
        return self.q ** 2

    def _relative(self):
        if self.rate_table is not None:
            return np.asarray(self.rate_table, dtype=float)
        return np.abs(self.dipole) ** 2

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @classmethod
    def default(cls, **changes):
        data = default_data()
        return cls(energies=np.array(data["energies"]), dipole=np.array(data["dipole"]),
                   classes=data["classes"], **changes)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigInvalid(f"{sorted(unknown)[0]}: unknown field")
        base = default_data()
        for key in ("energies", "dipole", "classes"):
            data.setdefault(key, base[key])
        for key in ("energies", "dipole", "rate_table"):
            if data.get(key) is not None:
                data[key] = np.array(data[key])
        if "reference" in data:
            data["reference"] = tuple(data["reference"])
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(str(exc)) from exc

    def to_dict(self):
        return {"energies": self.energies.tolist(), "dipole": np.real(self.dipole).tolist(),
                "classes": self.classes, "gamma": self.gamma, "theta": self.theta,
                "rate_table": None if self.rate_table is None else
                np.asarray(self.rate_table).tolist(), "reference": list(self.reference)}


def lindblad_rates(cfg):
    """Rate matrix ``G[i, j]`` of the transition ``j -> i`` (zero diagonal).

    Downward rates (``i < j``) are the relative table scaled so that the
    reference transition has rate ``cfg.gamma``; upward rates follow from
    detailed balance, ``G[j, i] = exp(-(E_j - E_i) / theta) G[i, j]``.
    """
    R = np.triu(cfg._relative(), 1)
    i0, j0 = cfg.reference
    down = cfg.gamma * R / R[i0, j0]
    E = cfg.energies
    boltz = np.exp(-np.maximum(E[None, :] - E[:, None], 0.0) / cfg.theta)
    # boltz[i, j] = exp(-(E_j - E_i)/theta) for j > i
    up = (down * boltz).T
    return down + up


def index_map(q):
    """Vector position of ``rho[i, j]``: populations first, then coherences."""
    idx = np.empty((q, q), dtype=int)
    idx[np.arange(q), np.arange(q)] = np.arange(q)
    off = [(i, j) for i in range(q) for j in range(q) if i != j]
    for k, (i, j) in enumerate(off):
        idx[i, j] = q + k
    return idx


def vectorize(rho):
    """Density matrix to state vector."""
    rho = np.asarray(rho)
    q = rho.shape[0]
    idx = index_map(q)
    x = np.empty(q * q, dtype=complex)
    x[idx.ravel()] = rho.ravel()
    return x


def devectorize(x):
    """State vector to density matrix."""
    x = np.asarray(x)
    q = int(round(np.sqrt(x.size)))
    return x[index_map(q)]


def _superoperator(q, apply):
    # matrix of a linear map on q x q matrices, in the population-first order
    idx = index_map(q)
    rows, cols, vals = [], [], []
    for a in range(q):
        for b in range(q):
            E = np.zeros((q, q), dtype=complex)
            E[a, b] = 1.0
            out = apply(E)
            nz = np.nonzero(out)
            rows.extend(idx[nz])
            cols.extend([idx[a, b]] * len(nz[0]))
            vals.extend(out[nz])
    return sp.csr_matrix((vals, (rows, cols)), shape=(q * q, q * q))


@dataclasses.dataclass(eq=False)
class LvneAssembly:
    config: LvneConfig
    A: sp.csr_matrix
    N: tuple
    C: np.ndarray
    rates: np.ndarray
    index: np.ndarray

    def system(self):
        """Purely bilinear system ``x' = A x + F N x``, ``y = C x``."""
        return BilinearSystem(self.A, self.N, None, self.C, name="lvne")

    @property
    def trace_functional(self):
        """Functional returning the trace (sum of populations)."""
        w = np.zeros(self.config.n)
        w[:self.config.q] = 1.0
        return w


def assemble_lvne(cfg=None):
    """Vectorized Lindblad generator `A`, dipole coupling `N` and observables `C`."""
    cfg = cfg or LvneConfig.default()
    q = cfg.q
    G = lindblad_rates(cfg)
    out_rate = G.sum(axis=0)  # total decay of level j
    E = cfg.energies
    mu = cfg.dipole
    idx = index_map(q)
    rows, cols, vals = [], [], []
    # population block: rate matrix
    P = G - np.diag(out_rate)
    r, c = np.nonzero(P)
    rows.extend(idx[r, r])
    cols.extend(idx[c, c])
    vals.extend(P[r, c])
    # coherence block: diagonal
    for i in range(q):
        for j in range(q):
            if i != j:
                rows.append(idx[i, j])
                cols.append(idx[i, j])
                vals.append(-1j * (E[i] - E[j]) - 0.5 * (out_rate[i] + out_rate[j]))
    A = sp.csr_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(q * q, q * q))
    N = _superoperator(q, lambda R: 1j * (mu @ R - R @ mu))
    return LvneAssembly(cfg, A, (N,), well_observables(cfg), G, idx)


def well_observables(cfg):
    """``3 x n`` matrix summing populations of the left, right and delocalized classes."""
    C = np.zeros((3, cfg.n))
    for k, name in enumerate(CLASS_NAMES):
        for i in cfg.classes[name]:
            C[k, i] = 1.0
    return C


def thermal_populations(cfg):
    """Boltzmann populations ``exp(-E_i / theta) / Z``."""
    w = np.exp(-(cfg.energies - cfg.energies[0]) / cfg.theta)
    return w / w.sum()
