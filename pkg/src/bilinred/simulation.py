"""Time integration of bilinear systems under prescribed controls.

The state equation ``x' = A x + sum_k u_k(t) (N_k x + b_k)`` is integrated
with an explicit embedded Runge-Kutta method (scipy's DOP853) and the
output ``y = C x + D`` is sampled on a caller grid. Systems that carry a
control scaling ``eta`` are driven with ``eta * u`` so that the user
always specifies the physical control.
"""

import csv
import dataclasses
import json
import math
import pathlib

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp

from .errors import BadDimension, GridMismatch, StepSizeUnderflow
from .linalg import as_dense, eig_sparse_smallest
from .system import BilinearSystem

DEFAULT_RTOL = 1e-8
DEFAULT_ATOL = 1e-10
DEFAULT_SAMPLES = 1000
FWHM_FACTOR = math.sqrt(8 * math.log(2))


@dataclasses.dataclass(frozen=True)
class ControlSignal:
    """Control ``u(t)`` with one callable per input channel.

    `pulse` records the Gaussian parameters ``(a, t0, tau)`` and the
    channel when the signal came from `gaussian_pulse`.
    """

    channels: tuple
    pulse: dict = None

    @property
    def m(self):
        return len(self.channels)

    def __call__(self, t):
        return np.array([float(f(t)) for f in self.channels])

    def sample(self, t):
        """Values on a time grid, shape ``(len(t), m)``."""
        t = np.asarray(t, dtype=float)
        U = np.column_stack([np.vectorize(f, otypes=[float])(t) for f in self.channels])
        if not np.all(np.isfinite(U)):
            raise ValueError("control signal produced non-finite samples")
        return U

    @classmethod
    def zero(cls, m):
        return cls(tuple(_Constant(0.0) for _ in range(m)))

    @classmethod
    def constant(cls, values):
        return cls(tuple(_Constant(float(v)) for v in np.atleast_1d(values)))

    @classmethod
    def from_table(cls, t, U):
        """Piecewise-linear interpolation of samples ``U[i, k] = u_k(t[i])``."""
        t = np.asarray(t, dtype=float)
        U = np.asarray(U, dtype=float).reshape(t.size, -1)
        if np.any(np.diff(t) <= 0):
            raise ValueError("control table times must be strictly increasing")
        if not np.all(np.isfinite(U)):
            raise ValueError("control table has non-finite entries")
        return cls(tuple(_Table(t, U[:, k]) for k in range(U.shape[1])))


@dataclasses.dataclass(frozen=True)
class _Constant:
    value: float

    def __call__(self, t):
        return self.value


@dataclasses.dataclass(frozen=True, eq=False)
class _Table:
    t: np.ndarray
    u: np.ndarray

    def __call__(self, t):
        return np.interp(t, self.t, self.u, left=self.u[0], right=self.u[-1])


@dataclasses.dataclass(frozen=True)
class _Gaussian:
    a: float
    t0: float
    sigma: float

    def __call__(self, t):
        return self.a * np.exp(-(t - self.t0) ** 2 / (2 * self.sigma ** 2))


def gaussian_pulse(a, t0, tau, channel=0, m=1):
    """Gaussian pulse of peak `a` at `t0` with full width at half maximum `tau`.

    ``u(t) = a exp(-(t - t0)^2 / (2 sigma^2))`` with
    ``sigma = tau / sqrt(8 ln 2)`` on input `channel` of `m`; the other
    channels are zero.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if not 0 <= channel < m:
        raise ValueError(f"channel {channel} out of range for m = {m}")
    sigma = tau / FWHM_FACTOR
    chans = [_Constant(0.0)] * m
    chans[channel] = _Gaussian(float(a), float(t0), sigma)
    return ControlSignal(tuple(chans), pulse={"a": a, "t0": t0, "tau": tau, "sigma": sigma,
                                              "channel": channel})


@dataclasses.dataclass(eq=False)
class TrajectoryBundle:
    """Sampled input and output of one simulation run.

    Attributes
    ----------
    t : (s,) array
    u : (s, m) array
        Physical control (before any scaling by ``eta``).
    y : (s, l) array
    stats : dict
        Integrator statistics.
    provenance : dict
        System name, reduction method, order and scaling.
    x : (s, n) array or None
        States, when requested.
    """

    t: np.ndarray
    u: np.ndarray
    y: np.ndarray
    stats: dict
    provenance: dict
    x: np.ndarray = None

    def write(self, path):
        """CSV with columns ``t, u1.., y1..`` and a JSON sidecar with stats."""
        path = pathlib.Path(path)
        cols = {"t": self.t}
        cols.update({f"u{k + 1}": self.u[:, k] for k in range(self.u.shape[1])})
        cols.update(_complex_columns("y", self.y))
        write_columns(path, cols)
        meta = {"stats": self.stats, "provenance": self.provenance, "samples": int(self.t.size)}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, default=_jsonable))


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


def _complex_columns(prefix, Y, rtol=1e-12):
    # complex data as re/im pairs unless the imaginary part is roundoff
    Y = np.asarray(Y)
    scale = max(float(np.max(np.abs(Y), initial=0.0)), 1e-300)
    if np.iscomplexobj(Y) and np.max(np.abs(Y.imag), initial=0.0) > rtol * scale:
        out = {}
        for k in range(Y.shape[1]):
            out[f"{prefix}{k + 1}_re"] = Y[:, k].real
            out[f"{prefix}{k + 1}_im"] = Y[:, k].imag
        return out
    return {f"{prefix}{k + 1}": np.real(Y[:, k]) for k in range(Y.shape[1])}


def write_columns(path, columns):
    """Write equally long columns as a headered CSV; NaN becomes an empty field."""
    names = list(columns)
    data = [np.asarray(columns[k]) for k in names]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(names)
        for row in zip(*data):
            w.writerow(["" if (isinstance(v, float) and math.isnan(v)) else repr(float(v))
                        if isinstance(v, (float, np.floating)) else v for v in row])


def _provenance(sys):
    return {"name": sys.name, "method": getattr(sys, "method", "full"), "n": sys.n,
            "eta": sys.eta, "alpha": sys.alpha, "stabilization": sys.stabilization}


def integrate(sys, u=None, x0=None, t_span=(0.0, 1.0), t_eval=None, samples=DEFAULT_SAMPLES,
              rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL, keep_states=False, method="DOP853"):
    """Integrate `sys` under the control `u`.

    Parameters
    ----------
    sys : BilinearSystem
    u : ControlSignal, optional
        Physical control; zero when omitted. If `sys` was scaled with
        ``scale_controls(sys, eta)`` it is driven with ``eta * u``.
    x0 : (n,) array, optional
        Initial state; zero (the stationary state in standard form) by
        default.
    t_span : (float, float)
    t_eval : array, optional
        Output grid; `samples` uniform points over `t_span` by default.
    rtol, atol : float
        Local error tolerances of the embedded pair.
    keep_states : bool
        Also return the sampled states.

    Raises
    ------
    StepSizeUnderflow
        If the step size collapses (stiffness or blow-up).
    """
    if not isinstance(sys, BilinearSystem):
        raise TypeError("sys must be a BilinearSystem")
    u = ControlSignal.zero(sys.m) if u is None else u
    if u.m != sys.m:
        raise BadDimension(f"control has {u.m} channels, system has {sys.m} inputs")
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    t_eval = np.linspace(t0, t1, samples) if t_eval is None else np.asarray(t_eval, dtype=float)
    if np.any(np.diff(t_eval) <= 0):
        raise ValueError("t_eval must be strictly increasing")
    complex_field = sys.field == "complex" or np.iscomplexobj(x0)
    dtype = complex if complex_field else float
    x0 = np.zeros(sys.n, dtype=dtype) if x0 is None else np.asarray(x0, dtype=dtype).ravel()
    if x0.size != sys.n:
        raise BadDimension(f"x0 has {x0.size} entries, expected {sys.n}")

    A = sys.A if not isinstance(sys.A, np.ndarray) else np.asarray(sys.A)
    N = sys.N
    B = sys.B
    eta = sys.eta

    def rhs(t, x):
        v = eta * u(t)
        dx = A @ x
        for k, vk in enumerate(v):
            if vk != 0.0:
                dx = dx + vk * (N[k] @ x + B[:, k])
        return dx

    sol = solve_ivp(rhs, (t0, t1), x0, method=method, t_eval=t_eval, rtol=rtol, atol=atol)
    if sol.status != 0:
        raise StepSizeUnderflow(f"integration failed at t = {sol.t[-1] if sol.t.size else t0}: "
                                f"{sol.message}")
    X = sol.y.T
    Y = X @ sys.C.T + sys.D
    if not complex_field or np.max(np.abs(Y.imag), initial=0.0) == 0:
        Y = np.real(Y)
    stats = {"method": method, "rtol": rtol, "atol": atol, "nfev": int(sol.nfev),
             "message": sol.message}
    return TrajectoryBundle(t_eval, u.sample(t_eval), Y, stats, _provenance(sys),
                            X if keep_states else None)


@dataclasses.dataclass
class DeviationReport:
    """Output deviation of a reduced run from the full run.

    ``max_dev[k]`` and ``l2_dev[k]`` are per channel; `scale` is
    ``max |y_full|`` over all channels and samples.
    """

    max_dev: np.ndarray
    l2_dev: np.ndarray
    scale: float

    @property
    def normalized_max(self):
        return float(np.max(self.max_dev) / self.scale) if self.scale > 0 else float(
            np.max(self.max_dev))

    @property
    def normalized_l2(self):
        return self.l2_dev / self.scale if self.scale > 0 else self.l2_dev


def compare_outputs(full, red):
    """Per-channel max and L2 (trapezoidal) deviations of `red` from `full`.

    Raises
    ------
    GridMismatch
        If the runs were sampled on different time grids or have a
        different number of outputs.
    """
    if full.t.shape != red.t.shape or not np.array_equal(full.t, red.t):
        raise GridMismatch("trajectories are sampled on different time grids")
    if full.y.shape != red.y.shape:
        raise GridMismatch(f"output shapes differ: {full.y.shape} vs {red.y.shape}")
    delta = np.abs(red.y - full.y)
    l2 = np.sqrt(np.trapezoid(delta ** 2, full.t, axis=0)) if full.t.size > 1 else delta[0]
    return DeviationReport(delta.max(axis=0), l2, float(np.max(np.abs(full.y))))


@dataclasses.dataclass
class SpectrumReport:
    """Eigenvalues of `A` sorted by magnitude."""

    eigenvalues: np.ndarray
    source: str

    def write(self, path):
        w = self.eigenvalues
        write_columns(pathlib.Path(path), {"index": np.arange(w.size), "re": w.real,
                                           "im": w.imag})


SPARSE_MIN_N = 400


def spectrum_report(sys, k=None, path=None):
    """Smallest-magnitude eigenvalues of ``sys.A``.

    Large sparse systems use shift-invert Arnoldi at 0 and need `k`
    (default 12); small or dense ones are solved completely and
    truncated to `k` when given.
    """
    A = sys.A if isinstance(sys, BilinearSystem) else sys
    n = A.shape[0]
    if k is not None and not 1 <= k <= n:
        raise BadDimension(f"k must satisfy 1 <= k <= {n}, got {k}")
    if n >= SPARSE_MIN_N and not isinstance(A, np.ndarray):
        w = eig_sparse_smallest(A, k or 12, shift=0.0)
        source = "sparse"
    else:
        w = sla.eigvals(as_dense(A))
        source = "dense"
    w = np.asarray(w, dtype=complex)
    w = w[np.lexsort((w.imag, np.round(np.abs(w), 12)))]
    if k is not None:
        w = w[:k]
    rep = SpectrumReport(w, source)
    if path is not None:
        rep.write(path)
    return rep
