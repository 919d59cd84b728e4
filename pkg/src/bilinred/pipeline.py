"""End-to-end reduction workflow shared by the command line and the tests.

A benchmark is a purely bilinear system together with its conserved
functional. `prepare` expands it around the stationary state, removes
the zero eigenvalue (projection or discounting) and scales the controls;
`ReductionRun` then caches Gramians and the balancing so that several
methods and orders reuse them.
"""

import dataclasses
import logging
from functools import cached_property

import numpy as np

from .balancing import compute_balancing, reduce_sp, truncate_bt
from .birka import birka_iterate
from .errors import BadDimension, ConfigInvalid
from .gramians import DEFAULT_TOL, H2ErrorEvaluator, gramians, h2_error_projected
from .system import (discount_shift, project_out_null, scale_controls, shift_to_standard_form,
                     stationary_state)

log = logging.getLogger(__name__)

DEFAULT_ETA = {"fpe": 10.0, "lvne": 20.0}
METHODS = ("bt", "sp", "h2")
STABILIZATIONS = ("project", "shift", "none")


@dataclasses.dataclass(eq=False)
class Benchmark:
    """A purely bilinear model with its conserved functional.

    `weights` normalizes the stationary state (total probability or
    trace one); `functional` is the conserved quantity used by the
    projection (defaults to `weights`).
    """

    system: object
    weights: np.ndarray
    model: str = ""
    config: dict = None
    functional: np.ndarray = None

    @property
    def conserved(self):
        return self.weights if self.functional is None else self.functional


def fpe_benchmark(cfg=None, check_quality=True):
    from .fpe import assemble_fpe

    asm = assemble_fpe(cfg, check_quality=check_quality)
    return Benchmark(asm.system(), asm.mass_weights, "fpe", dataclasses.asdict(asm.config))


def lvne_benchmark(cfg=None):
    from .lvne import assemble_lvne

    asm = assemble_lvne(cfg)
    return Benchmark(asm.system(), asm.trace_functional, "lvne", asm.config.to_dict())


@dataclasses.dataclass(eq=False)
class Prepared:
    """Standard-form system ready for reduction, with its stationary state."""

    system: object
    x_e: np.ndarray
    benchmark: Benchmark


def prepare(bench, stabilize="project", eta=None, alpha=None):
    """Shift to standard form, stabilize and scale the controls.

    Parameters
    ----------
    bench : Benchmark
    stabilize : {"project", "shift", "none"}
        ``"project"`` eliminates the conserved direction, ``"shift"``
        applies the discount ``A - alpha I``.
    eta : float, optional
        Control scaling; the model default (`DEFAULT_ETA`) if omitted.
    alpha : float, optional
        Discount for ``stabilize="shift"``; ``1e-3 ||A||`` if omitted.
    """
    if stabilize not in STABILIZATIONS:
        raise ConfigInvalid(f"stabilize: expected one of {STABILIZATIONS}, got {stabilize!r}")
    eta = DEFAULT_ETA.get(bench.model, 1.0) if eta is None else float(eta)
    st = stationary_state(bench.system, weights=bench.weights)
    sys = shift_to_standard_form(bench.system, st.x)
    if stabilize == "project":
        sys = project_out_null(sys, st.x, functional=bench.conserved)
    elif stabilize == "shift":
        sys = discount_shift(sys, alpha)
    if eta != 1.0:
        sys = scale_controls(sys, eta)
    return Prepared(sys, st.x, bench)


class ReductionRun:
    """Reductions of one prepared system with shared Gramians and balancing."""

    def __init__(self, sys, tol=DEFAULT_TOL):
        self.sys = sys
        self.tol = tol

    @cached_property
    def gramians(self):
        return gramians(self.sys, tol=self.tol)

    @cached_property
    def balanced(self):
        g = self.gramians
        return compute_balancing(self.sys, g.P, g.Q)

    @cached_property
    def evaluator(self):
        g = self.gramians
        return H2ErrorEvaluator(self.sys, P=g.P, Q=g.Q, tol=self.tol)

    def reduce(self, method, d, init="bt", seed=0, max_iter=100, tol=1e-6):
        """Reduced model of order `d` by ``"bt"``, ``"sp"`` or ``"h2"``.

        For ``"h2"`` the B-IRKA result is returned with the iteration
        record in ``model.info``.
        """
        method = method.lower()
        if method not in METHODS:
            raise ConfigInvalid(f"method: expected one of {METHODS}, got {method!r}")
        d = int(d)
        if not 1 <= d < self.sys.n:
            raise BadDimension(f"reduced order must satisfy 1 <= d < {self.sys.n}, got {d}")
        if method in ("bt", "sp"):
            if d > self.balanced.r:
                raise BadDimension(f"only {self.balanced.r} balanced states are available")
            return (truncate_bt if method == "bt" else reduce_sp)(self.balanced, d)
        res = birka_iterate(self.sys, d, init=init, tol=tol, max_iter=max_iter,
                            balanced=self.balanced if init == "bt" else None, seed=seed,
                            solve_tol=self.tol, wilson=True)
        info = {**res.model.info, "wilson": dataclasses.asdict(res.wilson),
                "history": res.history}
        return dataclasses.replace(res.model, info=info)

    def h2_error(self, red, route="exact"):
        """H2 error of `red`.

        ``route="exact"`` evaluates the error system in error coordinates
        (accurate down to roundoff relative to the error itself);
        ``route="trace"`` uses the three-term trace formula with the cached
        Gramian, which loses all digits once the error falls below about
        ``sqrt(eps)`` times the norm.
        """
        if route == "trace":
            return self.evaluator.error(red).error
        if route == "exact":
            return h2_error_projected(self.sys, red, tol=min(self.tol, 1e-12))
        raise ValueError(f"unknown route {route!r}")

    @cached_property
    def h2_norm(self):
        C = self.sys.C
        return float(np.sqrt(max(np.real(np.trace(C @ self.gramians.P @ C.conj().T)), 0.0)))
