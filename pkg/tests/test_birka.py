import numpy as np
import pytest
import scipy.linalg as sla
from scipy.optimize import minimize_scalar

from bilinred.birka import (birka_iterate, birka_step, initial_state, petrov_galerkin,
                            wilson_residuals, write_history)
from bilinred.errors import IllConditionedProjector
from bilinred.gramians import gramians, h2_error_projected, h2_norm
from bilinred.system import BilinearSystem, ReducedModel

from conftest import random_bilinear


def test_full_order_fixed_point(rng):
    sys = random_bilinear(rng, 5)
    A, N, B, C, D = sys.dense()
    start = ReducedModel(A, N, B, C, D)
    res = birka_iterate(sys, 5, init=start, solve_tol=1e-12)
    assert res.converged and len(res.history) == 1
    assert h2_error_projected(sys, res.model) <= 1e-8 * h2_norm(sys)
    assert res.wilson.max() <= 1e-8


def _first_order_error(G_norm2, G, lam):
    # best residue for the pole lam: c = -2 lam G(-lam)
    return G_norm2 + 2 * lam * G(-lam) ** 2


def test_linear_first_order_optimum():
    A = np.array([[-1.0, 0.5], [0.0, -3.0]])
    b = np.array([[1.0], [1.0]])
    c = np.array([[1.0, 2.0]])
    sys = BilinearSystem(A, [np.zeros((2, 2))], b, c)

    def G(s):
        return (c @ np.linalg.solve(s * np.eye(2) - A, b)).item()

    norm2 = h2_norm(sys) ** 2
    opt = minimize_scalar(lambda lam: _first_order_error(norm2, G, lam), bounds=(-20, -1e-3),
                          method="bounded", options={"xatol": 1e-12})
    res = birka_iterate(sys, 1, init="random", seed=3, tol=1e-12, max_iter=200, solve_tol=1e-13)
    lam = np.linalg.eigvals(res.model.A)[0].real
    assert res.converged
    assert lam == pytest.approx(opt.x, rel=1e-6)
    # interpolation: X spans (-A - lam I)^{-1} b
    v = np.linalg.solve(-A - lam * np.eye(2), b).ravel()
    V = res.model.basis.ravel()
    assert abs(abs(v @ V) / np.linalg.norm(v) - 1) <= 1e-8


def test_converged_wilson(rng):
    sys = random_bilinear(rng, 10, m=2, strength=0.4)
    res = birka_iterate(sys, 3, tol=1e-10, max_iter=300, solve_tol=1e-13)
    assert res.converged
    assert res.wilson.max() <= 1e-6
    assert np.max(np.linalg.eigvals(res.model.A).real) < 0


def test_basis_invariance(rng):
    sys = random_bilinear(rng, 9)
    state = initial_state(sys, 3, init="bt")
    new = birka_step(sys, state, tol=1e-12)
    Qr = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    Qs = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    other = petrov_galerkin(sys, new.V @ Qr, new.W @ Qs)
    a = np.sort_complex(np.linalg.eigvals(new.model.A))
    b = np.sort_complex(np.linalg.eigvals(other.A))
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_projection_consistency(rng):
    from bilinred.gramians import solve_generalized_sylvester

    sys = random_bilinear(rng, 9)
    state = initial_state(sys, 3, init="bt")
    red = state.model
    new = birka_step(sys, state, tol=1e-12)
    X = solve_generalized_sylvester(sys.A, sys.N, red.A, red.N, sys.B @ red.B.T, tol=1e-12)
    angles = sla.subspace_angles(new.V, X)
    assert np.max(angles) <= 1e-8


def test_orthonormal_bases(rng):
    sys = random_bilinear(rng, 9)
    st_ = birka_step(sys, initial_state(sys, 4, init="random", seed=1))
    for M in (st_.V, st_.W):
        np.testing.assert_allclose(M.T @ M, np.eye(4), atol=1e-12)


def test_ill_conditioned_projector(rng):
    sys = random_bilinear(rng, 4)
    V = np.eye(4)[:, :2]
    W = np.eye(4)[:, 2:]
    with pytest.raises(IllConditionedProjector):
        petrov_galerkin(sys, V, W)


def test_random_start_step_recorded(rng):
    # one step from a random start: record the error change, not asserted
    sys = random_bilinear(rng, 10)
    state = initial_state(sys, 3, init="random", seed=5)
    new = birka_step(sys, state)
    e0 = h2_error_projected(sys, state.model)
    e1 = h2_error_projected(sys, new.model)
    assert np.isfinite(e0) and np.isfinite(e1)


def test_wilson_bt_not_stationary(rng):
    from bilinred.balancing import compute_balancing, truncate_bt

    sys = random_bilinear(rng, 10, m=2, strength=0.5)
    g = gramians(sys, tol=1e-12)
    red = truncate_bt(compute_balancing(sys, g.P, g.Q), 3)
    assert wilson_residuals(sys, red, tol=1e-12).max() > 1e-3


def test_history_csv(tmp_path, rng):
    sys = random_bilinear(rng, 6)
    res = birka_iterate(sys, 2, max_iter=3, tol=0.0, wilson=False)
    assert not res.converged and res.wilson is None
    write_history(res.history, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "iteration,change,damping" and len(lines) == 4
