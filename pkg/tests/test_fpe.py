import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from bilinred.errors import ConfigInvalid
from bilinred.fpe import (FpeConfig, analytic_stationary_density, assemble_fpe,
                          m_matrix_violation, potential_eval, potential_gradient,
                          quadrant_observables)
from bilinred.simulation import ControlSignal, integrate


@pytest.fixture(scope="module")
def default_asm():
    return assemble_fpe()


def test_potential_values():
    assert potential_eval(0.1, -0.4) == pytest.approx(2.84965, abs=1e-5)
    assert potential_eval(3, -3) < potential_eval(-3, 3)
    X1, X2 = FpeConfig().grid()
    assert potential_eval(X1, X2).min() > 0


@settings(max_examples=50, deadline=None)
@given(x1=st.floats(-6, 6), x2=st.floats(-5.5, 6.5))
def test_gradient_vs_central_differences(x1, x2):
    h = 1e-5
    g1, g2 = potential_gradient(x1, x2)
    f1 = (potential_eval(x1 + h, x2) - potential_eval(x1 - h, x2)) / (2 * h)
    f2 = (potential_eval(x1, x2 + h) - potential_eval(x1, x2 - h)) / (2 * h)
    assert abs(g1 - f1) <= 1e-6 * max(1, abs(g1))
    assert abs(g2 - f2) <= 1e-6 * max(1, abs(g2))


def test_default_grid(default_asm):
    cfg = default_asm.config
    assert cfg.shape == (49, 49) and cfg.n == 2401
    assert default_asm.A.shape == (2401, 2401)
    assert cfg.spacing == pytest.approx((0.25, 0.25))


def test_mass_conservation_structure(default_asm):
    ones = np.ones(default_asm.config.n)
    for M in (default_asm.A, *default_asm.N):
        assert np.max(np.abs(ones @ M)) <= 1e-12 * abs(M).max()


def test_flat_potential_laplacian():
    cfg = FpeConfig(domain=(0.0, 2.0, 0.0, 3.0), h=0.25, potential="flat", beta=2.0)
    asm = assemble_fpe(cfg, check_quality=False)
    n1, n2 = cfg.shape
    h = 0.25
    # separable Neumann Laplacian: eigenvalues are sums of the 1D ones
    l1 = -4 / h ** 2 * np.sin(np.pi * np.arange(n1) / (2 * n1)) ** 2
    l2 = -4 / h ** 2 * np.sin(np.pi * np.arange(n2) / (2 * n2)) ** 2
    exact = np.sort((l1[:, None] + l2[None, :]).ravel()) / cfg.beta
    w = np.sort(np.linalg.eigvalsh(asm.A.toarray()))
    np.testing.assert_allclose(w, exact, atol=1e-10)
    assert m_matrix_violation(asm.A) == 0.0


def test_m_matrix_reported(default_asm):
    v = default_asm.quality["m_matrix_violation"]
    assert v == m_matrix_violation(default_asm.A) and v <= 0
    assert m_matrix_violation(sp.csr_matrix(np.array([[-1.0, -0.5], [1.0, 0.5]]))) == -0.5


def test_default_quality(default_asm):
    q = default_asm.quality
    assert q["ok"]
    w = q["eigenvalues"]
    assert abs(w[0]) <= 1e-12
    assert np.all(w[1:].real < 0)


def test_coarse_grid_flagged():
    asm = assemble_fpe(FpeConfig(h=1.25))
    assert not asm.quality["ok"]


def test_quadrants():
    cfg = FpeConfig()
    C = quadrant_observables(cfg)
    assert C.shape == (4, cfg.n)
    # every node belongs to exactly one quadrant
    np.testing.assert_allclose(C.sum(axis=0), cfg.cell_area)
    X1, X2 = cfg.grid()
    i = np.argmin((X1 - 3) ** 2 + (X2 - 3) ** 2)
    assert C[0, i] > 0 and C[1:, i].sum() == 0


def test_analytic_density_tilt():
    cfg = FpeConfig()
    C = quadrant_observables(cfg)
    mu0 = analytic_stationary_density(cfg)
    mu = analytic_stationary_density(cfg, u0=(0.5, 0.0))
    east = lambda m: (C[0] + C[3]) @ m
    assert east(mu) > east(mu0)
    assert mu.min() > 0


def test_positive_control_moves_mass_east():
    cfg = FpeConfig(domain=(-2.0, 2.0, -2.0, 2.0), h=0.25, potential="flat")
    asm = assemble_fpe(cfg, check_quality=False)
    x0 = np.full(cfg.n, 1.0 / (cfg.n * cfg.cell_area))
    tr = integrate(asm.system(), ControlSignal.constant([1.0, 0.0]), x0=x0, t_span=(0, 1),
                   samples=5, rtol=1e-10, atol=1e-12)
    east = tr.y[:, 0] + tr.y[:, 3]
    assert east[-1] > east[0]
    assert abs(tr.y[-1].sum() - tr.y[0].sum()) <= 1e-9


def test_config_errors():
    with pytest.raises(ConfigInvalid):
        FpeConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigInvalid):
        FpeConfig(h=(0.0, 0.25))
    with pytest.raises(ConfigInvalid):
        FpeConfig(potential="double")
    cfg = FpeConfig.from_dict({"h": [0.5, 0.5], "beta": 2.0})
    assert cfg.shape == (25, 25)
