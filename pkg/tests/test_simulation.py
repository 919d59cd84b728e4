import csv
import json

import numpy as np
import pytest
import scipy.sparse as sp

from bilinred.balancing import compute_balancing, reduce_sp, truncate_bt
from bilinred.errors import BadDimension, GridMismatch
from bilinred.gramians import gramians
from bilinred.simulation import (ControlSignal, compare_outputs, gaussian_pulse, integrate,
                                 spectrum_report)
from bilinred.system import BilinearSystem

from conftest import random_bilinear


def test_pulse_shape():
    u = gaussian_pulse(0.5, 150, 100)
    assert u.pulse["sigma"] == pytest.approx(42.4661, abs=1e-4)
    assert u(150.0)[0] == 0.5
    # full width at half maximum
    assert u(100.0)[0] == pytest.approx(0.25, rel=1e-12)
    assert u(200.0)[0] == pytest.approx(0.25, rel=1e-12)
    two = gaussian_pulse(1.0, 0.0, 1.0, channel=1, m=2)
    np.testing.assert_array_equal(two(0.0), [0.0, 1.0])
    with pytest.raises(ValueError):
        gaussian_pulse(1.0, 0.0, 0.0)


def test_scalar_linear_ode():
    # x' = -x + u with u = 1: x(t) = 1 - exp(-t)
    sys = BilinearSystem(np.array([[-1.0]]), [np.zeros((1, 1))], np.array([[1.0]]),
                         np.array([[1.0]]))
    tr = integrate(sys, ControlSignal.constant([1.0]), t_span=(0, 5), samples=51)
    np.testing.assert_allclose(tr.y[:, 0], 1 - np.exp(-tr.t), atol=1e-7)


def test_scalar_bilinear_ode():
    # x' = -x + u x with x(0) = 1 and u = 0.5: x = exp(-t / 2)
    sys = BilinearSystem(np.array([[-1.0]]), [np.eye(1)], None, np.array([[1.0]]))
    tr = integrate(sys, ControlSignal.constant([0.5]), x0=[1.0], t_span=(0, 4), samples=21,
                   rtol=1e-11, atol=1e-13)
    np.testing.assert_allclose(tr.y[:, 0], np.exp(-tr.t / 2), atol=1e-10)


def test_zero_input_gives_offset(rng):
    sys = random_bilinear(rng, 4).replace(D=np.array([0.3, -0.7]))
    tr = integrate(sys, t_span=(0, 2), samples=5)
    np.testing.assert_array_equal(tr.y, np.tile([0.3, -0.7], (5, 1)))


def test_tolerance_convergence(rng):
    sys = random_bilinear(rng, 6, m=1)
    u = gaussian_pulse(1.0, 2.0, 1.0)
    kw = dict(t_span=(0, 6), samples=30)
    ref = integrate(sys, u, rtol=1e-13, atol=1e-15, **kw)
    errs = [np.max(np.abs(integrate(sys, u, rtol=r, atol=r * 1e-2, **kw).y - ref.y))
            for r in (1e-4, 1e-7, 1e-10)]
    assert errs[2] <= errs[0]
    assert errs[2] <= 1e-8


def test_compare_outputs(rng):
    sys = random_bilinear(rng, 5, m=1)
    u = gaussian_pulse(1.0, 1.0, 1.0)
    a = integrate(sys, u, t_span=(0, 3), samples=20)
    rep = compare_outputs(a, a)
    assert rep.normalized_max == 0.0
    b = integrate(sys, u, t_span=(0, 3), samples=21)
    with pytest.raises(GridMismatch):
        compare_outputs(a, b)


def test_spectrum_diagonal():
    d = -np.arange(1.0, 6.0)[::-1]
    rep = spectrum_report(BilinearSystem(np.diag(d), []))
    np.testing.assert_allclose(rep.eigenvalues, -np.arange(1.0, 6.0))
    assert rep.source == "dense"
    big = sp.diags(-np.arange(1.0, 501.0)).tocsr()
    rep = spectrum_report(BilinearSystem(big, []), k=3)
    np.testing.assert_allclose(rep.eigenvalues, [-1, -2, -3], atol=1e-10)
    with pytest.raises(BadDimension):
        spectrum_report(BilinearSystem(np.diag(d), []), k=6)


def test_full_order_reductions_reproduce_run(rng):
    sys = random_bilinear(rng, 8, m=1)
    g = gramians(sys, tol=1e-12)
    bal = compute_balancing(sys, g.P, g.Q)
    u = gaussian_pulse(0.8, 2.0, 1.5)
    kw = dict(t_span=(0, 8), samples=40, rtol=1e-11, atol=1e-13)
    full = integrate(sys, u, **kw)
    for red in (truncate_bt(bal, bal.r), reduce_sp(bal, bal.r)):
        assert np.max(np.abs(integrate(red, u, **kw).y - full.y)) <= 1e-7


def test_table_control(rng):
    sys = random_bilinear(rng, 3, m=1)
    t = np.linspace(0, 2, 11)
    u_tab = ControlSignal.from_table(t, np.sin(t))
    assert u_tab(0.1)[0] == pytest.approx(0.5 * np.sin(0.2))
    with pytest.raises(ValueError):
        ControlSignal.from_table(t[::-1], t)


def test_write_csv(tmp_path, rng):
    sys = random_bilinear(rng, 3, m=1)
    tr = integrate(sys, gaussian_pulse(1.0, 1.0, 1.0), t_span=(0, 2), samples=6)
    tr.write(tmp_path / "run.csv")
    with open(tmp_path / "run.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["t", "u1", "y1", "y2"] and len(rows) == 7
    np.testing.assert_allclose([float(r[2]) for r in rows[1:]], tr.y[:, 0], rtol=1e-15)
    meta = json.loads((tmp_path / "run.json").read_text())
    assert meta["samples"] == 6 and meta["stats"]["method"] == "DOP853"


def test_complex_outputs_written_as_pairs(tmp_path):
    sys = BilinearSystem(np.array([[-1j - 0.1]]), [np.zeros((1, 1))], None, np.array([[1.0]]))
    tr = integrate(sys, x0=[1.0], t_span=(0, 1), samples=3)
    tr.write(tmp_path / "c.csv")
    header = (tmp_path / "c.csv").read_text().splitlines()[0]
    assert header == "t,u1,y1_re,y1_im"
