import numpy as np
import pytest

from bilinred.system import BilinearSystem


def random_stable(rng, n, complex_=False, margin=0.5):
    """Random matrix with spectral abscissa about ``-margin`` and a non-normal part."""
    M = rng.standard_normal((n, n))
    if complex_:
        M = M + 1j * rng.standard_normal((n, n))
    w = np.linalg.eigvals(M)
    return M - (np.max(w.real) + margin) * np.eye(n)


def random_bilinear(rng, n, m=2, l=2, complex_=False, strength=0.3, margin=1.0):
    """Random stable bilinear system whose fixed-point iteration contracts.

    The ``N_k`` are scaled so that ``sum ||N_k||^2`` is `strength` times
    the spectral margin of a dissipative ``A``.
    """
    S = rng.standard_normal((n, n))
    if complex_:
        S = S + 1j * rng.standard_normal((n, n))
    K = S - S.conj().T  # skew part, keeps A dissipative
    G = rng.standard_normal((n, n)) / np.sqrt(n)
    A = 0.5 * K / np.sqrt(n) - (G @ G.T + margin * np.eye(n))
    N = []
    for _ in range(m):
        Nk = rng.standard_normal((n, n))
        if complex_:
            Nk = Nk + 1j * rng.standard_normal((n, n))
        N.append(Nk * np.sqrt(strength * 2 * margin / m) / np.linalg.norm(Nk, 2))
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((l, n))
    if complex_:
        B = B + 1j * rng.standard_normal((n, m))
        C = C + 1j * rng.standard_normal((l, n))
    return BilinearSystem(A, N, B, C)


def random_generator(rng, n):
    """Random irreducible rate matrix with zero column sums (``1* A = 0``)."""
    R = rng.uniform(0.1, 1.0, (n, n))
    np.fill_diagonal(R, 0.0)
    return R - np.diag(R.sum(axis=0))


def random_conservative_bilinear(rng, n, m=1, l=2, strength=0.2):
    """Purely bilinear system with ``1* A = 1* N_k = 0``."""
    A = random_generator(rng, n)
    N = []
    for _ in range(m):
        R = rng.uniform(-1, 1, (n, n))
        Nk = R - np.outer(np.ones(n), R.sum(axis=0)) / n
        N.append(strength * Nk / np.linalg.norm(Nk, 2))
    C = rng.uniform(0, 1, (l, n))
    return BilinearSystem(A, N, None, C)


def rel(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(np.asarray(b)),
                                                                1e-300)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)
