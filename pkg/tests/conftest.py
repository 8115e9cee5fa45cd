import math

import numpy as np
import pytest

from cvfr.attractors import plant
from cvfr.rng import generator
from cvfr.spectral import new_spectral_coupling


def random_patterns(k, n, seed, density=0.4):
    """k distinct, linearly independent binary patterns of length n."""
    rng = generator(seed)
    while True:
        p = (rng.random((k, n)) < density).astype(float)
        if np.linalg.matrix_rank(p) == k:
            return p


def planted_model(n, k, seed, basis="orthogonal", beta_lambda=5.0, c=1.0):
    sc = new_spectral_coupling(n, k, beta_lambda * math.sqrt(n), c, seed)
    return plant(sc, random_patterns(k, n, seed + 1000), basis=basis)


def central_difference(fun, x, h=1e-6):
    """Gradient of scalar ``fun`` at array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (fun(xp) - fun(xm)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-30))


@pytest.fixture
def small_model():
    return planted_model(8, 2, seed=3)


# acceptance criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
