import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvfr.errors import DimensionError, RealityConditionViolated, SingularPsi
from cvfr.rng import generator
from cvfr.spectral import (
    SpectralCoupling,
    assemble,
    backprop_assemble,
    check_reality,
    condition_estimate,
    new_spectral_coupling,
    psi_inverse,
)

from conftest import central_difference, rel_err


def bare_coupling(psi, eigvals, frozen=None):
    n = len(eigvals)
    frozen = np.zeros(n, bool) if frozen is None else np.asarray(frozen, bool)
    return SpectralCoupling(n, int(frozen.sum()) or 1, np.array(psi, float), np.array(eigvals, float),
                            10.0, 1.0, 1 / math.sqrt(n), frozen)


def test_parameter_counts():
    sc = new_spectral_coupling(8, 2, 5 * math.sqrt(8), 1.0, seed=7)
    assert sc.free_cols.sum() == 6
    assert sc.n_free_parameters == 6 * 8 + 6
    assert sc.beta == 1 / math.sqrt(8)
    assert np.all(sc.psi[:, :2] == 0.0)
    assert np.all(sc.eigvals[:2] == sc.lambda_planted)
    free = sc.eigvals[2:]
    assert np.all((free >= -1.0) & (free <= 0.0))


def test_free_entries_have_expected_scale():
    n = 200
    sc = new_spectral_coupling(n, 3, 5 * math.sqrt(n), 1.0, seed=1)
    std = sc.psi[:, 3:].std()
    assert abs(std - 1 / math.sqrt(n)) < 0.02 / math.sqrt(n) * 5


def test_reality_condition():
    with pytest.raises(RealityConditionViolated):
        new_spectral_coupling(4, 2, 1.0, 1.0, seed=0)
    # boundary: beta*lambda = 2, c = 1 gives a zero discriminant
    with pytest.raises(RealityConditionViolated):
        check_reality(4.0, 1.0, 0.5)
    check_reality(4.0 + 1e-9, 1.0, 0.5)


def test_dimension_errors():
    with pytest.raises(DimensionError):
        new_spectral_coupling(3, 4, 100.0, 1.0, seed=0)


def test_same_seed_same_parameters():
    a = new_spectral_coupling(10, 3, 50.0, 1.0, seed=5)
    b = new_spectral_coupling(10, 3, 50.0, 1.0, seed=5)
    c = new_spectral_coupling(10, 3, 50.0, 1.0, seed=6)
    assert np.array_equal(a.psi, b.psi) and np.array_equal(a.eigvals, b.eigvals)
    assert not np.array_equal(a.psi, c.psi)


def test_assemble_identity_psi():
    sc = bare_coupling(np.eye(2), [2.0, 3.0])
    assert np.array_equal(assemble(sc), np.diag([2.0, 3.0]))


def test_assemble_unit_spectrum_is_identity():
    psi = generator(11).normal(size=(5, 5))
    sc = bare_coupling(psi, np.ones(5))
    np.testing.assert_allclose(assemble(sc), np.eye(5), atol=1e-10)


def test_assemble_reproduces_eigenpairs():
    psi = generator(4).normal(size=(6, 6))
    lam = np.linspace(-2, 3, 6)
    A = assemble(bare_coupling(psi, lam))
    np.testing.assert_allclose(A @ psi, psi * lam, atol=1e-10)


def test_singular_psi_rejected():
    psi = np.ones((3, 3))
    with pytest.raises(SingularPsi):
        psi_inverse(bare_coupling(psi, [1.0, 2.0, 3.0]))
    near = np.eye(3)
    near[2, 2] = 1e-17
    with pytest.raises(SingularPsi):
        assemble(bare_coupling(near, [1.0, 2.0, 3.0]))
    assert condition_estimate(np.zeros((3, 3))) == math.inf


def test_condition_estimate_tracks_true_condition():
    for seed in range(5):
        psi = generator(seed).normal(size=(7, 7))
        true = np.linalg.cond(psi, 1)
        est = condition_estimate(psi)
        assert true / 3 <= est <= true * 1.000001


def _probe(A, w):
    # a smooth non-linear scalar of A
    return float(np.sum(w * A) + 0.25 * np.sum(A * A) + np.sin(A[0, 1]))


def _probe_grad(A, w):
    g = w + 0.5 * A
    g[0, 1] += np.cos(A[0, 1])
    return g


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_backprop_assemble_matches_finite_differences(seed):
    rng = generator(seed)
    n = 6
    psi = rng.normal(size=(n, n)) + 2 * np.eye(n)
    lam = rng.uniform(-1, 2, size=n)
    frozen = np.zeros(n, bool)
    frozen[:2] = True
    sc = bare_coupling(psi, lam, frozen)
    w = rng.normal(size=(n, n))
    g_psi, g_eig = backprop_assemble(sc, _probe_grad(assemble(sc), w))

    def l_of_psi(p):
        return _probe(assemble(bare_coupling(p, lam, frozen)), w)

    def l_of_eig(e):
        return _probe(assemble(bare_coupling(psi, e, frozen)), w)

    fd_psi = central_difference(l_of_psi, psi)
    fd_eig = central_difference(l_of_eig, lam)
    fd_psi[:, frozen] = 0.0
    fd_eig[frozen] = 0.0
    assert rel_err(g_psi, fd_psi) < 1e-5
    assert rel_err(g_eig, fd_eig) < 1e-5


def test_backprop_assemble_masks_and_linearity():
    rng = generator(3)
    frozen = np.array([True, False, True, False])
    sc = bare_coupling(rng.normal(size=(4, 4)) + 3 * np.eye(4), [1.0, -0.5, 1.0, 0.2], frozen)
    g_psi, g_eig = backprop_assemble(sc, np.zeros((4, 4)))
    assert not g_psi.any() and not g_eig.any()
    g_psi, g_eig = backprop_assemble(sc, rng.normal(size=(4, 4)))
    assert np.all(g_psi[:, frozen] == 0.0) and np.all(g_eig[frozen] == 0.0)
    assert np.any(g_psi[:, ~frozen] != 0.0)
    with pytest.raises(DimensionError):
        backprop_assemble(sc, np.zeros((3, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_trace_equals_eigenvalue_sum(n, seed):
    rng = generator(seed)
    psi = rng.normal(size=(n, n)) + 3 * np.eye(n)
    lam = rng.uniform(-3, 3, size=n)
    A = assemble(bare_coupling(psi, lam))
    assert abs(np.trace(A) - lam.sum()) < 1e-8 * max(1.0, np.abs(lam).sum()) * condition_estimate(psi)
