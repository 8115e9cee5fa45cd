import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvfr.dynamics import (
    IntegrationConfig,
    damping_factor,
    damping_factor_grad,
    draw_noise,
    hill,
    hill_prime,
    integrate,
    integrate_stochastic,
    rhs_deterministic,
    write_trajectory_csv,
)
from cvfr.errors import DimensionError, NonFiniteState
from cvfr.rng import generator, normal
from cvfr.spectral import assemble

from conftest import central_difference, planted_model, rel_err


def test_hill_values():
    assert hill(0.0, 3.0) == 0.0 and hill_prime(0.0, 3.0) == 0.0
    assert hill(math.sqrt(2.0), 2.0) == pytest.approx(0.5, abs=1e-15)


def test_hill_prime_finite_differences():
    rng = generator(0)
    xs = rng.uniform(-5, 5, 20)
    cs = rng.uniform(0.1, 4, 20)
    for x, c in zip(xs, cs):
        fd = (hill(x + 1e-6, c) - hill(x - 1e-6, c)) / 2e-6
        assert abs(hill_prime(x, c) - fd) <= 1e-8 * max(abs(fd), 1e-3)


def test_rhs_cases(small_model):
    sc, att = small_model
    A = assemble(sc)
    x = generator(1).normal(size=8)
    np.testing.assert_array_equal(rhs_deterministic(x, np.zeros((8, 8)), 1.0), -x)
    assert not rhs_deterministic(np.zeros(8), A, 1.0).any()
    for s in att.states:
        assert np.abs(rhs_deterministic(s, A, sc.c)).max() < 1e-10
    with pytest.raises(DimensionError):
        rhs_deterministic(np.zeros(3), A, 1.0)


def test_rhs_batch_matches_rows(small_model):
    sc, _ = small_model
    A = assemble(sc)
    xb = generator(2).normal(size=(4, 8))
    rows = np.stack([rhs_deterministic(x, A, sc.c) for x in xb])
    np.testing.assert_allclose(rhs_deterministic(xb, A, sc.c), rows, rtol=1e-14, atol=1e-14)


def test_integration_config_validation():
    with pytest.raises(ValueError):
        IntegrationConfig(dt=1.0)
    with pytest.raises(ValueError):
        IntegrationConfig(steps=-1)
    with pytest.raises(ValueError):
        IntegrationConfig(sigma=-0.1)
    assert IntegrationConfig().horizon == pytest.approx(10.0)


def test_single_decay_step():
    x0 = np.array([2.0])
    traj = integrate(x0, np.zeros((1, 1)), IntegrationConfig(0.1, 1), c=1.0)
    assert traj.final[0] == 2.0 * (1 - 0.1)
    assert np.array_equal(traj.states[0], x0) and np.array_equal(traj.times, [0.0, 0.1])


def test_integrate_rejects_noise():
    with pytest.raises(ValueError):
        integrate(np.zeros(2), np.zeros((2, 2)), IntegrationConfig(sigma=0.1), c=1.0)


def test_planted_state_persists(small_model):
    sc, att = small_model
    A = assemble(sc)
    traj = integrate(att.states[1], A, IntegrationConfig(0.1, 100), c=sc.c)
    assert np.abs(traj.states - att.states[1]).max() < 1e-9
    noisy = integrate_stochastic(att.states[1], A, att.states, IntegrationConfig(0.1, 100, 0.7, 3), c=sc.c)
    assert np.abs(noisy.states - att.states[1]).max() < 1e-9


def test_first_order_convergence(small_model):
    sc, _ = small_model
    A = assemble(sc)
    x0 = generator(5).uniform(0, 1, 8)
    T = 2.0
    finals = [integrate(x0, A, IntegrationConfig(T / m, m), c=sc.c, record=False) for m in (40, 80, 160, 320)]
    errs = [np.abs(a - b).max() for a, b in zip(finals, finals[1:])]
    ratios = [e1 / e2 for e1, e2 in zip(errs, errs[1:])]
    for r in ratios:
        assert 1.7 < r < 2.3


def test_economy_mode_matches_recorded(small_model):
    sc, _ = small_model
    A = assemble(sc)
    x0 = generator(6).uniform(0, 1, (3, 8))
    cfg = IntegrationConfig(0.1, 30)
    assert np.array_equal(integrate(x0, A, cfg, c=sc.c).final, integrate(x0, A, cfg, c=sc.c, record=False))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises():
    A = np.array([[1e200]])
    with pytest.raises(NonFiniteState) as exc:
        integrate(np.array([10.0]), A, IntegrationConfig(0.5, 10), c=1.0, beta=1e200)
    assert exc.value.step == 1


def test_damping_factor_values(small_model):
    _, att = small_model
    for s in att.states:
        assert damping_factor(s, att.states) == 0.0
    far = np.full(8, 1e6)
    assert 0.999 < damping_factor(far, att.states) < 1.0
    assert damping_factor(np.array([1.0]), np.array([[0.0]])) == pytest.approx(0.7615941559557649, abs=1e-12)
    # geometric mean of msd 1 and 4 is 2
    assert damping_factor(np.array([0.0]), np.array([[1.0], [2.0]])) == pytest.approx(math.tanh(2.0), abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=3, max_size=3))
def test_damping_factor_range(x):
    states = np.array([[0.0, 1.0, 2.0], [3.0, 0.0, 0.5]])
    d = damping_factor(np.array(x), states)
    assert 0.0 <= d < 1.0


def test_damping_factor_gradient():
    rng = generator(7)
    states = rng.uniform(0, 3, (3, 5))
    for _ in range(5):
        x = rng.uniform(-1, 4, 5)
        d, g = damping_factor_grad(x, states)
        assert d == damping_factor(x, states)
        fd = central_difference(lambda v: float(damping_factor(v, states)), x)
        assert rel_err(g, fd) < 1e-6
    _, g0 = damping_factor_grad(states[0], states)
    assert not g0.any()


def test_sigma_zero_is_bit_identical(small_model):
    sc, att = small_model
    A = assemble(sc)
    x0 = generator(8).uniform(0, 1, (5, 8))
    cfg = IntegrationConfig(0.1, 50, 0.0, 9)
    a = integrate(x0, A, cfg, c=sc.c)
    b = integrate_stochastic(x0, A, att.states, cfg, c=sc.c)
    assert np.array_equal(a.states, b.states)


def test_stochastic_update_rule(small_model):
    sc, att = small_model
    A = assemble(sc)
    x0 = generator(9).uniform(0, 1, 8)
    cfg = IntegrationConfig(0.05, 3, 0.4, 11)
    traj = integrate_stochastic(x0, A, att.states, cfg, c=sc.c)
    xi = normal(11, (3, 8))
    x = x0.copy()
    for t in range(3):
        x = x + 0.05 * rhs_deterministic(x, A, sc.c) + math.sqrt(0.05) * 0.4 * damping_factor(x, att.states) * xi[t]
        np.testing.assert_allclose(traj.states[t + 1], x, rtol=1e-13, atol=1e-13)


def test_batch_items_use_own_streams(small_model):
    sc, att = small_model
    A = assemble(sc)
    x0 = generator(10).uniform(0, 1, (3, 8))
    cfg = IntegrationConfig(0.1, 20, 0.3, 100)
    batch = integrate_stochastic(x0, A, att.states, cfg, c=sc.c, record=False)
    for i in range(3):
        single = integrate_stochastic(x0[i], A, att.states, IntegrationConfig(0.1, 20, 0.3, 100 + i), c=sc.c,
                                      record=False)
        np.testing.assert_allclose(batch[i], single, rtol=1e-12, atol=1e-12)
    noise = draw_noise([100, 101, 102], 20, 8)
    explicit = integrate_stochastic(x0, A, att.states, cfg, c=sc.c, noise=noise, record=False)
    assert np.array_equal(batch, explicit)
    with pytest.raises(DimensionError):
        integrate_stochastic(x0, A, att.states, cfg, c=sc.c, noise=noise[:, :2])


def test_noise_scaling_is_sqrt_dt():
    # with A = 0 and a state far from the single attractor (d ~ 1), the
    # displacement variance over unit time is sigma^2 whatever dt is
    states = np.array([[1e4]])
    x0 = np.zeros((4000, 1))
    for dt, steps in ((0.1, 10), (0.02, 50)):
        cfg = IntegrationConfig(dt, steps, 0.5, 1)
        x = integrate_stochastic(x0, np.zeros((1, 1)), states, cfg, c=1.0, beta=0.0, record=False)
        decay = sum((1 - dt) ** (2 * j) for j in range(steps)) * dt
        assert x.var() == pytest.approx(0.25 * decay, rel=0.08)


def test_trajectory_csv(tmp_path, small_model):
    sc, _ = small_model
    traj = integrate(np.full(8, 0.5), assemble(sc), IntegrationConfig(0.1, 3), c=sc.c)
    p = tmp_path / "t.csv"
    write_trajectory_csv(p, traj)
    lines = p.read_text().splitlines()
    assert lines[0] == "t," + ",".join(f"x_{i}" for i in range(1, 9))
    assert len(lines) == 5
    assert float(lines[1].split(",")[1]) == 0.5
    write_trajectory_csv(p, traj, activity=True, c=sc.c)
    first = p.read_text().splitlines()
    assert first[0].startswith("t,f_1") and float(first[1].split(",")[1]) == hill(0.5, sc.c)
