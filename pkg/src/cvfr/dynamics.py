"""Firing-rate dynamics: Hill gain, Euler and Euler-Maruyama integrators.

States are row vectors. Every function accepts a single state of shape (N,)
or a batch of shape (B, N); the coupling acts as ``f(x) @ A.T``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NonFiniteState
from .rng import normal

#: Largest double below 1. tanh rounds to exactly 1.0 for arguments above ~19;
#: the damping factor is clamped here so it stays in [0, 1) in floating point.
_BELOW_ONE = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class IntegrationConfig:
    dt: float = 0.1
    steps: int = 100
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.dt < 1.0:
            raise ValueError(f"dt must lie in (0, 1), got {self.dt}")
        if self.steps < 0:
            raise ValueError(f"steps must be non-negative, got {self.steps}")
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")

    @property
    def horizon(self) -> float:
        return self.dt * self.steps


@dataclass
class Trajectory:
    states: np.ndarray  # (steps + 1, [B,] N)
    times: np.ndarray  # (steps + 1,)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def hill(x, c):
    x2 = np.square(x)
    return x2 / (c + x2)


def hill_prime(x, c):
    return 2.0 * c * x / np.square(c + np.square(x))


def _beta(n: int, beta: float | None) -> float:
    return 1.0 / math.sqrt(n) if beta is None else beta


def rhs_deterministic(x, A, c, beta=None):
    """-x + beta * A f(x)."""
    x = np.asarray(x, dtype=np.float64)
    A = np.asarray(A)
    n = x.shape[-1]
    if A.shape != (n, n):
        raise DimensionError(f"state has {n} components but A is {A.shape}")
    return -x + _beta(n, beta) * (hill(x, c) @ A.T)


def _euler_step(x, A, c, beta, dt):
    return x + dt * (-x + beta * (hill(x, c) @ A.T))


def _check_finite(x, step):
    if not np.all(np.isfinite(x)):
        raise NonFiniteState(f"state became non-finite at step {step}", step=step)


def integrate(x0, A, cfg: IntegrationConfig, *, c: float, beta=None, record: bool = True):
    """Explicit Euler for ``cfg.steps`` steps.

    Returns a :class:`Trajectory`, or just the final state when ``record`` is False.
    Noisy configurations belong to :func:`integrate_stochastic`.
    """
    if cfg.sigma != 0.0:
        raise ValueError(f"integrate is deterministic; got sigma={cfg.sigma} (use integrate_stochastic)")
    x = np.array(x0, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    n = x.shape[-1]
    if A.shape != (n, n):
        raise DimensionError(f"state has {n} components but A is {A.shape}")
    beta = _beta(n, beta)
    states = [x] if record else None
    for t in range(cfg.steps):
        x = _euler_step(x, A, c, beta, cfg.dt)
        _check_finite(x, t + 1)
        if record:
            states.append(x)
    if not record:
        return x
    return Trajectory(np.stack(states), cfg.dt * np.arange(cfg.steps + 1))


def damping_factor(x, attractor_states):
    """tanh of the geometric mean over k of |x - X_k|^2 / N.

    Zero exactly on any planted state; tends to 1 far from all of them.
    """
    x = np.asarray(x, dtype=np.float64)
    states = np.atleast_2d(attractor_states)
    msd = np.mean(np.square(x[..., None, :] - states), axis=-1)
    with np.errstate(divide="ignore"):
        g = np.exp(np.mean(np.log(msd), axis=-1))
    return np.minimum(np.tanh(g), _BELOW_ONE)


def damping_factor_grad(x, attractor_states):
    """Damping factor and its gradient with respect to ``x``.

    The gradient is set to 0 wherever the factor itself is 0 (a planted state),
    where the geometric mean is not differentiable for K > 1.
    """
    x = np.asarray(x, dtype=np.float64)
    states = np.atleast_2d(attractor_states)
    k, n = states.shape
    diff = x[..., None, :] - states  # (..., K, N)
    msd = np.mean(np.square(diff), axis=-1)  # (..., K)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.exp(np.mean(np.log(msd), axis=-1))
        d = np.minimum(np.tanh(g), _BELOW_ONE)
        weights = np.where(msd > 0, 1.0 / msd, 0.0)
        dg = (g / k)[..., None] * np.einsum("...k,...kn->...n", weights, diff) * (2.0 / n)
    dg = np.where((g > 0)[..., None], dg, 0.0)
    return d, (1.0 - d * d)[..., None] * dg


def draw_noise(seeds, steps: int, n: int) -> np.ndarray:
    """Standard normal increments of shape (steps, len(seeds), n), one stream per seed."""
    seeds = np.atleast_1d(seeds)
    noise = np.empty((steps, len(seeds), n))
    for i, s in enumerate(seeds):
        noise[:, i, :] = normal(int(s), (steps, n))
    return noise


def item_seeds(base_seed: int, count: int) -> np.ndarray:
    return np.array([int(base_seed) + i for i in range(count)], dtype=object)


def integrate_stochastic(
    x0,
    A,
    attractor_states,
    cfg: IntegrationConfig,
    *,
    c: float,
    beta=None,
    noise=None,
    record: bool = True,
):
    """Euler-Maruyama for the damped Langevin dynamics.

    x_{t+1} = x_t + dt*rhs(x_t) + sqrt(dt)*sigma*d(x_t)*xi_t

    ``noise`` holds the xi_t (shape (steps, [B,] N)); when omitted, item i of a
    batch uses the stream seeded with ``cfg.seed + i``. With sigma = 0 the
    update is the deterministic Euler step bit for bit.
    """
    x = np.array(x0, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    n = x.shape[-1]
    if A.shape != (n, n):
        raise DimensionError(f"state has {n} components but A is {A.shape}")
    beta = _beta(n, beta)
    noisy = cfg.sigma > 0.0 and cfg.steps > 0
    if noisy and noise is None:
        if x.ndim == 1:
            noise = normal(cfg.seed, (cfg.steps, n))
        else:
            noise = draw_noise(item_seeds(cfg.seed, x.shape[0]), cfg.steps, n)
    if noisy and noise.shape != (cfg.steps,) + x.shape:
        raise DimensionError(f"noise has shape {noise.shape}, expected {(cfg.steps,) + x.shape}")
    scale = math.sqrt(cfg.dt) * cfg.sigma
    states = [x] if record else None
    for t in range(cfg.steps):
        x_next = _euler_step(x, A, c, beta, cfg.dt)
        if noisy:
            d = damping_factor(x, attractor_states)
            x_next = x_next + scale * d[..., None] * noise[t]
        x = x_next
        _check_finite(x, t + 1)
        if record:
            states.append(x)
    if not record:
        return x
    return Trajectory(np.stack(states), cfg.dt * np.arange(cfg.steps + 1))


def write_trajectory_csv(path, traj: Trajectory, *, activity: bool = False, c: float | None = None):
    """Dump a single-item trajectory as ``t,x_1..x_N`` (or ``t,f_1..f_N``)."""
    states = traj.states
    if states.ndim != 2:
        raise DimensionError("trajectory CSV expects a single item (steps+1, N)")
    if activity:
        if c is None:
            raise ValueError("activity output needs the Hill constant c")
        states = hill(states, c)
    prefix = "f" if activity else "x"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"{prefix}_{i + 1}" for i in range(states.shape[1])])
        for t, row in zip(traj.times, states):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
