"""Seeded random streams.

Every random draw in the package goes through numpy's PCG64 bit generator
(PCG-XSL-RR 128/64), which produces the same stream on every platform for a
given seed. Gaussian variates are produced here by the Box-Muller transform
on PCG64 uniforms rather than numpy's ziggurat sampler, so the exact mapping
from seed to normal deviates is fixed by this file alone.

Seeds for sub-streams (per item, per epoch, per realization) are derived with
the splitmix64 finalizer.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One splitmix64 step: add the golden gamma, then the Stafford-13 finalizer."""
    z = (int(x) + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *indices: int) -> int:
    """Mix a base seed with a sequence of indices into a new 64-bit seed.

    ``derive_seed(s, i)`` is ``splitmix64(splitmix64(s) ^ i)``; further indices
    are folded in the same way.
    """
    z = splitmix64(int(seed) & MASK64)
    for i in indices:
        z = splitmix64(z ^ (int(i) & MASK64))
    return z


def generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & MASK64))


def box_muller(rng: np.random.Generator, size) -> np.ndarray:
    """Standard normal draws from ``rng`` via the Box-Muller transform.

    Uniform pairs (u1, u2) give ``r = sqrt(-2 log(1 - u1))`` and the two
    deviates ``r cos(2 pi u2)``, ``r sin(2 pi u2)``. Using ``1 - u1`` keeps the
    logarithm finite since numpy's uniforms lie in [0, 1).
    """
    shape = (size,) if np.isscalar(size) else tuple(size)
    count = int(np.prod(shape, dtype=np.int64))
    pairs = (count + 1) // 2
    u = rng.random((pairs, 2))
    r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    theta = 2.0 * np.pi * u[:, 1]
    z = np.empty((pairs, 2))
    z[:, 0] = r * np.cos(theta)
    z[:, 1] = r * np.sin(theta)
    return z.reshape(-1)[:count].reshape(shape)


def normal(seed: int, size) -> np.ndarray:
    return box_muller(generator(seed), size)
