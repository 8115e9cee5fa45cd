"""Stationary alphabet, attractor construction and planting into the coupling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .dynamics import hill
from .errors import DataError, DependentAttractors, DimensionError, RealityConditionViolated
from .spectral import MAX_INIT_CONDITION, SpectralCoupling, condition_estimate, resample_free

LETTER_CLASSES = ("A", "B", "C")
DIGIT_CLASSES = tuple(str(d) for d in range(10))

#: How many times ``embed`` re-draws the free part of psi before giving up.
MAX_RESAMPLES = 20


@dataclass(frozen=True)
class Alphabet:
    """The three stationary values a planted component can take: 0, x_m, x_p."""

    x_m: float
    x_p: float
    lam: float
    c: float
    beta: float
    x_zero: float = 0.0


@dataclass
class AttractorSet:
    states: np.ndarray  # (K, N), entries in {0, x_p}
    images: np.ndarray  # (K, N), f(states)
    alphabet: Alphabet
    patterns: np.ndarray  # (K, N) binary templates the states were built from
    class_alphabets: tuple[Alphabet, ...] | None = None

    @property
    def k(self) -> int:
        return self.states.shape[0]

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def lambdas(self) -> np.ndarray:
        if self.class_alphabets is None:
            return np.full(self.k, self.alphabet.lam)
        return np.array([a.lam for a in self.class_alphabets])


def solve_alphabet(lam: float, c: float, beta: float) -> Alphabet:
    """Non-trivial roots of x = beta*lam*x^2/(c + x^2)."""
    bl = beta * lam
    disc = bl * bl - 4.0 * c
    if not disc > 0.0:
        raise RealityConditionViolated(
            f"beta^2 lambda^2 - 4c = {disc!r} must be strictly positive"
        )
    root = math.sqrt(disc)
    x_p = 0.5 * (bl + root)
    # x_p * x_m = c; the product form avoids cancellation when c << (beta lam)^2
    x_m = c / x_p
    return Alphabet(x_m=x_m, x_p=x_p, lam=float(lam), c=float(c), beta=float(beta))


def pattern_to_attractor(pattern, alphabet: Alphabet) -> tuple[np.ndarray, np.ndarray]:
    pattern = np.asarray(pattern)
    if not np.all((pattern == 0) | (pattern == 1)):
        raise ValueError("attractor patterns must be binary (0/1)")
    state = np.where(pattern == 1, alphabet.x_p, 0.0)
    return state, hill(state, alphabet.c)


def make_attractor_set(
    patterns: np.ndarray,
    alphabet: Alphabet,
    class_lambdas: Sequence[float] | None = None,
) -> AttractorSet:
    """Build states and images for a stack of binary patterns.

    ``class_lambdas`` plants each class at its own eigenvalue, each with its own
    x_p; by default all classes share ``alphabet.lam``.
    """
    patterns = np.atleast_2d(np.asarray(patterns, dtype=np.float64))
    class_alphabets = None
    if class_lambdas is not None:
        if len(class_lambdas) != len(patterns):
            raise DimensionError("need one eigenvalue per pattern")
        class_alphabets = tuple(
            solve_alphabet(lam, alphabet.c, alphabet.beta) for lam in class_lambdas
        )
    states, images = [], []
    for i, p in enumerate(patterns):
        a = alphabet if class_alphabets is None else class_alphabets[i]
        s, im = pattern_to_attractor(p, a)
        states.append(s)
        images.append(im)
    return AttractorSet(
        states=np.array(states),
        images=np.array(images),
        alphabet=alphabet,
        patterns=patterns,
        class_alphabets=class_alphabets,
    )


#: Ways of completing the planted columns to a full basis.
BASES = ("orthogonal", "random")


def orthogonalize_free(psi: np.ndarray, k: int) -> None:
    """Replace columns k.. of ``psi`` (in place) by an orthonormal basis of the
    complement of span(psi[:, :k]), obtained from the current free columns.

    The free columns are projected off the planted span and QR-orthonormalized,
    with signs chosen so each new column keeps a positive overlap with the
    column it came from.
    """
    q_planted, _ = np.linalg.qr(psi[:, :k])
    g = psi[:, k:] - q_planted @ (q_planted.T @ psi[:, k:])
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    psi[:, k:] = q * signs


def embed(sc: SpectralCoupling, attractors: AttractorSet, basis: str = "orthogonal") -> SpectralCoupling:
    """Return a copy of ``sc`` whose first K eigenpairs are the planted ones.

    ``basis="random"`` keeps the Gaussian free columns as drawn.
    ``basis="orthogonal"`` (default) turns them into an orthonormal basis of
    the complement of the planted span. A random square Gaussian matrix has
    a smallest singular value of order 1/N, so the random completion starts
    with |A| far above the planted eigenvalue and an Euler map that diverges.
    The orthogonal completion keeps |A| on the order of lambda.

    If the completed psi is badly conditioned the free entries are re-drawn
    with seed+1, seed+2, ... until it is not.
    """
    if basis not in BASES:
        raise ValueError(f"basis must be one of {BASES}, got {basis!r}")
    k, n = attractors.images.shape
    if n != sc.n or k != sc.k:
        raise DimensionError(f"attractors are {k}x{n}, coupling expects {sc.k}x{sc.n}")
    if attractors.alphabet.beta != sc.beta or attractors.alphabet.c != sc.c:
        raise ValueError("alphabet (c, beta) does not match the coupling")
    rank = np.linalg.matrix_rank(attractors.images)
    if rank < k:
        raise DependentAttractors(f"planted images have rank {rank} < {k}")

    out = sc.copy()
    out.frozen_cols[:] = False
    out.frozen_cols[:k] = True
    out.psi[:, :k] = attractors.images.T
    out.eigvals[:k] = attractors.lambdas
    for attempt in range(MAX_RESAMPLES + 1):
        if basis == "orthogonal" and k < n:
            orthogonalize_free(out.psi, k)
        if condition_estimate(out.psi) <= MAX_INIT_CONDITION:
            return out
        resample_free(out, out.seed + 1)
    raise DependentAttractors(
        f"could not complete psi to a well-conditioned basis after {MAX_RESAMPLES} re-draws"
    )


def plant(sc: SpectralCoupling, patterns: np.ndarray, class_lambdas=None, basis: str = "orthogonal"):
    """Convenience: solve the alphabet for ``sc``, build the attractors and embed them."""
    alphabet = solve_alphabet(sc.lambda_planted, sc.c, sc.beta)
    attractors = make_attractor_set(patterns, alphabet, class_lambdas)
    return embed(sc, attractors, basis), attractors


def read_pattern(path, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Parse a '0'/'1' grid file into a flat float vector (row-major)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read pattern file: {exc.strerror}", path=path) from exc
    rows = [line.strip() for line in text.splitlines() if line.strip()]
    if not rows:
        raise DataError("empty pattern file", path=path)
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width or set(row) - {"0", "1"}:
            raise DataError(f"row {i} is not a {width}-wide 0/1 row", path=path)
    if shape is not None and (len(rows), width) != tuple(shape):
        raise DataError(f"grid is {len(rows)}x{width}, expected {shape[0]}x{shape[1]}", path=path)
    return np.array([[float(ch) for ch in row] for row in rows]).reshape(-1)


def _builtin_dir(kind: str) -> Path:
    return Path(str(resources.files("cvfr") / "data" / kind))


def load_patterns(kind: str, directory=None) -> np.ndarray:
    """Load the shipped (or a user-supplied directory of) class templates.

    ``kind`` is ``"letters"`` (7x7, classes A/B/C) or ``"digits"`` (28x28, 0-9).
    """
    if kind == "letters":
        names, shape = LETTER_CLASSES, (7, 7)
    elif kind == "digits":
        names, shape = DIGIT_CLASSES, (28, 28)
    else:
        raise ValueError(f"unknown template set {kind!r}")
    base = Path(directory) if directory is not None else _builtin_dir(kind)
    return np.stack([read_pattern(base / f"{name}.txt", shape) for name in names])
