"""Spectral parameterization of the coupling matrix, A = Psi diag(eigvals) Psi^-1.

The first ``k`` columns of ``psi`` and the first ``k`` eigenvalues are frozen
once the planted attractors are embedded; every other entry is trainable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import lapack

from .errors import DimensionError, RealityConditionViolated, SingularPsi
from .rng import generator

#: Re-sample the free part of psi when its condition estimate exceeds this.
MAX_INIT_CONDITION = 1e8
#: Refuse to invert psi when the reciprocal condition estimate falls below this.
MIN_RCOND = 1e-14


@dataclass
class SpectralCoupling:
    n: int
    k: int
    psi: np.ndarray
    eigvals: np.ndarray
    lambda_planted: float
    c: float
    beta: float
    frozen_cols: np.ndarray
    seed: int = 0

    @property
    def free_cols(self) -> np.ndarray:
        return ~self.frozen_cols

    @property
    def n_free_parameters(self) -> int:
        n_free = int(self.free_cols.sum())
        return n_free * self.n + n_free

    def copy(self) -> "SpectralCoupling":
        return replace(
            self,
            psi=self.psi.copy(),
            eigvals=self.eigvals.copy(),
            frozen_cols=self.frozen_cols.copy(),
        )


def check_reality(lambda_planted: float, c: float, beta: float) -> None:
    if not (beta * beta * lambda_planted * lambda_planted - 4.0 * c > 0.0):
        raise RealityConditionViolated(
            f"need beta^2 lambda^2 > 4c, got beta*lambda={beta * lambda_planted!r}, c={c!r}"
        )


def _sample_free(sc: SpectralCoupling, seed: int) -> None:
    rng = generator(seed)
    free = sc.free_cols
    n_free = int(free.sum())
    sc.psi[:, free] = rng.normal(0.0, 1.0 / math.sqrt(sc.n), size=(sc.n, n_free))
    sc.eigvals[free] = rng.uniform(-1.0, 0.0, size=n_free)


def new_spectral_coupling(
    n: int, k: int, lambda_planted: float, c: float, seed: int
) -> SpectralCoupling:
    """Fresh coupling with ``k`` reserved (zeroed, frozen) columns.

    Free psi entries are N(0, 1/n) and free eigenvalues U[-1, 0]. The reserved
    columns stay zero until :func:`cvfr.attractors.embed` fills them, so psi is
    singular until then.
    """
    if k > n:
        raise DimensionError(f"k={k} planted attractors do not fit in n={n} neurons")
    if n < 1 or k < 1:
        raise DimensionError(f"n and k must be positive, got n={n}, k={k}")
    if c <= 0:
        raise ValueError(f"Hill constant must be positive, got c={c}")
    beta = 1.0 / math.sqrt(n)
    check_reality(lambda_planted, c, beta)

    frozen = np.zeros(n, dtype=bool)
    frozen[:k] = True
    eigvals = np.zeros(n)
    eigvals[:k] = lambda_planted
    sc = SpectralCoupling(
        n=n,
        k=k,
        psi=np.zeros((n, n)),
        eigvals=eigvals,
        lambda_planted=float(lambda_planted),
        c=float(c),
        beta=beta,
        frozen_cols=frozen,
        seed=int(seed),
    )
    _sample_free(sc, seed)
    return sc


def resample_free(sc: SpectralCoupling, seed: int) -> None:
    """Redraw the free entries in place (used by the conditioning guard)."""
    sc.seed = int(seed)
    _sample_free(sc, seed)


def _lu(psi: np.ndarray):
    if not np.all(np.isfinite(psi)):
        raise SingularPsi("psi contains non-finite entries")
    lu, piv, info = lapack.dgetrf(psi)
    if info > 0:
        raise SingularPsi(f"psi is exactly singular (zero pivot at {info - 1})")
    return lu, piv


def condition_estimate(psi: np.ndarray) -> float:
    """1-norm condition number estimate from the LU factors (LAPACK dgecon)."""
    try:
        lu, _ = _lu(psi)
    except SingularPsi:
        return math.inf
    anorm = np.abs(psi).sum(axis=0).max()
    rcond, info = lapack.dgecon(lu, anorm, norm="1")
    if info != 0 or rcond == 0.0:
        return math.inf
    return 1.0 / rcond


def psi_inverse(sc: SpectralCoupling) -> np.ndarray:
    """Psi^-1 recomputed from scratch by LU with partial pivoting."""
    lu, piv = _lu(sc.psi)
    anorm = np.abs(sc.psi).sum(axis=0).max()
    rcond, _ = lapack.dgecon(lu, anorm, norm="1")
    if rcond < MIN_RCOND:
        raise SingularPsi(f"psi is numerically singular (rcond={rcond:.3e})")
    inv, info = lapack.dgetri(lu, piv)
    if info != 0:
        raise SingularPsi(f"LAPACK dgetri failed with info={info}")
    return inv


def assemble(sc: SpectralCoupling, psi_inv: np.ndarray | None = None) -> np.ndarray:
    """A = Psi diag(eigvals) Psi^-1. The 1/sqrt(n) factor is not included."""
    if psi_inv is None:
        psi_inv = psi_inverse(sc)
    return (sc.psi * sc.eigvals) @ psi_inv


def backprop_assemble(
    sc: SpectralCoupling, grad_A: np.ndarray, psi_inv: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Pull dL/dA back to (dL/dPsi, dL/deigvals), frozen entries zeroed.

    With B = Psi^-1 and A = Psi L B:
        dL/dL_ii = (Psi^T G B^T)_ii
        dL/dPsi  = G B^T L - A^T G B^T
    Both arrays are returned full-size.
    """
    grad_A = np.asarray(grad_A, dtype=np.float64)
    if grad_A.shape != (sc.n, sc.n):
        raise DimensionError(f"grad_A has shape {grad_A.shape}, expected {(sc.n, sc.n)}")
    if psi_inv is None:
        psi_inv = psi_inverse(sc)
    gbt = grad_A @ psi_inv.T
    grad_eig = np.einsum("ij,ij->j", sc.psi, gbt)
    A = assemble(sc, psi_inv)
    grad_psi = gbt * sc.eigvals - A.T @ gbt
    grad_psi[:, sc.frozen_cols] = 0.0
    grad_eig[sc.frozen_cols] = 0.0
    return grad_psi, grad_eig
