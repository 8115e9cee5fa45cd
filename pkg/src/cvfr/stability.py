"""Linear stability of planted equilibria.

The Jacobian of the flow at a stationary state is J = -I + beta A diag(f'(x_s)).
Its eigenvalues are found with a Householder reduction to upper Hessenberg
form followed by Francis double-shift QR sweeps (the classic EISPACK ``hqr``
scheme); complex pairs are read off converged 2x2 diagonal blocks.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dynamics import hill_prime, rhs_deterministic
from .errors import ConvergenceFailure, DimensionError, NotStationary

TOL_MARGIN = 1e-8
STATIONARY_TOL = 1e-8
_EPS = np.finfo(np.float64).eps


@dataclass
class StabilityReport:
    abscissa: float
    stable: bool
    per_attractor: list[tuple[int, float]] = field(default_factory=list)
    tol_margin: float = TOL_MARGIN

    def as_dict(self) -> dict:
        return {
            "abscissa": self.abscissa,
            "stable": self.stable,
            "tol_margin": self.tol_margin,
            "per_attractor": [
                {"class": k, "abscissa": a, "stable": a < -self.tol_margin}
                for k, a in self.per_attractor
            ],
        }


def jacobian_at(x_s, A, c, beta=None, *, check: bool = True) -> np.ndarray:
    x_s = np.asarray(x_s, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    n = x_s.shape[0]
    if A.shape != (n, n):
        raise DimensionError(f"state has {n} components but A is {A.shape}")
    beta = 1.0 / math.sqrt(n) if beta is None else beta
    if check:
        residual = np.abs(rhs_deterministic(x_s, A, c, beta)).max()
        if residual >= STATIONARY_TOL:
            warnings.warn(
                f"Jacobian requested at a non-stationary point (|rhs|_inf={residual:.3e})",
                NotStationary,
                stacklevel=2,
            )
    return -np.eye(n) + beta * A * hill_prime(x_s, c)


def hessenberg(a: np.ndarray) -> np.ndarray:
    """Upper Hessenberg matrix similar to ``a`` (Householder reflections)."""
    h = np.array(a, dtype=np.float64)
    n = h.shape[0]
    for k in range(n - 2):
        x = h[k + 1 :, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        v = x.copy()
        v[0] += math.copysign(alpha, x[0])
        v /= np.linalg.norm(v)
        h[k + 1 :, k:] -= 2.0 * np.outer(v, v @ h[k + 1 :, k:])
        h[:, k + 1 :] -= 2.0 * np.outer(h[:, k + 1 :] @ v, v)
        h[k + 2 :, k] = 0.0
    return h


def hessenberg_eigvals(h: np.ndarray, max_iter: int | None = None) -> np.ndarray:
    """Eigenvalues of an upper Hessenberg matrix by double-shift QR.

    ``h`` is overwritten. ``max_iter`` caps the total number of QR sweeps
    (default 100 n); exceeding it raises :class:`ConvergenceFailure`.
    """
    a = h
    n = a.shape[0]
    max_iter = 100 * n if max_iter is None else max_iter
    wr = np.zeros(n)
    wi = np.zeros(n)
    anorm = np.abs(a).sum()
    nn = n - 1
    shift = 0.0
    total = 0
    x = y = w = 0.0
    while nn >= 0:
        its = 0
        while True:
            # find the lowest negligible subdiagonal entry
            l = nn
            while l >= 1:
                s = abs(a[l - 1, l - 1]) + abs(a[l, l])
                if s == 0.0:
                    s = anorm
                if abs(a[l, l - 1]) <= _EPS * s:
                    a[l, l - 1] = 0.0
                    break
                l -= 1
            x = a[nn, nn]
            if l == nn:
                wr[nn] = x + shift
                nn -= 1
                break
            y = a[nn - 1, nn - 1]
            w = a[nn, nn - 1] * a[nn - 1, nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = math.sqrt(abs(q))
                x += shift
                if q >= 0.0:
                    z = p + math.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn - 1] = -z
                    wi[nn] = z
                nn -= 2
                break
            if total >= max_iter:
                raise ConvergenceFailure(
                    f"QR iteration did not converge within {max_iter} sweeps ({nn + 1} eigenvalues left)"
                )
            if its in (10, 20):
                # exceptional shift to break cycles
                shift += x
                idx = np.arange(nn + 1)
                a[idx, idx] -= x
                s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                x = y = 0.75 * s
                w = -0.4375 * s * s
            its += 1
            total += 1
            # look for two consecutive small subdiagonal entries
            m = nn - 2
            while True:
                z = a[m, m]
                r = x - z
                s = y - z
                p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
                q = a[m + 1, m + 1] - z - r - s
                r = a[m + 2, m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(a[m, m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
                if u <= _EPS * v:
                    break
                m -= 1
            for i in range(m + 2, nn + 1):
                a[i, i - 2] = 0.0
                if i != m + 2:
                    a[i, i - 3] = 0.0
            # double-shift sweep on rows/columns l..nn, chasing the bulge from m
            for k in range(m, nn):
                last = k == nn - 1
                if k != m:
                    p = a[k, k - 1]
                    q = a[k + 1, k - 1]
                    r = 0.0 if last else a[k + 2, k - 1]
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                if s == 0.0:
                    continue
                if k == m:
                    if l != m:
                        a[k, k - 1] = -a[k, k - 1]
                else:
                    a[k, k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                cols = slice(k, nn + 1)
                pr = a[k, cols] + q * a[k + 1, cols]
                if not last:
                    pr = pr + r * a[k + 2, cols]
                    a[k + 2, cols] -= pr * z
                a[k + 1, cols] -= pr * y
                a[k, cols] -= pr * x
                rows = slice(l, min(nn, k + 3) + 1)
                pc = x * a[rows, k] + y * a[rows, k + 1]
                if not last:
                    pc = pc + z * a[rows, k + 2]
                    a[rows, k + 2] -= pc * r
                a[rows, k + 1] -= pc * q
                a[rows, k] -= pc
    return wr + 1j * wi


def eigenvalues(J, max_iter: int | None = None) -> np.ndarray:
    J = np.asarray(J, dtype=np.float64)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {J.shape}")
    if not np.all(np.isfinite(J)):
        raise ValueError("matrix has non-finite entries")
    if J.shape[0] == 0:
        return np.zeros(0, dtype=complex)
    return hessenberg_eigvals(hessenberg(J), max_iter=max_iter)


def spectral_abscissa(J, max_iter: int | None = None) -> float:
    """Largest real part over the eigenvalues of J."""
    return float(np.max(eigenvalues(J, max_iter).real))


def stability_report(checkpoint, attractors=None, tol_margin: float = TOL_MARGIN) -> StabilityReport:
    """Spectral abscissa of the Jacobian at every planted state.

    ``checkpoint`` is a :class:`cvfr.checkpoint.Checkpoint`; its own attractors
    are used unless another :class:`AttractorSet` is given.
    """
    from .spectral import assemble

    sc = checkpoint.coupling
    attractors = checkpoint.attractors if attractors is None else attractors
    A = assemble(sc)
    per = []
    for k, x_s in enumerate(attractors.states):
        J = jacobian_at(x_s, A, sc.c, sc.beta)
        per.append((k, spectral_abscissa(J)))
    worst = max(a for _, a in per)
    return StabilityReport(worst, worst < -tol_margin, per, tol_margin)
