"""Complex Schur decomposition and spectral statistics.

The Schur form is computed from scratch: Householder reduction to upper
Hessenberg form followed by implicit single-shift QR sweeps (Wilkinson
shifts, Givens rotations) with deflation of negligible subdiagonal
entries.  A subdiagonal entry is negligible when it is below
``DEFLATION_TOL`` times the sum of its two diagonal neighbours, or below
machine epsilon times the largest entry of the Hessenberg matrix.  The
sweep kernel is compiled with numba when it is available
and otherwise runs as plain Python.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter, NumericalFailure, ShapeError

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

__all__ = [
    "SchurForm", "SpectralSample", "schur", "eigenvalues", "hessenberg",
    "disk_radius", "ks_uniform_disk", "ks_radial", "spectral_radius",
    "median_radius", "angular_chi_square", "radial_cdf_table",
    "DEFLATION_TOL", "SWEEPS_PER_DIM",
]

DEFLATION_TOL = 1e-14
SWEEPS_PER_DIM = 30


@dataclass(frozen=True, eq=False)
class SchurForm:
    """``X = q @ t @ q.conj().T`` with ``q`` unitary and ``t`` upper triangular."""

    q: np.ndarray
    t: np.ndarray
    residual: float  # ||X - Q T Q*||_F / ||X||_F
    iterations: int = 0

    @property
    def unitarity_defect(self) -> float:
        k = self.q.shape[0]
        return float(np.linalg.norm(self.q.conj().T @ self.q - np.eye(k)))


@dataclass(frozen=True, eq=False)
class SpectralSample:
    eigenvalues: np.ndarray
    radii_sorted: np.ndarray

    @classmethod
    def from_eigenvalues(cls, ev) -> "SpectralSample":
        ev = np.asarray(ev, dtype=complex)
        return cls(ev, np.sort(np.abs(ev)))

    @property
    def k(self) -> int:
        return len(self.eigenvalues)


def hessenberg(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Householder reduction ``X = Q H Q*`` with ``H`` upper Hessenberg.

    Columns whose part below the subdiagonal is zero, or below machine
    epsilon times the largest entry, are skipped (and zeroed), so an
    upper-triangular input comes back unchanged with ``Q = I``.
    """
    H = np.array(X, dtype=complex, order="C")
    k = H.shape[0]
    Q = np.eye(k, dtype=complex)
    negligible = np.finfo(float).eps * (np.max(np.abs(H)) if k else 0.0)
    for j in range(k - 2):
        x = H[j + 1:, j]
        if np.max(np.abs(x[1:])) <= negligible:
            H[j + 2:, j] = 0.0
            continue
        x = x / np.max(np.abs(x))  # scaled so squares cannot underflow
        alpha = np.linalg.norm(x)
        phase = x[0] / abs(x[0]) if x[0] != 0 else 1.0
        v = x.copy()
        v[0] += phase * alpha
        v /= np.linalg.norm(v)
        H[j + 1:, :] -= 2.0 * np.outer(v, v.conj() @ H[j + 1:, :])
        H[:, j + 1:] -= 2.0 * np.outer(H[:, j + 1:] @ v, v.conj())
        Q[:, j + 1:] -= 2.0 * np.outer(Q[:, j + 1:] @ v, v.conj())
        H[j + 2:, j] = 0.0
    return H, Q


@njit(cache=True, nogil=True)
def _givens(x, y):
    # c real, G = [[c, s], [-conj(s), c]] maps (x, y) to (r, 0)
    ay = abs(y)
    if ay == 0.0:
        return 1.0, 0.0j
    ax = abs(x)
    norm = math.hypot(ax, ay)
    if ax == 0.0:
        return 0.0, y.conjugate() / ay
    alpha = x / ax
    return ax / norm, alpha * y.conjugate() / norm


@njit(cache=True, nogil=True)
def _rotate_rows(A, a, b, c, s, start, stop):
    for col in range(start, stop):
        u = A[a, col]
        w = A[b, col]
        A[a, col] = c * u + s * w
        A[b, col] = -s.conjugate() * u + c * w


@njit(cache=True, nogil=True)
def _rotate_cols(A, a, b, c, s, stop):
    sc = s.conjugate()
    for row in range(stop):
        u = A[row, a]
        w = A[row, b]
        A[row, a] = c * u + sc * w
        A[row, b] = -s * u + c * w


@njit(cache=True, nogil=True)
def _qr_sweeps(H, P, tol, max_iter):
    """Reduce Hessenberg ``H`` to triangular form in place.

    ``P`` holds the transpose of the accumulated unitary so that the
    rotations touch contiguous rows.  Returns the total iteration count,
    or ``-1 - count`` if the cap was hit.
    """
    n = H.shape[0]
    hnorm = 0.0
    for i in range(n):
        for j in range(n):
            hnorm = max(hnorm, abs(H[i, j]))
    floor = 2.220446049250313e-16 * hnorm
    total = 0
    its = 0
    hi = n - 1
    while hi > 0:
        lo = hi
        while lo > 0:
            s = abs(H[lo - 1, lo - 1]) + abs(H[lo, lo])
            if s == 0.0:
                s = hnorm
            # local test, plus a norm-wise floor for blocks at roundoff level
            sub = abs(H[lo, lo - 1])
            if sub <= tol * s or sub <= floor:
                H[lo, lo - 1] = 0.0
                break
            lo -= 1
        if lo == hi:
            hi -= 1
            its = 0
            continue
        if total >= max_iter:
            return -1 - total
        its += 1
        total += 1

        if its % 10 == 0:
            # exceptional shift to break cycles
            mu = H[hi, hi] + 0.75 * abs(H[hi, hi - 1])
        else:
            a = H[hi - 1, hi - 1]
            b = H[hi - 1, hi]
            c = H[hi, hi - 1]
            d = H[hi, hi]
            half = 0.5 * (a - d)
            disc = np.sqrt(half * half + b * c)
            l1 = 0.5 * (a + d) + disc
            l2 = 0.5 * (a + d) - disc
            mu = l1 if abs(l1 - d) <= abs(l2 - d) else l2

        x = H[lo, lo] - mu
        y = H[lo + 1, lo]
        for j in range(lo, hi):
            if j > lo:
                x = H[j, j - 1]
                y = H[j + 1, j - 1]
            cr, sr = _givens(x, y)
            start = j - 1 if j > lo else lo
            _rotate_rows(H, j, j + 1, cr, sr, start, n)
            if j > lo:
                H[j + 1, j - 1] = 0.0
            _rotate_cols(H, j, j + 1, cr, sr, min(j + 3, hi + 1))
            _rotate_rows(P, j, j + 1, cr, sr.conjugate(), 0, n)
    return total


def schur(X: np.ndarray) -> SchurForm:
    """Complex Schur decomposition ``X = Q T Q*``.

    Raises :class:`NumericalFailure` if the QR iteration exceeds
    ``SWEEPS_PER_DIM * k`` sweeps; the exception carries the input's norm
    and condition estimate.
    """
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[0] != X.shape[1] or X.shape[0] == 0:
        raise ShapeError(f"expected a non-empty square matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidParameter("matrix has non-finite entries")
    k = X.shape[0]
    H, Q = hessenberg(X)
    P = np.ascontiguousarray(Q.T)
    count = _qr_sweeps(H, P, DEFLATION_TOL, SWEEPS_PER_DIM * k)
    if count < 0:
        raise NumericalFailure(
            f"QR iteration did not converge within {SWEEPS_PER_DIM * k} sweeps",
            {"k": k, "norm_fro": float(np.linalg.norm(X)),
             "condition": float(np.linalg.cond(X)), "sweeps": -1 - count})
    T = np.triu(H)
    Q = P.T.copy()
    xnorm = np.linalg.norm(X)
    if xnorm > 0:
        # scale first so that tiny inputs do not underflow the norm
        residual = float(np.linalg.norm((X - Q @ T @ Q.conj().T) / xnorm))
    else:
        residual = float(np.linalg.norm(Q @ T @ Q.conj().T))
    return SchurForm(q=Q, t=T, residual=residual, iterations=int(count))


def eigenvalues(X: np.ndarray) -> SpectralSample:
    """Eigenvalues as the diagonal of the Schur factor, in deflation order."""
    return SpectralSample.from_eigenvalues(np.diag(schur(X).t).copy())


def disk_radius(eps: float, c: float = 1.0) -> float:
    """Radius ``c * log(1 + eps^-2)^{-1/2}`` of the Brown-measure disk of ``c(T + eps Y)``."""
    if not eps > 0 or not c > 0:
        raise InvalidParameter(f"eps and c must be positive, got eps={eps}, c={c}")
    return c / math.sqrt(math.log1p(eps ** -2))


def ks_radial(radii_sorted, cdf) -> float:
    """Two-sided Kolmogorov-Smirnov distance of sorted radii to a radial CDF."""
    r = np.asarray(radii_sorted, dtype=float)
    k = len(r)
    F = np.asarray(cdf(r), dtype=float)
    i = np.arange(1, k + 1)
    return float(max(np.max(i / k - F), np.max(F - (i - 1) / k)))


def ks_uniform_disk(sample: SpectralSample, r_max: float) -> float:
    """KS distance between the radial ESD and ``F(r) = min(1, (r/r_max)^2)``."""
    if not r_max > 0:
        raise InvalidParameter(f"r_max must be positive, got {r_max}")
    return ks_radial(sample.radii_sorted, lambda r: np.minimum(1.0, (r / r_max) ** 2))


def spectral_radius(sample: SpectralSample) -> float:
    return float(sample.radii_sorted[-1])


def median_radius(sample: SpectralSample) -> float:
    return float(np.median(sample.radii_sorted))


def angular_chi_square(sample: SpectralSample, sectors: int = 16) -> tuple[float, float]:
    """Chi-square statistic and p-value of eigenvalue angles against uniform sectors.

    Diagnostic only; zero eigenvalues have no angle and are dropped.
    """
    from scipy.stats import chi2

    ev = sample.eigenvalues[np.abs(sample.eigenvalues) > 0]
    if len(ev) == 0:
        return 0.0, 1.0
    theta = np.mod(np.angle(ev), 2 * np.pi)
    counts = np.bincount(np.minimum((theta / (2 * np.pi) * sectors).astype(int), sectors - 1),
                         minlength=sectors)
    expected = len(ev) / sectors
    stat = float(np.sum((counts - expected) ** 2) / expected)
    return stat, float(chi2.sf(stat, sectors - 1))


def radial_cdf_table(sample: SpectralSample, r_max: float) -> np.ndarray:
    """Rows ``(r, F_emp, F_theory)`` at each sorted radius."""
    r = sample.radii_sorted
    k = len(r)
    return np.column_stack([r, np.arange(1, k + 1) / k, np.minimum(1.0, (r / r_max) ** 2)])
