"""Seeded samplers for the weighted Gaussian matrix models.

Every sampler is a pure function of a :class:`SampleConfig`.  The random
stream for ``(seed, trial_index)`` is a Philox-4x64 counter generator keyed
by ``SeedSequence(seed, spawn_key=(trial_index,))``; complex Gaussians are
produced from its uniforms by the Box-Muller transform::

    z = sqrt(-log(u1)) * exp(2j * pi * u2),   u1 in (0, 1], u2 in [0, 1)

which has independent real and imaginary parts of variance 1/2 each.
Uniforms for a ``k x k`` draw are taken as one ``(2, k, k)`` block, ``u1``
first.  Reimplementations following this recipe match these samplers in
distribution; runs of this package match bit for bit.

All models use entry variance ``value / k`` so that a full unit kernel
gives ``tr_k(X* X) -> 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidParameter, ShapeError
from .kernel import CellFill, GridKernel, build_lifted

__all__ = [
    "SampleConfig", "complex_gaussian", "ginibre", "dt_sample", "d_microstate",
    "variance_mask", "weighted_sample", "lifted_sample", "perturbed_dt",
    "kernel_recovery", "hs_norm", "expected_trace", "cell_targets",
]


@dataclass(frozen=True)
class SampleConfig:
    k: int
    seed: int = 0
    trial_index: int = 0

    def __post_init__(self):
        for name in ("k", "seed", "trial_index"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise InvalidParameter(f"{name} must be an integer, got {v!r}")
        if self.k < 1:
            raise InvalidParameter(f"k must be at least 1, got {self.k}")
        if not 0 <= self.seed < 2 ** 64:
            raise InvalidParameter(f"seed must fit in 64 unsigned bits, got {self.seed}")
        if self.trial_index < 0:
            raise InvalidParameter(f"trial_index must be nonnegative, got {self.trial_index}")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.trial_index),))
        return np.random.Generator(np.random.Philox(ss))


def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard complex Gaussians (``E|z|^2 = 1``) via Box-Muller."""
    u = rng.random((2,) + tuple(shape))
    return np.sqrt(-np.log1p(-u[0])) * np.exp(2j * np.pi * u[1])


def _masked(draw: np.ndarray, var: np.ndarray) -> np.ndarray:
    x = draw * np.sqrt(var)
    x[var == 0] = 0
    return x


def _strict_upper_var(k: int, scale: float) -> np.ndarray:
    return np.triu(np.full((k, k), scale), 1)


def ginibre(cfg: SampleConfig) -> np.ndarray:
    """i.i.d. complex Gaussian entries of variance ``1/k``."""
    k = cfg.k
    return _masked(complex_gaussian(cfg.generator(), (k, k)), np.full((k, k), 1.0 / k))


def dt_sample(cfg: SampleConfig) -> np.ndarray:
    """Strictly upper-triangular Gaussian matrix (variance ``1/k`` above the diagonal)."""
    k = cfg.k
    return _masked(complex_gaussian(cfg.generator(), (k, k)), _strict_upper_var(k, 1.0 / k))


def d_microstate(k: int) -> np.ndarray:
    """Diagonal matrix of interval midpoints ``(2i - 1) / (2k)``."""
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or k < 1:
        raise InvalidParameter(f"k must be a positive integer, got {k!r}")
    return np.diag((2 * np.arange(1, k + 1) - 1) / (2.0 * k)).astype(complex)


def variance_mask(K: GridKernel, k: int) -> np.ndarray:
    """Entry variances of the weighted model ``M(sqrt(H), Z)`` at size ``k``."""
    if k % K.n:
        raise ShapeError(f"matrix size {k} is not divisible by grid order {K.n}")
    b = k // K.n
    var = np.zeros((k, k))
    tri = np.triu(np.ones((b, b)), 1)
    for i, j, f, v in K.cells():
        block = float(v) / k
        var[i * b:(i + 1) * b, j * b:(j + 1) * b] = block if f == CellFill.FULL else block * tri
    return var


def weighted_sample(K: GridKernel, cfg: SampleConfig) -> np.ndarray:
    """Gaussian matrix with block variances read off the kernel cells.

    A half-filled cell gives a strictly upper-triangular block, so
    ``weighted_sample(build_upper_triangle(n), cfg)`` equals
    ``dt_sample(cfg)`` exactly.
    """
    var = variance_mask(K, cfg.k)
    return _masked(complex_gaussian(cfg.generator(), var.shape), var)


def lifted_sample(N: int, p: int, c, cfg: SampleConfig, independent_diagonal=False) -> np.ndarray:
    """Block-lifted DT matrix of size ``cfg.k = N * p * b``.

    One DT sample of size ``m = p*b`` sits in every diagonal block, block
    ``(i, j)`` holds an independent size-``m`` Ginibre sample times
    ``c[i][j]``, and the whole matrix is scaled by ``1/sqrt(N)``.  With
    ``independent_diagonal`` each diagonal block gets its own DT sample.
    """
    build_lifted(N, p, c)  # validates N, p and c
    coef = np.array([[float(x) for x in row] for row in c])
    if cfg.k % (N * p):
        raise ShapeError(f"matrix size {cfg.k} is not divisible by N*p = {N * p}")
    m = cfg.k // N
    rng = cfg.generator()
    dt_var = _strict_upper_var(m, 1.0 / m)
    full_var = np.full((m, m), 1.0 / m)
    diag_blocks = [_masked(complex_gaussian(rng, (m, m)), dt_var)]
    if independent_diagonal:
        diag_blocks += [_masked(complex_gaussian(rng, (m, m)), dt_var) for _ in range(N - 1)]
    else:
        diag_blocks *= N
    out = np.zeros((cfg.k, cfg.k), dtype=complex)
    for i in range(N):
        out[i * m:(i + 1) * m, i * m:(i + 1) * m] = diag_blocks[i]
    for i in range(N):
        for j in range(N):
            if i != j:
                g = _masked(complex_gaussian(rng, (m, m)), full_var)
                out[i * m:(i + 1) * m, j * m:(j + 1) * m] = coef[i, j] * g
    return out / np.sqrt(N)


def perturbed_dt(cfg: SampleConfig, eps: float, c: float = 1.0) -> np.ndarray:
    """``c * (y + eps * w)`` with ``y = dt_sample(cfg)`` and ``w`` an independent Ginibre draw."""
    if not eps > 0:
        raise InvalidParameter(f"eps must be positive, got {eps}")
    if not c > 0:
        raise InvalidParameter(f"c must be positive, got {c}")
    k = cfg.k
    rng = cfg.generator()
    y = _masked(complex_gaussian(rng, (k, k)), _strict_upper_var(k, 1.0 / k))
    w = _masked(complex_gaussian(rng, (k, k)), np.full((k, k), 1.0 / k))
    return c * (y + eps * w)


def kernel_recovery(X: np.ndarray, n: int) -> np.ndarray:
    """Empirical cell kernel ``(n^2 / k) * sum_{block} |x|^2``."""
    k = X.shape[0]
    if X.shape != (k, k):
        raise ShapeError(f"expected a square matrix, got shape {X.shape}")
    if k % n:
        raise ShapeError(f"matrix size {k} is not divisible by grid order {n}")
    b = k // n
    power = (np.abs(X) ** 2).reshape(n, b, n, b).sum(axis=(1, 3))
    return power * (n * n / k)


def hs_norm(X: np.ndarray) -> float:
    """Normalised Hilbert-Schmidt norm ``tr_k(X* X)^{1/2}``."""
    X = np.asarray(X)
    return float(np.sqrt(np.sum(np.abs(X) ** 2) / X.shape[0]))


def expected_trace(K: GridKernel, k: int) -> Fraction:
    """Exact ``E tr_k(X* X)`` for ``X = weighted_sample(K, .)`` at size ``k``."""
    if k % K.n:
        raise ShapeError(f"matrix size {k} is not divisible by grid order {K.n}")
    b = k // K.n
    total = Fraction(0)
    for _, _, f, v in K.cells():
        total += v * (b * b if f == CellFill.FULL else b * (b - 1) // 2)
    return total / (k * k)


def cell_targets(K: GridKernel, k: int) -> np.ndarray:
    """Exact ``E`` of :func:`kernel_recovery` per cell, as an object array of Fractions.

    Full cells recover their value; half-filled cells recover
    ``value * (b - 1) / (2b)`` with ``b = k / n``.
    """
    if k % K.n:
        raise ShapeError(f"matrix size {k} is not divisible by grid order {K.n}")
    b = k // K.n
    out = np.empty((K.n, K.n), dtype=object)
    out.fill(Fraction(0))
    for i, j, f, v in K.cells():
        out[i, j] = v if f == CellFill.FULL else v * Fraction(b - 1, 2 * b)
    return out
