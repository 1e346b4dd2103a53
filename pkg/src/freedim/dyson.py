"""Dyson's measure on upper-triangular matrices.

A unitarily invariant law on ``M_k(C)`` pulls back to a law on upper
triangular matrices with density ``C_k * prod_{p<q} |a_pp - a_qq|^2``
against Lebesgue measure on the on- and above-diagonal entries, where
``C_k = pi^{k(k+1)/2} / prod_{j=1}^k j!``.  Everything here is in log
scale: ``C_k`` overflows a double around ``k = 30``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter, ShapeError
from .randmat import SampleConfig, ginibre
from .spectra import schur

__all__ = ["DysonLogDensity", "log_c", "log_density", "interaction", "dyson_sample"]

_TRIANGULAR_TOL = 1e-12


@dataclass(frozen=True)
class DysonLogDensity:
    log_c: float
    interaction: float  # 2 * sum_{p<q} log|a_pp - a_qq|, -inf on a collision
    total: float

    @property
    def degenerate(self) -> bool:
        return self.total == -math.inf


def log_c(k: int) -> float:
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or k < 1:
        raise InvalidParameter(f"k must be a positive integer, got {k!r}")
    k = int(k)
    return math.fsum([k * (k + 1) / 2 * math.log(math.pi)]
                     + [-math.lgamma(j + 1) for j in range(1, k + 1)])


def interaction(diag) -> float:
    d = np.asarray(diag, dtype=complex)
    gaps = np.abs(d[:, None] - d[None, :])[np.triu_indices(len(d), 1)]
    if np.any(gaps == 0):
        return -math.inf
    return 2.0 * math.fsum(np.log(gaps))


def log_density(T: np.ndarray) -> DysonLogDensity:
    """Log of Dyson's density at an upper-triangular matrix."""
    T = np.asarray(T)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {T.shape}")
    if np.any(np.abs(np.tril(T, -1)) > _TRIANGULAR_TOL):
        raise ShapeError("matrix is not upper triangular")
    lc = log_c(T.shape[0])
    inter = interaction(np.diag(T))
    return DysonLogDensity(lc, inter, lc + inter if math.isfinite(inter) else -math.inf)


def dyson_sample(cfg: SampleConfig) -> np.ndarray:
    """Triangular representative of a Ginibre draw: the Schur ``T`` of ``ginibre(cfg)``."""
    return schur(ginibre(cfg)).t
