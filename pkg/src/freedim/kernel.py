"""Piecewise-constant kernels on the unit square.

A :class:`GridKernel` describes a nonnegative function ``H(s, t)`` on
``[0, 1]^2`` that is constant on the cells of a regular ``n x n`` grid,
except that a cell may be only half filled: the open triangle above the
cell's own diagonal.  That is enough to represent the strict upper
triangle ``1_{s<t}`` exactly at every grid order, along with band and
block-lifted variants of it.

Cell ``(i, j)`` (0-based) covers ``[i/n, (i+1)/n] x [j/n, (j+1)/n]``; the
first index runs over the first coordinate ``s``.  Cell values are stored
as :class:`fractions.Fraction`, so areas, masses and the dimension bound
formulas come out as exact rationals.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (DomainError, InvalidParameter, KernelSpecError,
                     RefinementError, UnsupportedRegion)

__all__ = [
    "CellFill", "GridKernel", "StepFunction", "HypothesisReport",
    "build_constant", "build_upper_triangle", "build_diagonal_triangles",
    "build_band", "build_lifted", "from_cells", "refine",
    "support_area", "l1_mass", "ce_sup", "pair_integral",
    "alpha_eval", "beta_eval", "theorem_main_hypothesis",
    "delta0_lower", "delta0_upper", "log_max_integral", "kn_support_area",
    "continuum_band_area", "kernel_to_json", "kernel_from_json",
]


class CellFill(enum.IntEnum):
    EMPTY = 0
    FULL = 1
    TRI = 2  # open triangle s - s0 < t - t0 inside the cell


def _as_fraction(value, what="value") -> Fraction:
    if isinstance(value, bool):
        raise InvalidParameter(f"{what} must be a number, got {value!r}")
    if isinstance(value, Rational):
        return Fraction(value)
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise InvalidParameter(f"{what} must be a number, got {value!r}") from None
    if not math.isfinite(x):
        raise InvalidParameter(f"{what} must be finite, got {value!r}")
    return Fraction(x)


def _check_order(n, name="n"):
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidParameter(f"{name} must be a positive integer, got {n!r}")
    return int(n)


@dataclass(frozen=True, eq=False)
class GridKernel:
    """Kernel constant on the cells of the regular ``n x n`` grid.

    Use the ``build_*`` functions or :func:`from_cells` rather than the
    constructor; they normalise zero-valued cells to ``EMPTY``.
    """

    n: int
    fill: np.ndarray    # (n, n) int8 CellFill codes, read-only
    values: np.ndarray  # (n, n) object array of Fraction, read-only

    def __post_init__(self):
        if self.fill.shape != (self.n, self.n) or self.values.shape != (self.n, self.n):
            raise InvalidParameter("fill and values must be n x n")
        self.fill.setflags(write=False)
        self.values.setflags(write=False)

    def __eq__(self, other):
        if not isinstance(other, GridKernel):
            return NotImplemented
        return (self.n == other.n and np.array_equal(self.fill, other.fill)
                and all(a == b for a, b in zip(self.values.flat, other.values.flat)))

    __hash__ = None

    @property
    def cell_area(self) -> Fraction:
        return Fraction(1, self.n * self.n)

    def value_array(self) -> np.ndarray:
        """Cell values as float64."""
        return np.array([[float(v) for v in row] for row in self.values], dtype=float)

    def cells(self):
        """Yield ``(i, j, fill, value)`` for every non-empty cell in row-major order."""
        for i in range(self.n):
            for j in range(self.n):
                f = CellFill(int(self.fill[i, j]))
                if f != CellFill.EMPTY:
                    yield i, j, f, self.values[i, j]


def from_cells(n: int, cells: Iterable[tuple]) -> GridKernel:
    """Build a kernel from ``(i, j, fill, value)`` tuples; omitted cells are empty."""
    n = _check_order(n)
    fill = np.zeros((n, n), dtype=np.int8)
    values = np.empty((n, n), dtype=object)
    values.fill(Fraction(0))
    seen = set()
    for i, j, f, v in cells:
        if not (0 <= i < n and 0 <= j < n):
            raise InvalidParameter(f"cell ({i}, {j}) outside a {n} x {n} grid")
        if (i, j) in seen:
            raise InvalidParameter(f"cell ({i}, {j}) given twice")
        seen.add((i, j))
        f = CellFill(f)
        v = _as_fraction(v)
        if v < 0:
            raise InvalidParameter(f"cell ({i}, {j}) has negative value {v}")
        if f == CellFill.EMPTY or v == 0:
            continue
        fill[i, j] = f
        values[i, j] = v
    return GridKernel(n, fill, values)


def build_constant(n: int, c) -> GridKernel:
    n = _check_order(n)
    c = _as_fraction(c, "c")
    if c < 0:
        raise InvalidParameter(f"c must be nonnegative, got {c}")
    return from_cells(n, ((i, j, CellFill.FULL, c) for i in range(n) for j in range(n)))


def _upper_pattern(n, c):
    for i in range(n):
        yield i, i, CellFill.TRI, c
        for j in range(i + 1, n):
            yield i, j, CellFill.FULL, c


def build_upper_triangle(n: int) -> GridKernel:
    """Indicator of ``{s < t}`` at grid order ``n`` (exact for every ``n``)."""
    n = _check_order(n)
    return from_cells(n, _upper_pattern(n, 1))


def build_diagonal_triangles(r: int, c=1) -> GridKernel:
    """``c`` times the indicator of the ``r`` small triangles along the diagonal."""
    r = _check_order(r, "r")
    c = _as_fraction(c, "c")
    if c <= 0:
        raise InvalidParameter(f"c must be positive, got {c}")
    return from_cells(r, ((i, i, CellFill.TRI, c) for i in range(r)))


def build_band(n: int, w: int, c=1) -> GridKernel:
    """Band above the diagonal of width ``w/n``, discretised on the grid.

    Diagonal cells are half filled and the ``w - 1`` superdiagonals are full.
    """
    n = _check_order(n)
    if isinstance(w, bool) or not isinstance(w, (int, np.integer)) or not 1 <= w <= n:
        raise InvalidParameter(f"band width w must be in [1, {n}], got {w!r}")
    c = _as_fraction(c, "c")
    if c <= 0:
        raise InvalidParameter(f"c must be positive, got {c}")
    cells = []
    for i in range(n):
        cells.append((i, i, CellFill.TRI, c))
        for j in range(i + 1, min(n, i + w)):
            cells.append((i, j, CellFill.FULL, c))
    return from_cells(n, cells)


def build_lifted(N: int, p: int, c: Sequence[Sequence]) -> GridKernel:
    """Kernel of the block-lifted DT operator on an ``N*p`` grid.

    Each diagonal ``N``-block carries the strict upper triangle with value 1;
    off-diagonal block ``(i, j)`` is filled with ``c[i][j]**2``.
    """
    N = _check_order(N, "N")
    p = _check_order(p, "p")
    if N < 2:
        raise InvalidParameter(f"N must be at least 2, got {N}")
    try:
        rows = [list(row) for row in c]
    except TypeError:
        raise InvalidParameter("c must be an N x N nested sequence") from None
    if len(rows) != N or any(len(row) != N for row in rows):
        raise InvalidParameter(f"c must be {N} x {N}")
    coef = [[_as_fraction(x, "c_ij") for x in row] for row in rows]
    for i in range(N):
        if coef[i][i] != 0:
            raise InvalidParameter(f"c must have zero diagonal, c[{i}][{i}] = {coef[i][i]}")
        for j in range(N):
            if coef[i][j] < 0:
                raise InvalidParameter(f"c[{i}][{j}] must be nonnegative")
    cells = []
    for bi in range(N):
        for bj in range(N):
            if bi == bj:
                cells.extend((bi * p + a, bi * p + b, f, v) for a, b, f, v in _upper_pattern(p, 1))
            else:
                v = coef[bi][bj] ** 2
                cells.extend((bi * p + a, bj * p + b, CellFill.FULL, v)
                             for a in range(p) for b in range(p))
    return from_cells(N * p, cells)


def refine(K: GridKernel, q: int) -> GridKernel:
    """Same function on the grid of order ``q * K.n``.

    A half-filled cell splits into ``q`` half-filled diagonal sub-cells,
    full sub-cells above them and empty ones below.
    """
    q = _check_order(q, "q")
    cells = []
    for i, j, f, v in K.cells():
        for a in range(q):
            for b in range(q):
                if f == CellFill.FULL or a < b:
                    cells.append((i * q + a, j * q + b, CellFill.FULL, v))
                elif a == b:
                    cells.append((i * q + a, j * q + b, CellFill.TRI, v))
    return from_cells(K.n * q, cells)


# -- exact integrals -------------------------------------------------------

def support_area(K: GridKernel) -> Fraction:
    full = int(np.count_nonzero(K.fill == CellFill.FULL))
    tri = int(np.count_nonzero(K.fill == CellFill.TRI))
    return Fraction(2 * full + tri, 2 * K.n * K.n)


def l1_mass(K: GridKernel) -> Fraction:
    """``\\iint H ds dt``."""
    total = Fraction(0)
    for _, _, f, v in K.cells():
        total += v if f == CellFill.FULL else v / 2
    return total * K.cell_area


def ce_sup(K: GridKernel) -> tuple[Fraction, Fraction]:
    """Suprema of the two coordinate expectations of ``H``.

    Both are affine on each grid strip, so checking the two ends of every
    strip is exact.
    """
    n, h = K.n, Fraction(1, K.n)
    row_left = [Fraction(0)] * n   # CE1 at x -> i/n from the right
    row_right = [Fraction(0)] * n  # CE1 at x -> (i+1)/n from the left
    col_left = [Fraction(0)] * n
    col_right = [Fraction(0)] * n
    for i, j, f, v in K.cells():
        mass = v * h
        row_left[i] += mass
        col_right[j] += mass
        if f == CellFill.FULL:
            row_right[i] += mass
            col_left[j] += mass
    return max(row_left + row_right), max(col_left + col_right)


@dataclass(frozen=True)
class StepFunction:
    """Function on ``[0, 1]`` equal to ``values[i]`` on ``[i/n, (i+1)/n)``."""

    values: tuple

    def __init__(self, values):
        vals = tuple(_as_fraction(v, "step value") for v in values)
        if not vals:
            raise InvalidParameter("a step function needs at least one interval")
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return len(self.values)

    def __call__(self, x) -> Fraction:
        x = _as_fraction(x, "x")
        if not 0 <= x <= 1:
            raise DomainError(f"x = {x} outside [0, 1]")
        return self.values[min(math.floor(x * self.n), self.n - 1)]

    def refined(self, m: int) -> tuple:
        """Values on the ``m``-interval grid; ``n`` must divide ``m``."""
        if m % self.n:
            raise RefinementError(f"cannot refine {self.n} intervals to {m}")
        q = m // self.n
        return tuple(v for v in self.values for _ in range(q))

    def integral(self, a, b) -> Fraction:
        """Exact ``\\int_a^b f`` for ``0 <= a <= b <= 1``."""
        a, b = Fraction(a), Fraction(b)
        if not 0 <= a <= b <= 1:
            raise DomainError(f"bad integration range [{a}, {b}]")
        return self._primitive(b) - self._primitive(a)

    def _primitive(self, x: Fraction) -> Fraction:
        n = self.n
        i = min(math.floor(x * n), n - 1)
        return sum(self.values[:i], Fraction(0)) / n + self.values[i] * (x - Fraction(i, n))


def _common_order(K: GridKernel, *fs: StepFunction) -> int:
    for f in fs:
        if K.n % f.n and f.n % K.n:
            raise RefinementError(
                f"step function with {f.n} intervals is incompatible with grid order {K.n}")
    return math.lcm(K.n, *(f.n for f in fs))


def pair_integral(K: GridKernel, f: StepFunction, g: StepFunction) -> Fraction:
    """Exact ``\\iint f(s) H(s, t) g(t) ds dt``."""
    L = _common_order(K, f, g)
    R = refine(K, L // K.n) if L != K.n else K
    fv, gv = f.refined(L), g.refined(L)
    total = Fraction(0)
    for i, j, fill, v in R.cells():
        term = v * fv[i] * gv[j]
        total += term if fill == CellFill.FULL else term / 2
    return total * R.cell_area


def _locate(x, n) -> tuple[int, Fraction]:
    x = _as_fraction(x, "x")
    if not 0 <= x <= 1:
        raise DomainError(f"x = {x} outside [0, 1]")
    idx = min(math.floor(x * n), n - 1)
    return idx, x - Fraction(idx, n)


def alpha_eval(K: GridKernel, f: StepFunction, x) -> Fraction:
    """``alpha_H(f)(x) = \\int_0^1 H(t, x) f(t) dt`` (integrates out the first coordinate)."""
    _common_order(K, f)
    n, h = K.n, Fraction(1, K.n)
    j, u = _locate(x, n)
    total = Fraction(0)
    for i in range(n):
        fill = K.fill[i, j]
        if fill == CellFill.EMPTY:
            continue
        s0 = Fraction(i, n)
        upper = s0 + h if fill == CellFill.FULL else s0 + u
        total += K.values[i, j] * f.integral(s0, upper)
    return total


def beta_eval(K: GridKernel, f: StepFunction, x) -> Fraction:
    """``beta_H(f)(x) = \\int_0^1 H(x, t) f(t) dt`` (integrates out the second coordinate)."""
    _common_order(K, f)
    n, h = K.n, Fraction(1, K.n)
    i, u = _locate(x, n)
    total = Fraction(0)
    for j in range(n):
        fill = K.fill[i, j]
        if fill == CellFill.EMPTY:
            continue
        t0 = Fraction(j, n)
        lower = t0 if fill == CellFill.FULL else t0 + u
        total += K.values[i, j] * f.integral(lower, t0 + h)
    return total


# -- dimension-bound geometry ---------------------------------------------

@dataclass(frozen=True)
class HypothesisReport:
    holds: bool
    r: Optional[int] = None
    c: Optional[Fraction] = None
    failure_reason: Optional[str] = None
    valid_r: tuple = ()

    def __post_init__(self):
        if self.holds and (self.r is None or self.c is None):
            raise InvalidParameter("a holding report needs r and c")
        if not self.holds and not self.failure_reason:
            raise InvalidParameter("a failing report needs a reason")


def _divisors(n):
    return [d for d in range(1, n + 1) if n % d == 0]


def theorem_main_hypothesis(K: GridKernel) -> HypothesisReport:
    """Check the support condition of the lower dimension bound.

    The support must lie in the upper triangle, and for some ``r`` dividing
    ``n`` the kernel must equal one positive constant on all ``r`` diagonal
    triangles of side ``1/r``.
    """
    n = K.n
    for i in range(n):
        if K.fill[i, i] == CellFill.FULL:
            return HypothesisReport(False, failure_reason="support not in upper triangle")
        for j in range(i):
            if K.fill[i, j] != CellFill.EMPTY:
                return HypothesisReport(False, failure_reason="support not in upper triangle")

    valid = []
    c = None
    for r in _divisors(n):
        q = n // r
        vals = set()
        ok = True
        for b in range(r):
            for a in range(q):
                for a2 in range(a, q):
                    i, j = b * q + a, b * q + a2
                    want = CellFill.TRI if a == a2 else CellFill.FULL
                    if K.fill[i, j] != want:
                        ok = False
                        break
                    vals.add(K.values[i, j])
                if not ok:
                    break
            if not ok:
                break
        if ok and len(vals) == 1:
            valid.append(r)
            c = vals.pop()
    if not valid:
        return HypothesisReport(
            False, failure_reason="H is not a positive constant on any diagonal triangle family")
    return HypothesisReport(True, r=max(valid), c=c, valid_r=tuple(valid))


def delta0_lower(K: GridKernel) -> Optional[Fraction]:
    """``1 + 2 area(supp H)`` when the support hypothesis holds, else ``None``."""
    if not theorem_main_hypothesis(K).holds:
        return None
    return 1 + 2 * support_area(K)


def delta0_upper(K: GridKernel) -> Fraction:
    return min(Fraction(2), 1 + 2 * support_area(K))


def _kn_cells(K: GridKernel, N: int):
    N = _check_order(N, "N")
    if N < 2:
        raise InvalidParameter(f"N must be at least 2, got {N}")
    if K.n % N:
        raise RefinementError(f"N = {N} does not divide grid order {K.n}")
    q = K.n // N
    for i in range(K.n):
        for j in range(K.n):
            if i // q < j // q:
                yield i, j


def kn_support_area(K: GridKernel, N: int) -> Fraction:
    """Area of ``supp(H)`` inside the strictly-upper off-diagonal ``N``-blocks."""
    total = 0
    for i, j in _kn_cells(K, N):
        f = K.fill[i, j]
        total += 2 if f == CellFill.FULL else (1 if f == CellFill.TRI else 0)
    return Fraction(total, 2 * K.n * K.n)


def log_max_integral(K: GridKernel, eps: float, N: Optional[int] = None) -> float:
    """``\\iint log(max(H, eps))`` over the whole square, or over ``K_N`` if ``N`` is given.

    ``K_N`` is the union of the off-diagonal blocks above the diagonal of
    the ``N x N`` block grid.
    """
    eps = float(eps)
    if not (eps > 0 and math.isfinite(eps)):
        raise InvalidParameter(f"eps must be positive, got {eps}")
    log_eps = math.log(eps)
    h2 = 1.0 / (K.n * K.n)
    terms = []
    if N is None:
        for i in range(K.n):
            for j in range(K.n):
                f = K.fill[i, j]
                lv = math.log(max(float(K.values[i, j]), eps))
                if f == CellFill.FULL:
                    terms.append(h2 * lv)
                elif f == CellFill.TRI:
                    terms.append(0.5 * h2 * (lv + log_eps))
                else:
                    terms.append(h2 * log_eps)
    else:
        for i, j in _kn_cells(K, N):
            if K.fill[i, j] == CellFill.TRI:
                raise UnsupportedRegion(f"half-filled cell ({i}, {j}) lies inside K_{N}")
            terms.append(h2 * math.log(max(float(K.values[i, j]), eps)))
    return math.fsum(terms)


def continuum_band_area(alpha) -> Fraction:
    """Area of ``{0 <= x < y < min(1, x + alpha)}`` for ``alpha`` in ``[0, 1]``."""
    a = _as_fraction(alpha, "alpha")
    if not 0 <= a <= 1:
        raise InvalidParameter(f"alpha must lie in [0, 1], got {a}")
    return a - a * a / 2


# -- JSON ------------------------------------------------------------------

_FILL_NAMES = {"full": CellFill.FULL, "tri": CellFill.TRI}


def _json_number(v: Fraction):
    if v.denominator == 1:
        return int(v)
    return float(v)


def kernel_to_json(K: GridKernel) -> dict:
    """Canonical document: non-empty cells sorted row-major, 0-based indices."""
    cells = [{"i": i, "j": j, "fill": "full" if f == CellFill.FULL else "tri",
              "value": _json_number(v)} for i, j, f, v in K.cells()]
    return {"n": K.n, "cells": cells}


def kernel_from_json(doc) -> GridKernel:
    """Parse a kernel document (a dict or JSON text), reporting the offending field."""
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise KernelSpecError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise KernelSpecError("top level: expected an object with 'n' and 'cells'")
    extra = set(doc) - {"n", "cells"}
    if extra:
        raise KernelSpecError(f"top level: unknown field(s) {sorted(extra)}")
    n = doc.get("n")
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise KernelSpecError(f"n: expected a positive integer, got {n!r}")
    cells = doc.get("cells")
    if not isinstance(cells, list):
        raise KernelSpecError("cells: expected a list")
    parsed = []
    for idx, cell in enumerate(cells):
        where = f"cells[{idx}]"
        if not isinstance(cell, dict):
            raise KernelSpecError(f"{where}: expected an object")
        missing = {"i", "j", "fill", "value"} - set(cell)
        if missing:
            raise KernelSpecError(f"{where}: missing field(s) {sorted(missing)}")
        for key in ("i", "j"):
            x = cell[key]
            if isinstance(x, bool) or not isinstance(x, int) or not 0 <= x < n:
                raise KernelSpecError(f"{where}.{key}: expected an integer in [0, {n}), got {x!r}")
        fill = _FILL_NAMES.get(cell["fill"])
        if fill is None:
            raise KernelSpecError(f"{where}.fill: expected 'full' or 'tri', got {cell['fill']!r}")
        v = cell["value"]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v < 0:
            raise KernelSpecError(f"{where}.value: expected a finite number >= 0, got {v!r}")
        parsed.append((cell["i"], cell["j"], fill, v))
    try:
        return from_cells(n, parsed)
    except InvalidParameter as exc:
        raise KernelSpecError(f"cells: {exc}") from None
