"""Matrix persistence.

Two formats:

* CSV with header ``i,j,re,im`` (0-based indices), one line per entry.
* Raw: 16-byte header (magic ``CMPXMAT1``, little-endian ``u32 k``,
  ``u32`` reserved = 0) followed by ``k*k`` little-endian float64 pairs
  ``re, im`` in row-major order.  A raw file may hold several records
  back to back; point clouds are stored that way.
"""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

from .errors import ShapeError

__all__ = ["write_csv", "read_csv", "write_raw", "read_raw", "read_raw_all",
           "load_matrices", "save_matrix", "MAGIC"]

MAGIC = b"CMPXMAT1"
_HEADER = struct.Struct("<8sII")


def _square(X):
    X = np.asarray(X, dtype=complex)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {X.shape}")
    return X


def csv_text(X) -> str:
    X = _square(X)
    buf = io.StringIO()
    buf.write("i,j,re,im\n")
    k = X.shape[0]
    for i in range(k):
        for j in range(k):
            z = X[i, j]
            buf.write(f"{i},{j},{float(z.real)!r},{float(z.imag)!r}\n")
    return buf.getvalue()


def write_csv(X, path) -> None:
    Path(path).write_text(csv_text(X))


def read_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or rows[0] != ["i", "j", "re", "im"]:
        raise ShapeError(f"{path}: missing 'i,j,re,im' header")
    entries = [(int(i), int(j), float(re), float(im)) for i, j, re, im in rows[1:]]
    k = max(max(e[0], e[1]) for e in entries) + 1 if entries else 0
    if len(entries) != k * k:
        raise ShapeError(f"{path}: expected {k * k} entries for k={k}, found {len(entries)}")
    X = np.zeros((k, k), dtype=complex)
    for i, j, re, im in entries:
        X[i, j] = complex(re, im)
    return X


def raw_bytes(X) -> bytes:
    X = _square(X)
    return _HEADER.pack(MAGIC, X.shape[0], 0) + X.astype("<c16").tobytes(order="C")


def write_raw(X, path) -> None:
    Path(path).write_bytes(raw_bytes(X))


def _parse_raw(data: bytes, path="<bytes>"):
    out = []
    pos = 0
    while pos < len(data):
        if len(data) - pos < _HEADER.size:
            raise ShapeError(f"{path}: truncated header at byte {pos}")
        magic, k, _ = _HEADER.unpack_from(data, pos)
        if magic != MAGIC:
            raise ShapeError(f"{path}: bad magic at byte {pos}")
        pos += _HEADER.size
        nbytes = 16 * k * k
        if len(data) - pos < nbytes:
            raise ShapeError(f"{path}: truncated payload for k={k}")
        out.append(np.frombuffer(data, dtype="<c16", count=k * k, offset=pos)
                   .reshape(k, k).astype(complex))
        pos += nbytes
    return out


def read_raw_all(path) -> list[np.ndarray]:
    return _parse_raw(Path(path).read_bytes(), path)


def read_raw(path) -> np.ndarray:
    mats = read_raw_all(path)
    if len(mats) != 1:
        raise ShapeError(f"{path}: expected one matrix, found {len(mats)}")
    return mats[0]


def save_matrix(X, path, fmt="csv") -> None:
    if fmt == "csv":
        write_csv(X, path)
    elif fmt == "raw":
        write_raw(X, path)
    else:
        raise ValueError(f"unknown matrix format {fmt!r}")


def load_matrices(path) -> list[np.ndarray]:
    """Matrices from a raw file (one or more records), a CSV file, or a directory of either."""
    p = Path(path)
    if p.is_dir():
        out = []
        for child in sorted(p.iterdir()):
            if child.suffix in (".csv", ".bin", ".raw"):
                out.extend(load_matrices(child))
        return out
    with open(p, "rb") as fh:
        head = fh.read(len(MAGIC))
    if head == MAGIC:
        return read_raw_all(p)
    return [read_csv(p)]
