"""Matrix Market ingestion and output (thin layer over scipy.io)."""
from __future__ import annotations

import os

import numpy as np
import scipy.io as sio
import scipy.sparse as sp


class MatrixMarketError(ValueError):
    pass


class MalformedHeaderError(MatrixMarketError):
    pass


class IndexRangeError(MatrixMarketError):
    pass


class FieldError(MatrixMarketError):
    pass


_REAL_FIELDS = ("real", "integer", "pattern")


def read_matrix_market(path) -> np.ndarray:
    """Read a real coordinate file into a dense symmetric array.

    Symmetric storage is expanded.  General files must hold a symmetric matrix
    (to 1e-12 relative); anything else is rejected.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    try:
        rows, cols, _, fmt, fld, symm = sio.mminfo(path)
    except ValueError as exc:
        raise MalformedHeaderError(f"{path}: {exc}") from None
    if fmt != "coordinate":
        raise MalformedHeaderError(f"{path}: expected coordinate format, got {fmt}")
    if fld not in _REAL_FIELDS:
        raise FieldError(f"{path}: field {fld!r} is not real")
    if rows != cols:
        raise MatrixMarketError(f"{path}: matrix is {rows}x{cols}, not square")
    try:
        m = sio.mmread(path)
    except ValueError as exc:
        msg = str(exc)
        if "out of bounds" in msg:
            raise IndexRangeError(f"{path}: {msg}") from None
        raise MatrixMarketError(f"{path}: {msg}") from None
    dense = m.toarray() if sp.issparse(m) else np.asarray(m)
    dense = np.asarray(dense, dtype=np.float64)
    if symm == "general":
        scale = max(np.abs(dense).max(initial=0.0), 1.0)
        if np.abs(dense - dense.T).max(initial=0.0) > 1e-12 * scale:
            raise MatrixMarketError(f"{path}: general matrix is not symmetric")
    return dense


def write_matrix_market(path, m, comment: str = "") -> None:
    """Write the lower triangle in symmetric coordinate form, 17 digits."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix")
    coo = sp.coo_matrix(np.tril(m)) if np.array_equal(m, m.T) else sp.coo_matrix(m)
    sym = "symmetric" if np.array_equal(m, m.T) else "general"
    sio.mmwrite(str(path), coo, comment=comment, field="real", precision=17,
                symmetry=sym)
