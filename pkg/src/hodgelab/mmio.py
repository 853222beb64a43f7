"""Matrix Market input and output (coordinate format, 1-based indices)."""

from __future__ import annotations

import io

import numpy as np
import scipy.io
import scipy.sparse as sp

from .complex_core import ComplexOperator, InnerProductSpace


def write_matrix(path, matrix, comment=""):
    """Write a sparse or dense matrix in coordinate format, full double precision."""
    m = sp.coo_matrix(matrix)
    buf = io.BytesIO()
    scipy.io.mmwrite(buf, m, comment=comment, field="real", precision=17, symmetry="general")
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_matrix(path):
    m = scipy.io.mmread(path)
    return sp.csr_matrix(m, dtype=float) if sp.issparse(m) else sp.csr_matrix(np.asarray(m, dtype=float))


def read_operator(path, rank_tol=1e-10):
    """Operator with Euclidean metrics on both sides."""
    m = read_matrix(path)
    rows, cols = m.shape
    return ComplexOperator(m, InnerProductSpace.euclidean(cols), InnerProductSpace.euclidean(rows),
                           rank_tol=rank_tol, name="A")


def read_vector(path):
    """Vector from a Matrix Market file (one column) or plain text, one value per line."""
    with open(path, "rb") as fh:
        head = fh.read(14)
    if head.startswith(b"%%MatrixMarket"):
        m = scipy.io.mmread(path)
        m = m.toarray() if sp.issparse(m) else np.asarray(m)
        return np.asarray(m, dtype=float).ravel()
    return np.loadtxt(path, dtype=float, ndmin=1)
