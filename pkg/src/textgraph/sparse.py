"""Compressed sparse-row helpers.

Matrices are plain ``scipy.sparse.csr_matrix`` objects kept in canonical
form (sorted column indices, no duplicates, float64 values). The helpers
here build them, validate them and move them to and from a small text
format::

    rows cols nnz
    row col value
    ...
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.sparse as sp


class SparseFormatError(ValueError):
    pass


def canonical(m) -> sp.csr_matrix:
    """Return ``m`` as a canonical float64 CSR matrix (copy when needed)."""
    out = sp.csr_matrix(m, dtype=np.float64)
    out.sum_duplicates()
    out.sort_indices()
    out.eliminate_zeros()
    return out


def binary_from_pairs(rows, cols, shape: tuple[int, int]) -> sp.csr_matrix:
    """Binary CSR matrix with a 1 at every listed (row, col); repeats collapse."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    m = sp.csr_matrix(
        (np.ones(len(rows), dtype=np.float64), (rows, cols)), shape=shape
    )
    m.sum_duplicates()
    m.data[:] = 1.0
    m.sort_indices()
    return m


def check_csr(m: sp.csr_matrix) -> None:
    """Raise ``SparseFormatError`` unless the CSR structure is canonical."""
    rows, cols = m.shape
    indptr, indices = m.indptr, m.indices
    if len(indptr) != rows + 1 or indptr[0] != 0 or indptr[-1] != len(indices):
        raise SparseFormatError("row offsets inconsistent with shape")
    if np.any(np.diff(indptr) < 0):
        raise SparseFormatError("row offsets must be nondecreasing")
    if len(indices) and (indices.min() < 0 or indices.max() >= cols):
        raise SparseFormatError("column index out of range")
    for r in range(rows):
        seg = indices[indptr[r]:indptr[r + 1]]
        if len(seg) > 1 and np.any(np.diff(seg) <= 0):
            raise SparseFormatError(f"row {r}: column indices not strictly increasing")


def row_set(m: sp.csr_matrix, i: int) -> set[int]:
    return set(m.indices[m.indptr[i]:m.indptr[i + 1]].tolist())


def write_sparse(m: sp.csr_matrix, path: str | Path) -> None:
    m = canonical(m)
    coo = m.tocoo()
    lines = [f"{m.shape[0]} {m.shape[1]} {m.nnz}"]
    lines += [f"{r} {c} {v!r}" for r, c, v in zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_sparse(path: str | Path) -> sp.csr_matrix:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    try:
        rows, cols, nnz = (int(x) for x in lines[0].split())
    except ValueError as exc:
        raise SparseFormatError(f"bad header {lines[0]!r}") from exc
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != nnz:
        raise SparseFormatError(f"header says {nnz} entries, found {len(body)}")
    r = np.empty(nnz, dtype=np.int64)
    c = np.empty(nnz, dtype=np.int64)
    v = np.empty(nnz, dtype=np.float64)
    for k, ln in enumerate(body):
        a, b, val = ln.split()
        r[k], c[k], v[k] = int(a), int(b), float(val)
    if nnz and (r.min() < 0 or r.max() >= rows or c.min() < 0 or c.max() >= cols):
        raise SparseFormatError("entry outside declared shape")
    return canonical(sp.csr_matrix((v, (r, c)), shape=(rows, cols)))
