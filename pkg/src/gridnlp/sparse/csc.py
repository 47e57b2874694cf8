"""Lower-triangle compressed sparse column storage for symmetric matrices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UpperTriangleEntry(ValueError):
    pass


@dataclass
class SparseSymmetric:
    """Symmetric matrix, lower triangle stored in CSC form.

    The sparsity (indptr/indices) is fixed; ``values`` may be rewritten
    freely between factorizations.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return self.indices.size

    def coords(self):
        """(rows, cols) coordinate arrays of the stored lower triangle."""
        cols = np.repeat(np.arange(self.n), np.diff(self.indptr))
        return self.indices.copy(), cols

    def to_dense(self) -> np.ndarray:
        rows, cols = self.coords()
        a = np.zeros((self.n, self.n))
        a[rows, cols] = self.values
        a[cols, rows] = self.values
        return a

    def norm1(self) -> float:
        rows, cols = self.coords()
        s = np.zeros(self.n)
        av = np.abs(self.values)
        np.add.at(s, rows, av)
        off = rows != cols
        np.add.at(s, cols[off], av[off])
        return float(s.max()) if self.n else 0.0


def coo_to_csc(n, rows, cols, values, accumulate=True):
    """Build lower-triangle CSC from coordinates.

    Returns ``(matrix, slot_map)``; ``slot_map[k]`` is the storage slot of
    input entry ``k``, allowing repeated numeric re-assembly with
    ``values[slot_map] += entry_values`` style scatters.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    if rows.size and np.any(cols > rows):
        k = int(np.argmax(cols > rows))
        raise UpperTriangleEntry(f"entry ({rows[k]}, {cols[k]}) lies above the diagonal")
    keys = cols << 32 | rows  # column-major order
    uniq, slot_map = np.unique(keys, return_inverse=True)
    if not accumulate and uniq.size != keys.size:
        raise ValueError("duplicate coordinates without accumulate")
    vals = np.zeros(uniq.size)
    np.add.at(vals, slot_map, values)
    ucols = (uniq >> 32).astype(np.int64)
    urows = (uniq & 0xFFFFFFFF).astype(np.int64)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, ucols + 1, 1)
    np.cumsum(indptr, out=indptr)
    return SparseSymmetric(n=n, indptr=indptr, indices=urows, values=vals), slot_map
