"""Sparse Cholesky with a fixed pivot sequence.

The factorization is split the way repeated interior-point solves use it:

* ``symbolic_cholesky`` runs once per sparsity pattern.  It permutes the
  pattern, builds the elimination tree, computes the row pattern of every
  factor row (the reach of the row's entries in the tree) and allocates
  the factor structure.
* ``factorize`` reruns only the numeric up-looking kernel on fresh
  values.  The pivot order never changes, so refactorization is
  deterministic: identical values give bit-identical factors.  A pivot
  at or below ``PIVOT_FLOOR`` aborts with a not-positive-definite signal,
  which doubles as the inertia test for the condensed KKT system.

The numeric kernel and the triangular solves are JIT-compiled.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

PIVOT_FLOOR = 1e-30


@dataclass
class SymbolicFactorization:
    n: int
    perm: np.ndarray          # position -> original index
    parent: np.ndarray        # elimination tree on permuted indices
    # permuted lower-triangle rows of A, CSR-like, with source slots
    a_rowptr: np.ndarray
    a_rowcol: np.ndarray
    a_srcslot: np.ndarray
    # factor row patterns (strictly below-diagonal columns per row)
    row_ptr: np.ndarray
    row_cols: np.ndarray
    # factor structure, CSC
    l_colptr: np.ndarray
    l_rowidx: np.ndarray

    @property
    def factor_nnz(self) -> int:
        return self.l_rowidx.size


@dataclass
class NumericFactor:
    symbolic: SymbolicFactorization
    values: np.ndarray
    ok: bool
    failing_column: int = -1


def elimination_tree(n, row_ptr, row_cols):
    """Liu's ancestor-compression elimination tree construction."""
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        for t in range(row_ptr[k], row_ptr[k + 1]):
            i = row_cols[t]
            while ancestor[i] != -1 and ancestor[i] != k:
                nxt = ancestor[i]
                ancestor[i] = k
                i = nxt
            if ancestor[i] == -1 and i != k:
                ancestor[i] = k
                parent[i] = k
    return parent


def _row_patterns(n, a_rowptr, a_rowcol, parent):
    """Factor row patterns: reach of each A-row in the elimination tree."""
    mark = np.full(n, -1, dtype=np.int64)
    rows = []
    ptr = np.zeros(n + 1, dtype=np.int64)
    for k in range(n):
        pat = []
        mark[k] = k
        for t in range(a_rowptr[k], a_rowptr[k + 1]):
            i = a_rowcol[t]
            while i != -1 and mark[i] != k:
                mark[i] = k
                pat.append(i)
                i = parent[i]
        pat.sort()
        rows.append(np.array(pat, dtype=np.int64))
        ptr[k + 1] = ptr[k] + len(pat)
    cols = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    return ptr, cols


def symbolic_cholesky(matrix, perm=None) -> SymbolicFactorization:
    n = matrix.n
    if perm is None:
        perm = np.arange(n, dtype=np.int64)
    perm = np.asarray(perm, dtype=np.int64)
    pinv = np.empty(n, dtype=np.int64)
    pinv[perm] = np.arange(n, dtype=np.int64)

    rows, cols = matrix.coords()
    pi = pinv[rows]
    pj = pinv[cols]
    prow = np.maximum(pi, pj)
    pcol = np.minimum(pi, pj)
    order = np.lexsort((pcol, prow))
    a_rowptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(a_rowptr, prow + 1, 1)
    np.cumsum(a_rowptr, out=a_rowptr)
    a_rowcol = pcol[order]
    a_srcslot = np.arange(matrix.nnz, dtype=np.int64)[order]

    # strictly-below-diagonal entries drive the tree and row patterns
    parent = elimination_tree(n, a_rowptr, a_rowcol)
    row_ptr, row_cols = _row_patterns(n, a_rowptr, a_rowcol, parent)

    # column counts: diagonal plus one entry per row-pattern membership
    counts = np.ones(n, dtype=np.int64)
    np.add.at(counts, row_cols, 1)
    l_colptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=l_colptr[1:])
    l_rowidx = np.empty(int(l_colptr[-1]), dtype=np.int64)
    fill_pos = l_colptr[:-1].copy()
    l_rowidx[fill_pos] = np.arange(n)  # diagonals first
    fill_pos += 1
    for k in range(n):
        for t in range(row_ptr[k], row_ptr[k + 1]):
            j = row_cols[t]
            l_rowidx[fill_pos[j]] = k
            fill_pos[j] += 1

    return SymbolicFactorization(
        n=n,
        perm=perm,
        parent=parent,
        a_rowptr=a_rowptr,
        a_rowcol=a_rowcol,
        a_srcslot=a_srcslot,
        row_ptr=row_ptr,
        row_cols=row_cols,
        l_colptr=l_colptr,
        l_rowidx=l_rowidx,
    )


@njit(cache=True)
def _chol_kernel(n, a_rowptr, a_rowcol, a_vals, row_ptr, row_cols,
                 l_colptr, l_rowidx, l_vals, cpos, x, pivot_floor):
    for k in range(n):
        d = 0.0
        for t in range(a_rowptr[k], a_rowptr[k + 1]):
            j = a_rowcol[t]
            if j == k:
                d = a_vals[t]
            else:
                x[j] = a_vals[t]
        for t in range(row_ptr[k], row_ptr[k + 1]):
            j = row_cols[t]
            xj = x[j]
            x[j] = 0.0
            lkj = xj / l_vals[l_colptr[j]]
            for p in range(l_colptr[j] + 1, cpos[j]):
                x[l_rowidx[p]] -= l_vals[p] * lkj
            d -= lkj * lkj
            l_vals[cpos[j]] = lkj
            cpos[j] += 1
        if not (d > pivot_floor):  # also catches NaN pivots
            return k
        l_vals[l_colptr[k]] = np.sqrt(d)
        cpos[k] = l_colptr[k] + 1
    return -1


@njit(cache=True)
def _solve_kernel(n, l_colptr, l_rowidx, l_vals, x):
    for j in range(n):
        xj = x[j] / l_vals[l_colptr[j]]
        x[j] = xj
        for p in range(l_colptr[j] + 1, l_colptr[j + 1]):
            x[l_rowidx[p]] -= l_vals[p] * xj
    for j in range(n - 1, -1, -1):
        xj = x[j]
        for p in range(l_colptr[j] + 1, l_colptr[j + 1]):
            xj -= l_vals[p] * x[l_rowidx[p]]
        x[j] = xj / l_vals[l_colptr[j]]


def factorize(symbolic: SymbolicFactorization, values, out=None) -> NumericFactor:
    """Numeric refactorization of the fixed pattern with fresh values."""
    n = symbolic.n
    a_vals = np.asarray(values, dtype=float)[symbolic.a_srcslot]
    l_vals = out.values if out is not None else np.zeros(symbolic.factor_nnz)
    l_vals[:] = 0.0
    cpos = np.zeros(n, dtype=np.int64)
    x = np.zeros(n)
    bad = _chol_kernel(
        n, symbolic.a_rowptr, symbolic.a_rowcol, a_vals,
        symbolic.row_ptr, symbolic.row_cols,
        symbolic.l_colptr, symbolic.l_rowidx, l_vals, cpos, x, PIVOT_FLOOR,
    )
    if bad >= 0:
        return NumericFactor(symbolic, l_vals, ok=False,
                             failing_column=int(symbolic.perm[bad]))
    return NumericFactor(symbolic, l_vals, ok=True)


def solve_in_place(factor: NumericFactor, rhs: np.ndarray) -> np.ndarray:
    sym = factor.symbolic
    xp = rhs[sym.perm]
    _solve_kernel(sym.n, sym.l_colptr, sym.l_rowidx, factor.values, xp)
    rhs[sym.perm] = xp
    return rhs


def solve(factor: NumericFactor, b: np.ndarray) -> np.ndarray:
    return solve_in_place(factor, np.array(b, dtype=float))


def estimate_condition(factor: NumericFactor, matrix) -> float:
    """Hager-style lower estimate of the 1-norm condition number."""
    n = matrix.n
    if n == 0:
        return 1.0
    norm_a = matrix.norm1()
    x = np.full(n, 1.0 / n)
    est = 0.0
    for _ in range(5):
        y = solve(factor, x)
        est_new = float(np.abs(y).sum())
        xi = np.sign(y)
        xi[xi == 0.0] = 1.0
        z = solve(factor, xi)  # symmetric: no transpose solve needed
        j = int(np.argmax(np.abs(z)))
        if np.abs(z[j]) <= z @ x or est_new <= est:
            est = max(est, est_new)
            break
        est = est_new
        x = np.zeros(n)
        x[j] = 1.0
    return norm_a * est
