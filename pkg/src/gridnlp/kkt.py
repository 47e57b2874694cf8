"""Condensed KKT machinery for the interior-point solver.

The primal-dual Newton system has seven blocks (steps for x, s, y and the
four bound-dual vectors).  Eliminating the bound rows gives the augmented
three-block system

    [ W + Sigma_x + dw*I      0          A^T ] [dx]   [qx]
    [ 0                 Sigma_s + dw*I   -I  ] [ds] = [qs]
    [ A                       -I       -dc*I ] [dy]   [qy]

and eliminating the slack/multiplier pair condenses it to the primal
space:

    (W + dw*I + Sigma_x + A^T D A) dx = qx + A^T (C qs + D qy)

with diagonal C = (dc*Sigma_s + (1 + dc*dw) I)^-1 and
D = (Sigma_s + dw*I) C.  Slack and dual steps are recovered by diagonal
back-substitutions; positive-definite failure of the condensed matrix is
the inertia signal driving the regularization schedule.

Two interchangeable linear-solve backends are provided: the production
``CondensedBackend`` (sparse Cholesky with a fixed pivot order) and
``DenseAugmentedBackend``, a dense LDL^T factorization of the augmented
system used as the reference/cross-check path.

Iterative refinement runs against the full seven-block system with
residuals accumulated in extended precision, reusing the existing
factorization for the correction solves.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .sparse import amd_order, coo_to_csc, factorize, solve, symbolic_cholesky

DELTA_W_INIT = 1e-4
DELTA_W_MIN = 1e-20
DELTA_W_MAX = 1e40
DELTA_C_VALUE = 1e-8
KAPPA_IR = 10.0
MAX_IR_ROUNDS = 10


class DegenerateInterior(RuntimeError):
    """A finite-bound slack is not strictly positive."""


class RegularizationExhausted(RuntimeError):
    """No positive-definite condensed system below the delta_w ceiling."""


@dataclass
class RegState:
    delta_w_last: float = 0.0


@dataclass
class PVec:
    """Right-hand side of the seven-block Newton system."""

    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    zxl: np.ndarray
    zxu: np.ndarray
    zsl: np.ndarray
    zsu: np.ndarray


@dataclass
class Steps:
    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    zxl: np.ndarray
    zxu: np.ndarray
    zsl: np.ndarray
    zsu: np.ndarray

    def axpy(self, other: "Steps", alpha=1.0) -> None:
        for name in ("x", "s", "y", "zxl", "zxu", "zsl", "zsu"):
            getattr(self, name)[...] += alpha * getattr(other, name)


def _inv_or_zero(width):
    """Entrywise 1/width on finite entries, 0 where the bound is absent."""
    out = np.zeros_like(width)
    finite = np.isfinite(width)
    out[finite] = 1.0 / width[finite]
    return out


class KKTWorkspace:
    """Holds the values of the full KKT system at the current iterate.

    Sparsity (W lower triangle, A coordinates) is fixed at construction;
    per-iterate diagonal data is installed with ``set_iterate``.  Widths
    of absent bounds are ``+inf`` and their dual entries zero.
    """

    def __init__(self, n, m, hess_rows, hess_cols, jac_rows, jac_cols):
        self.n = n
        self.m = m
        self.hess_rows = hess_rows
        self.hess_cols = hess_cols
        self.jac_rows = jac_rows
        self.jac_cols = jac_cols
        self.w_vals = np.zeros(hess_rows.size)
        self.a_vals = np.zeros(jac_rows.size)
        self.delta_w = 0.0
        self.delta_c = 0.0
        z = np.zeros
        self.dxl, self.dxu, self.zxl, self.zxu = z(n), z(n), z(n), z(n)
        self.dsl, self.dsu, self.zsl, self.zsu = z(m), z(m), z(m), z(m)
        self.sigma_x = z(n)
        self.sigma_s = z(m)

    def set_iterate(self, w_vals, a_vals, dxl, dxu, zxl, zxu, dsl, dsu, zsl, zsu):
        self.w_vals[:] = w_vals
        self.a_vals[:] = a_vals
        self.dxl[:], self.dxu[:] = dxl, dxu
        self.zxl[:], self.zxu[:] = zxl, zxu
        self.dsl[:], self.dsu[:] = dsl, dsu
        self.zsl[:], self.zsu[:] = zsl, zsu
        self.sigma_x = self.zxl * _inv_or_zero(self.dxl) + self.zxu * _inv_or_zero(self.dxu)
        self.sigma_s = self.zsl * _inv_or_zero(self.dsl) + self.zsu * _inv_or_zero(self.dsu)

    # -- matrix-vector products (dtype follows the inputs) ---------------
    def w_matvec(self, v, dtype=float):
        out = np.zeros(self.n, dtype=dtype)
        wv = self.w_vals.astype(dtype, copy=False)
        np.add.at(out, self.hess_rows, wv * v[self.hess_cols])
        off = self.hess_rows != self.hess_cols
        np.add.at(out, self.hess_cols[off], wv[off] * v[self.hess_rows[off]])
        return out

    def a_matvec(self, v, dtype=float):
        out = np.zeros(self.m, dtype=dtype)
        av = self.a_vals.astype(dtype, copy=False)
        np.add.at(out, self.jac_rows, av * v[self.jac_cols])
        return out

    def at_matvec(self, u, dtype=float):
        out = np.zeros(self.n, dtype=dtype)
        av = self.a_vals.astype(dtype, copy=False)
        np.add.at(out, self.jac_cols, av * u[self.jac_rows])
        return out

    # -- condensation formulas -------------------------------------------
    def c_diag(self):
        return 1.0 / (self.delta_c * self.sigma_s + (1.0 + self.delta_c * self.delta_w))

    def d_diag(self):
        return (self.sigma_s + self.delta_w) * self.c_diag()

    def condense_pvec(self, pv: PVec):
        """(qx, qs, qy) obtained by eliminating the bound-dual rows."""
        qx = pv.x + _inv_or_zero(self.dxl) * pv.zxl - _inv_or_zero(self.dxu) * pv.zxu
        qs = pv.s + _inv_or_zero(self.dsl) * pv.zsl - _inv_or_zero(self.dsu) * pv.zsu
        qy = pv.y.copy()
        return qx, qs, qy

    def condensed_rhs(self, qx, qs, qy):
        return qx + self.at_matvec(self.c_diag() * qs + self.d_diag() * qy)

    def recover_slack_dual(self, dx, qx, qs, qy):
        """Back-substitute for (ds, dy) after the primal solve."""
        ds = self.c_diag() * (self.a_matvec(dx) + self.delta_c * qs - qy)
        dy = (self.sigma_s + self.delta_w) * ds - qs
        return ds, dy

    def recover_bound_duals(self, dx, ds, pv: PVec):
        for name, width in (("x", self.dxl), ("x", self.dxu),
                            ("s", self.dsl), ("s", self.dsu)):
            finite = np.isfinite(width)
            if np.any(width[finite] <= 0.0):
                raise DegenerateInterior(
                    f"non-positive {name}-bound slack at an interior iterate"
                )
        dzxl = _inv_or_zero(self.dxl) * (pv.zxl - self.zxl * dx)
        dzxu = _inv_or_zero(self.dxu) * (pv.zxu + self.zxu * dx)
        dzsl = _inv_or_zero(self.dsl) * (pv.zsl - self.zsl * ds)
        dzsu = _inv_or_zero(self.dsu) * (pv.zsu + self.zsu * ds)
        return dzxl, dzxu, dzsl, dzsu

    # -- full seven-block system ------------------------------------------
    def residual_full(self, st: Steps, pv: PVec, dtype=np.longdouble):
        """pv - M_full * steps, accumulated in the given (wide) dtype."""
        dx = st.x.astype(dtype)
        ds = st.s.astype(dtype)
        dy = st.y.astype(dtype)
        dxl1 = np.where(np.isfinite(self.dxl), self.dxl, 1.0).astype(dtype)
        dxu1 = np.where(np.isfinite(self.dxu), self.dxu, 1.0).astype(dtype)
        dsl1 = np.where(np.isfinite(self.dsl), self.dsl, 1.0).astype(dtype)
        dsu1 = np.where(np.isfinite(self.dsu), self.dsu, 1.0).astype(dtype)
        rx = (pv.x.astype(dtype)
              - self.w_matvec(dx, dtype) - self.delta_w * dx
              - self.at_matvec(dy, dtype) + st.zxl.astype(dtype) - st.zxu.astype(dtype))
        rs = (pv.s.astype(dtype) - self.delta_w * ds + dy
              + st.zsl.astype(dtype) - st.zsu.astype(dtype))
        ry = (pv.y.astype(dtype) - self.a_matvec(dx, dtype) + ds + self.delta_c * dy)
        rzxl = pv.zxl.astype(dtype) - self.zxl * dx - dxl1 * st.zxl.astype(dtype)
        rzxu = pv.zxu.astype(dtype) + self.zxu * dx - dxu1 * st.zxu.astype(dtype)
        rzsl = pv.zsl.astype(dtype) - self.zsl * ds - dsl1 * st.zsl.astype(dtype)
        rzsu = pv.zsu.astype(dtype) + self.zsu * ds - dsu1 * st.zsu.astype(dtype)
        return PVec(rx, rs, ry, rzxl, rzxu, rzsl, rzsu)

    def matrix_scale(self) -> float:
        pieces = [1.0, self.delta_w, self.delta_c]
        for arr in (self.w_vals, self.a_vals, self.sigma_x, self.sigma_s,
                    self.zxl, self.zxu, self.zsl, self.zsu):
            if arr.size:
                pieces.append(float(np.abs(arr).max()))
        for width in (self.dxl, self.dxu, self.dsl, self.dsu):
            finite = width[np.isfinite(width)]
            if finite.size:
                pieces.append(float(finite.max()))
        return max(pieces)


def residual_norm(pv: PVec) -> float:
    out = 0.0
    for arr in (pv.x, pv.s, pv.y, pv.zxl, pv.zxu, pv.zsl, pv.zsu):
        if arr.size:
            out = max(out, float(np.abs(arr).max()))
    return out


@dataclass
class CondensedStructure:
    matrix: object  # SparseSymmetric holding the condensed values
    w_map: np.ndarray
    diag_map: np.ndarray
    ata_map: np.ndarray
    ata_row: np.ndarray
    ata_s1: np.ndarray
    ata_s2: np.ndarray


def symbolic_condense(hess_rows, hess_cols, jac_rows, jac_cols, n) -> CondensedStructure:
    """Pattern of W + diag + A^T A (lower triangle) plus scatter maps.

    Jacobian coordinates must be sorted row-major (as ``finalize``
    produces them); for every constraint row all pairs of its columns
    enter the product pattern.
    """
    seg_starts = np.flatnonzero(np.diff(jac_rows, prepend=-1))
    seg_ends = np.append(seg_starts[1:], jac_rows.size)
    ai, aj, s1, s2, arow = [], [], [], [], []
    for st, en in zip(seg_starts, seg_ends):
        cols = jac_cols[st:en]
        k = en - st
        la, lb = np.tril_indices(k)
        ai.append(cols[la])
        aj.append(cols[lb])
        s1.append(st + la)
        s2.append(st + lb)
        arow.append(np.full(la.size, jac_rows[st]))
    if ai:
        ai = np.concatenate(ai)
        aj = np.concatenate(aj)
        s1 = np.concatenate(s1)
        s2 = np.concatenate(s2)
        arow = np.concatenate(arow)
    else:
        ai = aj = s1 = s2 = arow = np.zeros(0, dtype=np.int64)

    rows = np.concatenate([hess_rows, np.arange(n), ai])
    cols = np.concatenate([hess_cols, np.arange(n), aj])
    matrix, slot_map = coo_to_csc(n, rows, cols, np.zeros(rows.size))
    nw = hess_rows.size
    return CondensedStructure(
        matrix=matrix,
        w_map=slot_map[:nw],
        diag_map=slot_map[nw:nw + n],
        ata_map=slot_map[nw + n:],
        ata_row=arow,
        ata_s1=s1,
        ata_s2=s2,
    )


class CondensedBackend:
    """Sparse Cholesky on the condensed primal-space system."""

    def __init__(self, ws: KKTWorkspace, ordering=None):
        self.ws = ws
        self.structure = symbolic_condense(
            ws.hess_rows, ws.hess_cols, ws.jac_rows, ws.jac_cols, ws.n
        )
        if ordering is None:
            ordering = amd_order(self.structure.matrix)
        self.symbolic = symbolic_cholesky(self.structure.matrix, ordering)
        self.factor = None
        self.n_factorizations = 0

    def assemble(self) -> None:
        ws = self.ws
        s = self.structure
        vals = s.matrix.values
        vals[:] = 0.0
        np.add.at(vals, s.w_map, ws.w_vals)
        np.add.at(vals, s.diag_map, ws.sigma_x + ws.delta_w)
        if s.ata_map.size:
            d = ws.d_diag()
            np.add.at(
                vals, s.ata_map,
                d[s.ata_row] * ws.a_vals[s.ata_s1] * ws.a_vals[s.ata_s2],
            )

    def try_factorize(self) -> bool:
        self.assemble()
        self.n_factorizations += 1
        self.factor = factorize(self.symbolic, self.structure.matrix.values)
        return self.factor.ok

    def solve3(self, qx, qs, qy):
        ws = self.ws
        rhs = ws.condensed_rhs(qx, qs, qy)
        dx = solve(self.factor, rhs)
        ds, dy = ws.recover_slack_dual(dx, qx, qs, qy)
        return dx, ds, dy


class DenseAugmentedBackend:
    """Dense LDL^T on the augmented three-block system (reference path).

    Inertia is read off the block-diagonal factor; the step is accepted
    only with inertia (n+m, 0, m).
    """

    def __init__(self, ws: KKTWorkspace):
        self.ws = ws
        self.dim = ws.n + 2 * ws.m
        self._m = np.zeros((self.dim, self.dim))
        self._factors = None
        self.n_factorizations = 0

    def _assemble(self):
        ws = self.ws
        n, m = ws.n, ws.m
        M = self._m
        M[:] = 0.0
        M[ws.hess_rows, ws.hess_cols] = ws.w_vals
        off = ws.hess_rows != ws.hess_cols
        M[ws.hess_cols[off], ws.hess_rows[off]] = ws.w_vals[off]
        idx = np.arange(n)
        M[idx, idx] += ws.sigma_x + ws.delta_w
        sidx = n + np.arange(m)
        M[sidx, sidx] = ws.sigma_s + ws.delta_w
        yidx = n + m + np.arange(m)
        M[yidx, yidx] = -ws.delta_c
        np.add.at(M, (ws.jac_rows + n + m, ws.jac_cols), ws.a_vals)
        M[:n, n + m:] = M[n + m:, :n].T
        M[sidx, yidx] = -1.0
        M[yidx, sidx] = -1.0

    def try_factorize(self) -> bool:
        self._assemble()
        self.n_factorizations += 1
        lu, d, perm = scipy.linalg.ldl(self._m, lower=True)
        pos = neg = zero = 0
        i = 0
        N = self.dim
        while i < N:
            if i + 1 < N and d[i + 1, i] != 0.0:
                det = d[i, i] * d[i + 1, i + 1] - d[i, i + 1] * d[i + 1, i]
                tr = d[i, i] + d[i + 1, i + 1]
                if det < 0.0:
                    pos += 1
                    neg += 1
                elif det > 0.0:
                    if tr > 0.0:
                        pos += 2
                    else:
                        neg += 2
                else:
                    zero += 2
                i += 2
            else:
                if d[i, i] > 0.0:
                    pos += 1
                elif d[i, i] < 0.0:
                    neg += 1
                else:
                    zero += 1
                i += 1
        self._factors = (lu, d, perm)
        return (pos, zero, neg) == (self.ws.n + self.ws.m, 0, self.ws.m)

    def _solve_dense(self, b):
        lu, d, perm = self._factors
        lp = lu[perm]
        z = scipy.linalg.solve_triangular(lp, b[perm], lower=True, unit_diagonal=True)
        # block-diagonal solve (1x1 and 2x2 pivots)
        w = np.empty_like(z)
        i = 0
        N = z.size
        while i < N:
            if i + 1 < N and d[i + 1, i] != 0.0:
                a, bb, c = d[i, i], d[i, i + 1], d[i + 1, i + 1]
                det = a * c - bb * d[i + 1, i]
                w[i] = (c * z[i] - bb * z[i + 1]) / det
                w[i + 1] = (-d[i + 1, i] * z[i] + a * z[i + 1]) / det
                i += 2
            else:
                w[i] = z[i] / d[i, i]
                i += 1
        u = scipy.linalg.solve_triangular(lp.T, w, lower=False, unit_diagonal=True)
        out = np.empty_like(u)
        out[perm] = u
        return out

    def solve3(self, qx, qs, qy):
        ws = self.ws
        n, m = ws.n, ws.m
        sol = self._solve_dense(np.concatenate([qx, qs, qy]))
        return sol[:n], sol[n:n + m], sol[n + m:]


def solve_with_regularization(ws, backend, pv: PVec, reg: RegState):
    """Factorize with the inertia-correction schedule, then solve.

    Returns ``(steps3, delta_w)``; the workspace keeps the accepted
    regularization for the refinement that follows.
    """
    ws.delta_w = 0.0
    ws.delta_c = 0.0
    if not backend.try_factorize():
        had_history = reg.delta_w_last > 0.0
        ws.delta_c = DELTA_C_VALUE
        ws.delta_w = DELTA_W_INIT if not had_history else max(
            DELTA_W_MIN, reg.delta_w_last / 3.0
        )
        while not backend.try_factorize():
            ws.delta_w *= 100.0 if not had_history else 8.0
            if ws.delta_w > DELTA_W_MAX:
                raise RegularizationExhausted(
                    f"delta_w exceeded {DELTA_W_MAX:g} without positive definiteness"
                )
        reg.delta_w_last = ws.delta_w
    qx, qs, qy = ws.condense_pvec(pv)
    dx, ds, dy = backend.solve3(qx, qs, qy)
    return (dx, ds, dy), ws.delta_w


def assemble_steps(ws, pv: PVec, dx, ds, dy) -> Steps:
    dzxl, dzxu, dzsl, dzsu = ws.recover_bound_duals(dx, ds, pv)
    return Steps(dx, ds, dy, dzxl, dzxu, dzsl, dzsu)


@dataclass
class RefinementStats:
    rounds: int = 0
    initial_residual: float = 0.0
    final_residual: float = 0.0
    scale: float = 1.0

    @property
    def relative_residual(self) -> float:
        return self.final_residual / self.scale


def iterative_refinement(ws, backend, steps: Steps, pv: PVec) -> RefinementStats:
    """Refine the step against the full seven-block system in place."""
    scale = ws.matrix_scale()
    target = KAPPA_IR * np.finfo(float).eps * scale
    res = ws.residual_full(steps, pv)
    rnorm = residual_norm(res)
    stats = RefinementStats(initial_residual=rnorm, final_residual=rnorm, scale=scale)
    while stats.final_residual > target and stats.rounds < MAX_IR_ROUNDS:
        rv = PVec(*(getattr(res, f).astype(float) for f in
                    ("x", "s", "y", "zxl", "zxu", "zsl", "zsu")))
        qx, qs, qy = ws.condense_pvec(rv)
        dx, ds, dy = backend.solve3(qx, qs, qy)
        corr = assemble_steps(ws, rv, dx, ds, dy)
        steps.axpy(corr)
        res = ws.residual_full(steps, pv)
        new_norm = residual_norm(res)
        stats.rounds += 1
        if new_norm >= stats.final_residual:
            steps.axpy(corr, alpha=-1.0)  # correction made things worse
            break
        improved_enough = new_norm <= stats.final_residual / 2.0
        stats.final_residual = new_norm
        if not improved_enough:
            break
    return stats
