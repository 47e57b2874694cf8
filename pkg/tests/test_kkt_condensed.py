"""Condensation, recovery, regularization, and refinement against dense oracles."""

import numpy as np
import pytest

from gridnlp.kkt import (
    CondensedBackend,
    KKTWorkspace,
    PVec,
    RegState,
    RegularizationExhausted,
    assemble_steps,
    iterative_refinement,
    residual_norm,
    solve_with_regularization,
    symbolic_condense,
)

from oracles import dense_augmented, dense_inertia, random_kkt_instance


def make_ws(W, A, dxl, dxu, zxl, zxu, dsl, dsu, zsl, zsu):
    n = W.shape[0]
    m = A.shape[0]
    hr, hc = np.tril_indices(n)
    keep = W[hr, hc] != 0.0
    keep |= hr == hc
    hr, hc = hr[keep], hc[keep]
    jr, jc = np.nonzero(A)
    order = np.lexsort((jc, jr))
    jr, jc = jr[order].astype(np.int64), jc[order].astype(np.int64)
    ws = KKTWorkspace(n, m, hr.astype(np.int64), hc.astype(np.int64), jr, jc)
    ws.set_iterate(W[hr, hc], A[jr, jc], dxl, dxu, zxl, zxu, dsl, dsu, zsl, zsu)
    return ws


class TestSymbolicCondense:
    def test_no_constraints_pattern_is_w_plus_diagonal(self):
        hr = np.array([0, 1, 1], dtype=np.int64)
        hc = np.array([0, 0, 1], dtype=np.int64)
        s = symbolic_condense(hr, hc, np.zeros(0, np.int64), np.zeros(0, np.int64), 3)
        rows, cols = s.matrix.coords()
        got = set(zip(rows.tolist(), cols.tolist()))
        assert got == {(0, 0), (1, 0), (1, 1), (2, 2)}

    def test_single_constraint_outer_product(self):
        jr = np.array([0, 0], dtype=np.int64)
        jc = np.array([0, 2], dtype=np.int64)
        s = symbolic_condense(np.zeros(0, np.int64), np.zeros(0, np.int64),
                              jr, jc, 3)
        rows, cols = s.matrix.coords()
        got = set(zip(rows.tolist(), cols.tolist()))
        assert {(0, 0), (2, 0), (2, 2)} <= got

    def test_case14_matches_dense_pattern_oracle(self, acopf_models):
        m = acopf_models["case14"].model
        n = m.n_var
        s = symbolic_condense(m.hess_rows, m.hess_cols, m.jac_rows, m.jac_cols, n)
        W = np.zeros((n, n), dtype=bool)
        W[m.hess_rows, m.hess_cols] = True
        A = np.zeros((m.n_con, n), dtype=bool)
        A[m.jac_rows, m.jac_cols] = True
        dense = W | np.eye(n, dtype=bool) | np.tril(A.T @ A)
        dense |= dense.T
        rows, cols = s.matrix.coords()
        got = np.zeros((n, n), dtype=bool)
        got[rows, cols] = True
        got |= got.T
        assert s.matrix.nnz == int(np.tril(dense).sum())
        assert np.array_equal(got, dense)


class TestAssembleAndRhs:
    def toy(self, delta_c=0.0, delta_w=0.0):
        W = np.array([[2.0]])
        A = np.array([[1.0]])
        # sigma_x = 0.5 via zxl/dxl; sigma_s = 1.0 via zsl/dsl
        ws = make_ws(W, A,
                     np.array([2.0]), np.array([np.inf]),
                     np.array([1.0]), np.array([0.0]),
                     np.array([1.0]), np.array([np.inf]),
                     np.array([1.0]), np.array([0.0]))
        ws.delta_c = delta_c
        ws.delta_w = delta_w
        return ws

    def test_delta_c_zero_gives_identity_c(self):
        ws = self.toy(delta_c=0.0, delta_w=0.3)
        np.testing.assert_allclose(ws.c_diag(), [1.0])
        np.testing.assert_allclose(ws.d_diag(), ws.sigma_s + 0.3)

    def test_toy_condensed_value(self):
        ws = self.toy()
        back = CondensedBackend(ws)
        back.assemble()
        # W + sigma_x + A^T D A = 2 + 0.5 + 1 = 3.5
        assert back.structure.matrix.to_dense()[0, 0] == pytest.approx(3.5)

    def test_random_instance_matches_dense_assembly(self):
        rng = np.random.default_rng(21)
        ws, _ = random_kkt_instance(rng, n=6, m=4)
        ws.delta_w = 0.1
        ws.delta_c = 0.01
        back = CondensedBackend(ws)
        back.assemble()
        W = np.zeros((6, 6))
        W[ws.hess_rows, ws.hess_cols] = ws.w_vals
        W = W + W.T - np.diag(np.diag(W))
        A = np.zeros((4, 6))
        A[ws.jac_rows, ws.jac_cols] = ws.a_vals
        D = np.diag(ws.d_diag())
        expect = (W + 0.1 * np.eye(6) + np.diag(ws.sigma_x) + A.T @ D @ A)
        np.testing.assert_allclose(back.structure.matrix.to_dense(), expect,
                                   atol=1e-14)

    def test_rhs_no_constraints_is_qx(self):
        W = np.array([[2.0, 0.0], [0.0, 3.0]])
        ws = make_ws(W, np.zeros((0, 2)),
                     np.full(2, 1.0), np.full(2, np.inf),
                     np.ones(2), np.zeros(2),
                     np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0))
        qx = np.array([1.0, -2.0])
        np.testing.assert_allclose(ws.condensed_rhs(qx, np.zeros(0), np.zeros(0)), qx)

    def test_rhs_delta_c_zero_formula(self):
        ws = self.toy(delta_c=0.0, delta_w=0.2)
        qx, qs, qy = np.array([1.0]), np.array([2.0]), np.array([3.0])
        expect = qx + 1.0 * (qs + (ws.sigma_s + 0.2) * qy)
        np.testing.assert_allclose(ws.condensed_rhs(qx, qs, qy), expect)

    def test_rhs_matches_dense_block_elimination(self):
        rng = np.random.default_rng(22)
        ws, pv = random_kkt_instance(rng, n=5, m=3)
        ws.delta_w = 0.05
        ws.delta_c = 0.02
        qx, qs, qy = ws.condense_pvec(pv)
        rhs = ws.condensed_rhs(qx, qs, qy)
        # eliminate (s, y) from the dense augmented system
        M = dense_augmented(ws)
        n, m = 5, 3
        B = M[n:, n:]
        off = M[:n, n:]
        expect = qx - off @ np.linalg.solve(B, np.concatenate([qs, qy]))
        np.testing.assert_allclose(rhs, expect, atol=1e-13)


class TestRecoveries:
    def test_slack_recovery_delta_c_zero(self):
        rng = np.random.default_rng(23)
        ws, pv = random_kkt_instance(rng, n=4, m=3)
        qx, qs, qy = ws.condense_pvec(pv)
        dx = rng.normal(size=4)
        ds, dy = ws.recover_slack_dual(dx, qx, qs, qy)
        np.testing.assert_allclose(ds, ws.a_matvec(dx) - qy, atol=1e-14)
        np.testing.assert_allclose(dy, ws.sigma_s * ds - qs, atol=1e-14)

    def test_no_constraint_coupling(self):
        W = np.array([[2.0]])
        ws = make_ws(W, np.zeros((1, 1)),
                     np.array([1.0]), np.array([np.inf]),
                     np.array([1.0]), np.array([0.0]),
                     np.array([1.0]), np.array([1.0]),
                     np.array([1.0]), np.array([1.0]))
        qs = np.array([0.7])
        ds, dy = ws.recover_slack_dual(np.zeros(1), np.zeros(1), qs, np.zeros(1))
        np.testing.assert_allclose(ds, [0.0], atol=1e-15)
        np.testing.assert_allclose(dy, -qs)

    def test_bound_dual_zero_step(self):
        rng = np.random.default_rng(24)
        ws, pv = random_kkt_instance(rng, n=4, m=2)
        pv0 = PVec(pv.x, pv.s, pv.y, np.zeros(4), np.zeros(4),
                   np.zeros(2), np.zeros(2))
        dzxl, dzxu, dzsl, dzsu = ws.recover_bound_duals(np.zeros(4), np.zeros(2), pv0)
        for arr in (dzxl, dzxu, dzsl, dzsu):
            np.testing.assert_allclose(arr, 0.0)

    def test_scalar_bound_dual_value(self):
        # width 2, z = 1, dx = 1, p = 0 -> dz = (1/2) * (-1 * 1) = -0.5
        W = np.array([[1.0]])
        ws = make_ws(W, np.zeros((0, 1)),
                     np.array([2.0]), np.array([np.inf]),
                     np.array([1.0]), np.array([0.0]),
                     np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0))
        pv = PVec(np.zeros(1), np.zeros(0), np.zeros(0), np.zeros(1),
                  np.zeros(1), np.zeros(0), np.zeros(0))
        dzxl, _, _, _ = ws.recover_bound_duals(np.array([1.0]), np.zeros(0), pv)
        assert dzxl[0] == pytest.approx(-0.5)


class TestSolveWithRegularization:
    def test_spd_accepted_unregularized(self):
        rng = np.random.default_rng(25)
        ws, pv = random_kkt_instance(rng, n=5, m=3)
        W = np.diag(np.full(5, 3.0))
        hrdiag = np.arange(5, dtype=np.int64)
        ws2 = KKTWorkspace(5, 3, hrdiag, hrdiag, ws.jac_rows, ws.jac_cols)
        ws2.set_iterate(np.full(5, 3.0), ws.a_vals, ws.dxl, ws.dxu, ws.zxl,
                        ws.zxu, ws.dsl, ws.dsu, ws.zsl, ws.zsu)
        back = CondensedBackend(ws2)
        _, dw = solve_with_regularization(ws2, back, pv, RegState())
        assert dw == 0.0

    def test_negative_curvature_needs_shift(self):
        # W = -lambda, no constraints, no bounds on sigma: shift must exceed lambda
        lam = 0.7
        hr = np.zeros(1, dtype=np.int64)
        ws = KKTWorkspace(1, 0, hr, hr, np.zeros(0, np.int64), np.zeros(0, np.int64))
        ws.set_iterate(np.array([-lam]), np.zeros(0),
                       np.array([np.inf]), np.array([np.inf]),
                       np.zeros(1), np.zeros(1),
                       np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0))
        back = CondensedBackend(ws)
        pv = PVec(np.ones(1), np.zeros(0), np.zeros(0), np.zeros(1),
                  np.zeros(1), np.zeros(0), np.zeros(0))
        _, dw = solve_with_regularization(ws, back, pv, RegState())
        assert dw > lam

    def test_regularized_inertia_matches_dense_oracle(self):
        rng = np.random.default_rng(26)
        shifted = 0
        for _ in range(50):
            ws, pv = random_kkt_instance(rng)
            back = CondensedBackend(ws)
            (dx, ds, dy), dw = solve_with_regularization(ws, back, pv, RegState())
            if dw > 0:
                shifted += 1
            M = dense_augmented(ws)
            assert dense_inertia(M) == (ws.n + ws.m, 0, ws.m)
        assert shifted > 0  # suite exercised the correction path

    def test_exhaustion_raises(self):
        # NaN in W keeps every factorization failing
        hr = np.zeros(1, dtype=np.int64)
        ws = KKTWorkspace(1, 0, hr, hr, np.zeros(0, np.int64), np.zeros(0, np.int64))
        ws.set_iterate(np.array([np.nan]), np.zeros(0),
                       np.array([np.inf]), np.array([np.inf]),
                       np.zeros(1), np.zeros(1),
                       np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0))
        back = CondensedBackend(ws)
        pv = PVec(np.ones(1), np.zeros(0), np.zeros(0), np.zeros(1),
                  np.zeros(1), np.zeros(0), np.zeros(0))
        with pytest.raises(RegularizationExhausted):
            solve_with_regularization(ws, back, pv, RegState())

    def test_delta_w_schedule(self):
        calls = []

        class FakeBackend:
            def __init__(self, ws, fail_times):
                self.ws = ws
                self.fail_times = fail_times
                self.count = 0

            def try_factorize(self):
                calls.append((self.ws.delta_w, self.ws.delta_c))
                self.count += 1
                return self.count > self.fail_times

            def solve3(self, qx, qs, qy):
                return np.zeros(self.ws.n), np.zeros(self.ws.m), np.zeros(self.ws.m)

        rng = np.random.default_rng(27)
        ws, pv = random_kkt_instance(rng, n=2, m=1)
        reg = RegState()
        back = FakeBackend(ws, fail_times=3)
        solve_with_regularization(ws, back, pv, reg)
        assert [c[0] for c in calls] == [0.0, 1e-4, 1e-2, 1.0]
        assert calls[0][1] == 0.0 and calls[1][1] == 1e-8
        assert reg.delta_w_last == 1.0
        # with history: first retry at last/3, escalation by 8
        calls.clear()
        back = FakeBackend(ws, fail_times=2)
        solve_with_regularization(ws, back, pv, reg)
        assert calls[0][0] == 0.0
        assert calls[1][0] == pytest.approx(1.0 / 3.0)
        assert calls[2][0] == pytest.approx(8.0 / 3.0)


class TestCondensationEquivalence:
    def test_hundred_random_instances(self):
        rng = np.random.default_rng(100)
        for _ in range(100):
            ws, pv = random_kkt_instance(rng)
            back = CondensedBackend(ws)
            (dx, ds, dy), _ = solve_with_regularization(ws, back, pv, RegState())
            steps = assemble_steps(ws, pv, dx, ds, dy)
            # dense oracle at the same regularization
            M = dense_augmented(ws)
            qx, qs, qy = ws.condense_pvec(pv)
            sol = np.linalg.solve(M, np.concatenate([qx, qs, qy]))
            got = np.concatenate([dx, ds, dy])
            assert np.max(np.abs(got - sol)) <= 1e-9
            # full seven-block residual after all recoveries
            res = residual_norm(ws.residual_full(steps, pv))
            assert res <= 1e-9

    def test_sylvester_equivalence(self):
        """Condensed positive definiteness iff augmented inertia (n+m, 0, m)."""
        rng = np.random.default_rng(200)
        checked = 0
        while checked < 100:
            ws, _ = random_kkt_instance(rng)
            back = CondensedBackend(ws)
            ws.delta_w = float(rng.choice([0.0, 1e-3, 0.1]))
            ws.delta_c = float(rng.choice([0.0, 1e-8]))
            M = dense_augmented(ws)
            eig = np.linalg.eigvalsh(M)
            if np.min(np.abs(eig)) < 1e-8:
                continue
            checked += 1
            back.assemble()
            from gridnlp.sparse import factorize

            f = factorize(back.symbolic, back.structure.matrix.values)
            assert f.ok == (dense_inertia(M) == (ws.n + ws.m, 0, ws.m))


class TestIterativeRefinement:
    def test_consistent_steps_need_no_rounds(self):
        rng = np.random.default_rng(30)
        ws, pv = random_kkt_instance(rng, n=4, m=2)
        back = CondensedBackend(ws)
        (dx, ds, dy), _ = solve_with_regularization(ws, back, pv, RegState())
        steps = assemble_steps(ws, pv, dx, ds, dy)
        stats = iterative_refinement(ws, back, steps, pv)
        assert stats.rounds <= 1
        assert stats.final_residual <= 10 * np.finfo(float).eps * stats.scale * 2

    def test_perturbed_step_recovers(self):
        rng = np.random.default_rng(31)
        ws, pv = random_kkt_instance(rng, n=6, m=4)
        back = CondensedBackend(ws)
        (dx, ds, dy), _ = solve_with_regularization(ws, back, pv, RegState())
        steps = assemble_steps(ws, pv, dx, ds, dy)
        steps.x += 1e-3 * rng.normal(size=6)
        r0 = residual_norm(ws.residual_full(steps, pv))
        stats = iterative_refinement(ws, back, steps, pv)
        assert stats.final_residual <= r0 / 1e6

    def test_no_factorizations_during_refinement(self):
        """Recoveries and refinement reuse the factor: only the
        regularization loop may factorize."""
        rng = np.random.default_rng(32)
        ws, pv = random_kkt_instance(rng, n=5, m=3)
        back = CondensedBackend(ws)
        (dx, ds, dy), _ = solve_with_regularization(ws, back, pv, RegState())
        count = back.n_factorizations
        steps = assemble_steps(ws, pv, dx, ds, dy)
        steps.x += 1e-4
        iterative_refinement(ws, back, steps, pv)
        assert back.n_factorizations == count
