"""Pattern-block model construction, start clamping, and sparsity templates."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridnlp import autodiff as ad
from gridnlp.expressions import Tape, param, sin, var
from gridnlp.model import (
    IndexOutOfRange,
    InvalidBounds,
    ModelBuilder,
    UnknownConstraint,
)

from oracles import dense_jacobian, fd_jacobian, fd_sparsity


def quad_objective_builder(n=1):
    b = ModelBuilder()
    b.add_variables(n, np.full(n, -10.0), np.full(n, 10.0), np.zeros(n))
    return b


class TestAddVariables:
    def test_interior_start_unchanged(self):
        b = ModelBuilder()
        blk = b.add_variables(2, np.zeros(2), np.ones(2), np.full(2, 0.5))
        assert blk.offset == 0 and blk.count == 2
        np.testing.assert_array_equal(blk.start, [0.5, 0.5])

    def test_push_inside_rule(self):
        b = ModelBuilder()
        blk = b.add_variables(1, np.zeros(1), np.ones(1), np.zeros(1))
        assert blk.start[0] == pytest.approx(0.01)

    def test_infinite_bounds_no_clamp(self):
        b = ModelBuilder()
        blk = b.add_variables(1, np.array([-np.inf]), np.array([np.inf]),
                              np.array([3.0]))
        assert blk.start[0] == 3.0

    def test_invalid_bounds(self):
        b = ModelBuilder()
        with pytest.raises(InvalidBounds):
            b.add_variables(1, np.ones(1), np.zeros(1), np.zeros(1))

    def test_fresh_contiguous_offsets(self):
        b = ModelBuilder()
        b.add_variables(3, np.zeros(3), np.ones(3), np.full(3, 0.5))
        blk = b.add_variables(2, np.zeros(2), np.ones(2), np.full(2, 0.5))
        assert blk.offset == 3
        np.testing.assert_array_equal(blk.indices, [3, 4])

    @given(
        lo=st.floats(-100, 100),
        width=st.floats(0, 200),
        start=st.floats(-300, 300),
    )
    @settings(max_examples=60, deadline=None)
    def test_start_always_within_bounds(self, lo, width, start):
        b = ModelBuilder()
        blk = b.add_variables(1, np.array([lo]), np.array([lo + width]),
                              np.array([start]))
        assert lo <= blk.start[0] <= lo + width


class TestObjectiveBlocks:
    def quad(self):
        return param(0) + param(1) * var(0) + param(2) * var(0) ** 2

    def test_contribution_at_zero(self):
        b = quad_objective_builder()
        b.add_objective(self.quad(), np.array([[0]]), np.array([[1.0, 2.0, 3.0]]))
        m = b.finalize()
        assert ad.eval_objective(m, np.array([0.0])) == pytest.approx(1.0)

    def test_contribution_at_one(self):
        b = quad_objective_builder()
        b.add_objective(self.quad(), np.array([[0]]), np.array([[1.0, 2.0, 3.0]]))
        m = b.finalize()
        assert ad.eval_objective(m, np.array([1.0])) == pytest.approx(6.0)

    def test_two_blocks_add(self):
        b = quad_objective_builder()
        for _ in range(2):
            b.add_objective(self.quad(), np.array([[0]]), np.array([[1.0, 2.0, 3.0]]))
        m = b.finalize()
        assert ad.eval_objective(m, np.array([1.0])) == pytest.approx(12.0)

    def test_empty_data_accepted(self):
        b = quad_objective_builder()
        b.add_objective(self.quad(), np.zeros((0, 1), dtype=np.int64),
                        np.zeros((0, 3)))
        m = b.finalize()
        assert ad.eval_objective(m, np.array([1.0])) == 0.0
        assert len(m.pattern_blocks) == 1

    def test_index_out_of_range(self):
        b = quad_objective_builder()
        with pytest.raises(IndexOutOfRange):
            b.add_objective(self.quad(), np.array([[5]]), np.array([[1.0, 2.0, 3.0]]))


class TestConstraintBlocks:
    def test_defines_allocate_rows_with_two_entries_each(self):
        b = quad_objective_builder(4)
        rows = b.add_constraints(var(0) - var(1),
                                 np.array([[0, 1], [1, 2], [2, 3]]),
                                 np.zeros((3, 0)))
        np.testing.assert_array_equal(rows, [0, 1, 2])
        m = b.finalize()
        assert m.n_con == 3
        for r in range(3):
            assert np.sum(m.jac_rows == r) == 2

    def test_sin_residual_zero(self):
        b = quad_objective_builder()
        b.add_constraints(sin(var(0)), np.array([[0]]), np.zeros((1, 0)))
        m = b.finalize()
        assert ad.eval_constraints(m, np.zeros(1))[0] == pytest.approx(0.0)

    def test_zero_records_empty_range(self):
        b = quad_objective_builder()
        rows = b.add_constraints(var(0), np.zeros((0, 1), dtype=np.int64),
                                 np.zeros((0, 0)))
        assert rows.size == 0
        assert b.n_con == 0


class TestConstraintIncrements:
    def test_accumulation_on_shared_target(self):
        b = quad_objective_builder(2)
        b.add_constraints(var(0) - var(1), np.array([[0, 1]]), np.zeros((1, 0)))
        b.add_constraint_increments(param(0), np.zeros((2, 0), dtype=np.int64),
                                    np.array([[1.5], [-0.5]]), np.array([0, 0]))
        m = b.finalize()
        x = np.array([2.0, 1.0])
        assert ad.eval_constraints(m, x)[0] == pytest.approx(1.0 + 1.0)

    def test_increment_onto_own_define(self):
        b = quad_objective_builder(2)
        b.add_constraints(var(0) - var(1), np.array([[0, 1]]), np.zeros((1, 0)))
        b.add_constraint_increments(var(0), np.array([[1]]), np.zeros((1, 0)),
                                    np.array([0]))
        m = b.finalize()
        x = np.array([2.0, 1.0])
        assert ad.eval_constraints(m, x)[0] == pytest.approx(1.0 + 1.0)

    def test_unknown_constraint(self):
        b = quad_objective_builder(2)
        b.add_constraints(var(0), np.array([[0]]), np.zeros((1, 0)))
        with pytest.raises(UnknownConstraint):
            b.add_constraint_increments(var(0), np.array([[1]]),
                                        np.zeros((1, 0)), np.array([1]))


class TestFinalizeSparsity:
    def test_bilinear_template_expansion(self):
        rng = np.random.default_rng(0)
        b = quad_objective_builder(20)
        vi = rng.integers(0, 20, size=(1000, 2))
        b.add_objective(var(0) * var(1), vi, np.zeros((1000, 0)))
        m = b.finalize()
        expect = {(max(a, c), min(a, c)) for a, c in vi.tolist()}
        got = set(zip(m.hess_rows.tolist(), m.hess_cols.tolist()))
        assert got == expect

    def test_square_template(self):
        b = quad_objective_builder(3)
        b.add_objective(var(0) ** 2, np.array([[1]]), np.zeros((1, 0)))
        m = b.finalize()
        assert list(zip(m.hess_rows, m.hess_cols)) == [(1, 1)]

    def test_sparsity_sorted_and_unique(self):
        b = quad_objective_builder(5)
        b.add_constraints(var(0) * var(1) + sin(var(0)),
                          np.array([[3, 1], [1, 3], [0, 0]]), np.zeros((3, 0)))
        m = b.finalize()
        keys = m.jac_rows * m.n_var + m.jac_cols
        assert np.all(np.diff(keys) > 0)
        hkeys = m.hess_rows * m.n_var + m.hess_cols
        assert np.all(np.diff(hkeys) > 0)
        assert np.all(m.hess_rows >= m.hess_cols)

    def test_finalize_idempotent(self):
        b = quad_objective_builder(4)
        b.add_constraints(var(0) * var(1), np.array([[0, 1], [2, 3]]),
                          np.zeros((2, 0)))
        m1 = b.finalize()
        m2 = b.finalize()
        np.testing.assert_array_equal(m1.jac_rows, m2.jac_rows)
        np.testing.assert_array_equal(m1.jac_cols, m2.jac_cols)
        np.testing.assert_array_equal(m1.hess_rows, m2.hess_rows)
        x = np.full(4, 0.3)
        y = np.ones(m1.n_con)
        np.testing.assert_array_equal(
            ad.eval_lagrangian_hessian(m1, x, y),
            ad.eval_lagrangian_hessian(m2, x, y),
        )


def _tangled_model(order):
    """Same records in two different input orders."""
    b = ModelBuilder()
    b.add_variables(6, np.full(6, -5.0), np.full(6, 5.0), np.zeros(6))
    rows = b.add_constraints(var(0) * var(1), np.array([[0, 1], [2, 3]]),
                             np.zeros((2, 0)))
    vi = np.array([[0], [1], [2], [3], [4]])
    pa = np.array([[2.0], [3.0], [5.0], [7.0], [11.0]])
    tg = np.array([0, 0, 1, 1, 0])
    b.add_constraint_increments(param(0) * sin(var(0)), vi[order], pa[order],
                                tg[order])
    b.add_objective(param(0) * var(0) ** 2, vi[order], pa[order])
    return b.finalize()


class TestRecordOrderIndependence:
    def test_permutation_bitwise_invariant(self):
        rng = np.random.default_rng(3)
        base = _tangled_model(np.arange(5))
        x = rng.normal(size=6) * 0.5
        y = rng.normal(size=2)
        for _ in range(3):
            perm = rng.permutation(5)
            other = _tangled_model(perm)
            assert ad.eval_objective(base, x) == ad.eval_objective(other, x)
            np.testing.assert_array_equal(ad.eval_constraints(base, x),
                                          ad.eval_constraints(other, x))
            np.testing.assert_array_equal(ad.eval_gradient(base, x),
                                          ad.eval_gradient(other, x))
            np.testing.assert_array_equal(ad.eval_jacobian(base, x),
                                          ad.eval_jacobian(other, x))
            np.testing.assert_array_equal(
                ad.eval_lagrangian_hessian(base, x, y),
                ad.eval_lagrangian_hessian(other, x, y),
            )


class TestFdSparsityOracle:
    def test_case14_fd_pattern_within_template(self, acopf_models):
        """FD-detected nonzeros are always inside the compiled pattern.

        The converse (exact equality) fails on real data: buses without
        shunts make the vm^2 balance terms identically zero, so the
        structural template strictly contains the FD pattern there.
        """
        am = acopf_models["case14"]
        m = am.model
        rng = np.random.default_rng(7)
        from conftest import interior_points

        pts = interior_points(m, rng, count=5)
        fmask = fd_sparsity(lambda z: ad.eval_constraints(m, z).copy(), pts,
                            m.n_con)
        pattern = np.zeros_like(fmask)
        pattern[m.jac_rows, m.jac_cols] = True
        assert not np.any(fmask & ~pattern)
        # every pattern entry that FD misses involves a zero parameter
        missed = pattern & ~fmask
        assert missed.sum() <= len(am.network.buses) * 2

    def test_case14_fd_hessian_within_template(self, acopf_models):
        m = acopf_models["case14"].model
        rng = np.random.default_rng(8)
        from conftest import interior_points

        pts = interior_points(m, rng, count=3)
        y = rng.uniform(-1, 1, m.n_con)
        from oracles import lagrangian_gradient

        pattern = np.zeros((m.n_var, m.n_var), dtype=bool)
        pattern[m.hess_rows, m.hess_cols] = True
        pattern |= pattern.T
        for x in pts:
            Hfd = fd_jacobian(lambda z: lagrangian_gradient(m, z, y), x, m.n_var)
            assert not np.any((np.abs(Hfd) > 1e-8) & ~pattern)

    def test_template_is_instruction_level(self):
        """One analysis per instruction, expanded across records: records
        sharing the instruction share the template structurally."""
        b = quad_objective_builder(6)
        b.add_constraints(var(0) * var(1) + var(2),
                          np.array([[0, 1, 2], [3, 4, 5]]), np.zeros((2, 0)))
        m = b.finalize()
        tape = m.pattern_blocks[0].tape
        assert tape.first_slots == [0, 1, 2]
        assert tape.second_pairs == [(1, 0)]
        assert m.nnz_jac == 6
        assert m.nnz_hess == 2
