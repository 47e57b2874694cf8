"""Pattern-block NLP model: few instructions applied across data arrays.

A model is built incrementally from variable blocks and pattern blocks.
Each pattern block pairs one scalar instruction with a data array; the
three kinds are

* ``OBJECTIVE_SUM``       -- records are summed into the objective,
* ``CONSTRAINT_DEFINE``   -- each record defines one fresh constraint,
* ``CONSTRAINT_INCREMENT`` -- each record adds into an existing constraint.

``finalize`` runs the sparsity analysis once per instruction and expands
the resulting template over the records, producing fixed, deduplicated
Jacobian/Hessian coordinate lists plus scatter maps for fast repeated
evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .expressions import Expr, Tape

OBJECTIVE_SUM = "objective_sum"
CONSTRAINT_DEFINE = "constraint_define"
CONSTRAINT_INCREMENT = "constraint_increment"

BOUND_PUSH = 0.01  # relative push of start points into the bound interior


class InvalidBounds(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


class UnknownConstraint(IndexError):
    pass


@dataclass
class VariableBlock:
    offset: int
    count: int
    lower: np.ndarray
    upper: np.ndarray
    start: np.ndarray

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.count)


class PatternBlock:
    """One (instruction, data array) pair."""

    def __init__(self, kind, tape, var_idx, params, targets=None):
        self.kind = kind
        self.tape = tape
        self.var_idx = var_idx
        self.params = params
        self.targets = targets
        # filled by finalize(): scatter maps aligned with the template
        self.jac_slots: list[np.ndarray] = []
        self.hess_slots: list[np.ndarray] = []
        self.hess_factor: list[np.ndarray] = []

    @property
    def n_records(self) -> int:
        return self.var_idx.shape[0]


def _push_inside(lower, upper, start):
    """Clamp start points into the interior of finite bound intervals."""
    clamped = np.array(start, dtype=float)
    lo_margin = np.full_like(clamped, -np.inf)
    hi_margin = np.full_like(clamped, np.inf)
    flo = np.isfinite(lower)
    fhi = np.isfinite(upper)
    lo_margin[flo] = lower[flo] + BOUND_PUSH * np.maximum(1.0, np.abs(lower[flo]))
    hi_margin[fhi] = upper[fhi] - BOUND_PUSH * np.maximum(1.0, np.abs(upper[fhi]))
    crossed = lo_margin > hi_margin
    clamped = np.minimum(np.maximum(clamped, lo_margin), hi_margin)
    # degenerate or very narrow interval: fall back to the midpoint
    both = flo & fhi & crossed
    clamped[both] = 0.5 * (lower[both] + upper[both])
    return clamped


def _check_records(tape, var_idx, params, n_records_hint=None):
    var_idx = np.asarray(var_idx, dtype=np.int64)
    params = np.asarray(params, dtype=float)
    if var_idx.ndim == 1:
        if var_idx.size == 0:
            var_idx = var_idx.reshape(0, tape.n_var_slots)
        elif tape.n_var_slots == 1:
            var_idx = var_idx.reshape(-1, 1)
        else:
            var_idx = var_idx.reshape(1, -1)
    if params.ndim == 1:
        if params.size == 0:
            params = params.reshape(0, tape.n_param_slots)
        elif tape.n_param_slots == 1:
            params = params.reshape(-1, 1)
        else:
            params = params.reshape(1, -1)
    n = var_idx.shape[0] if tape.n_var_slots else params.shape[0]
    if n == 0 and n_records_hint is not None:
        n = n_records_hint
    if tape.n_var_slots == 0:
        var_idx = np.zeros((n, 0), dtype=np.int64)
    if tape.n_param_slots == 0:
        params = np.zeros((n, 0), dtype=float)
    if var_idx.shape != (n, tape.n_var_slots):
        raise ValueError(
            f"variable index array has shape {var_idx.shape}, "
            f"expected ({n}, {tape.n_var_slots})"
        )
    if params.shape != (n, tape.n_param_slots):
        raise ValueError(
            f"parameter array has shape {params.shape}, expected ({n}, {tape.n_param_slots})"
        )
    return var_idx, params, n


def _canonical_order(var_idx, params, targets=None):
    """Deterministic record order so evaluation results do not depend on
    the order records were supplied in (fixed reduction order)."""
    keys = []
    for c in range(params.shape[1] - 1, -1, -1):
        keys.append(params[:, c])
    for c in range(var_idx.shape[1] - 1, -1, -1):
        keys.append(var_idx[:, c])
    if targets is not None:
        keys.append(targets)
    if not keys:
        return np.arange(var_idx.shape[0])
    return np.lexsort(keys)


class ModelBuilder:
    """Accumulates variable and pattern blocks; ``finalize`` compiles."""

    def __init__(self):
        self.variable_blocks: list[VariableBlock] = []
        self.pattern_blocks: list[PatternBlock] = []
        self.n_var = 0
        self.n_con = 0

    def add_variables(self, count, lower, upper, start) -> VariableBlock:
        if count < 1:
            raise InvalidBounds("variable block must hold at least one variable")
        lower = np.array(lower, dtype=float)
        upper = np.array(upper, dtype=float)
        start = np.array(start, dtype=float)
        if not (lower.shape == upper.shape == start.shape == (count,)):
            raise InvalidBounds("bound/start arrays must have length count")
        if np.any(lower > upper):
            raise InvalidBounds("lower bound exceeds upper bound")
        block = VariableBlock(
            offset=self.n_var,
            count=count,
            lower=lower,
            upper=upper,
            start=_push_inside(lower, upper, start),
        )
        self.variable_blocks.append(block)
        self.n_var += count
        return block

    def _compile(self, instruction: Expr) -> Tape:
        return Tape(instruction)

    def _check_var_range(self, var_idx):
        if var_idx.size and (var_idx.min() < 0 or var_idx.max() >= self.n_var):
            raise IndexOutOfRange(
                f"variable index out of range [0, {self.n_var})"
            )

    def add_objective(self, instruction, var_idx=(), params=()) -> None:
        tape = self._compile(instruction)
        var_idx, params, n = _check_records(tape, var_idx, params, 0)
        self._check_var_range(var_idx)
        order = _canonical_order(var_idx, params)
        self.pattern_blocks.append(
            PatternBlock(OBJECTIVE_SUM, tape, var_idx[order], params[order])
        )

    def add_constraints(self, instruction, var_idx=(), params=()) -> np.ndarray:
        tape = self._compile(instruction)
        var_idx, params, n = _check_records(tape, var_idx, params, 0)
        self._check_var_range(var_idx)
        targets = np.arange(self.n_con, self.n_con + n, dtype=np.int64)
        self.n_con += n
        order = _canonical_order(var_idx, params, targets)
        self.pattern_blocks.append(
            PatternBlock(
                CONSTRAINT_DEFINE, tape, var_idx[order], params[order], targets[order]
            )
        )
        return targets

    def add_constraint_increments(self, instruction, var_idx, params, targets) -> None:
        tape = self._compile(instruction)
        targets = np.asarray(targets, dtype=np.int64)
        var_idx, params, n = _check_records(tape, var_idx, params, targets.shape[0])
        self._check_var_range(var_idx)
        if targets.shape != (n,):
            raise ValueError("targets must have one entry per record")
        if targets.size and (targets.min() < 0 or targets.max() >= self.n_con):
            raise UnknownConstraint(
                f"increment targets a constraint outside [0, {self.n_con})"
            )
        order = _canonical_order(var_idx, params, targets)
        self.pattern_blocks.append(
            PatternBlock(
                CONSTRAINT_INCREMENT, tape, var_idx[order], params[order], targets[order]
            )
        )

    def finalize(self) -> "CompiledModel":
        if self.n_var == 0:
            raise ValueError("model has no variables")
        return CompiledModel(self)


def _unique_slots(coords_i, coords_j):
    """Dedup coordinate pairs; returns (rows, cols, key lookup arrays)."""
    keys = coords_i.astype(np.int64) << 32 | coords_j.astype(np.int64)
    uniq = np.unique(keys)
    return (uniq >> 32).astype(np.int64), (uniq & 0xFFFFFFFF).astype(np.int64), uniq


class CompiledModel:
    """Finalized model with fixed derivative sparsity and scatter maps."""

    def __init__(self, builder: ModelBuilder):
        self.n_var = builder.n_var
        self.n_con = builder.n_con
        self.variable_blocks = list(builder.variable_blocks)
        self.pattern_blocks = list(builder.pattern_blocks)
        self.objective_sign = 1.0

        self.lower = np.concatenate([b.lower for b in self.variable_blocks])
        self.upper = np.concatenate([b.upper for b in self.variable_blocks])
        self.start = np.concatenate([b.start for b in self.variable_blocks])

        jac_i, jac_j = [], []
        hess_i, hess_j = [], []
        for blk in self.pattern_blocks:
            if blk.kind == OBJECTIVE_SUM:
                for a, b in blk.tape.second_pairs:
                    gi = blk.var_idx[:, a]
                    gj = blk.var_idx[:, b]
                    hess_i.append(np.maximum(gi, gj))
                    hess_j.append(np.minimum(gi, gj))
            else:
                for slot in blk.tape.first_slots:
                    jac_i.append(blk.targets)
                    jac_j.append(blk.var_idx[:, slot])
                for a, b in blk.tape.second_pairs:
                    gi = blk.var_idx[:, a]
                    gj = blk.var_idx[:, b]
                    hess_i.append(np.maximum(gi, gj))
                    hess_j.append(np.minimum(gi, gj))

        if jac_i:
            ji = np.concatenate(jac_i)
            jj = np.concatenate(jac_j)
        else:
            ji = jj = np.zeros(0, dtype=np.int64)
        if hess_i:
            hi = np.concatenate(hess_i)
            hj = np.concatenate(hess_j)
        else:
            hi = hj = np.zeros(0, dtype=np.int64)

        self.jac_rows, self.jac_cols, jac_keys = _unique_slots(ji, jj)
        self.hess_rows, self.hess_cols, hess_keys = _unique_slots(hi, hj)
        self.nnz_jac = self.jac_rows.size
        self.nnz_hess = self.hess_rows.size

        for blk in self.pattern_blocks:
            blk.jac_slots = []
            blk.hess_slots = []
            blk.hess_factor = []
            if blk.kind != OBJECTIVE_SUM:
                for slot in blk.tape.first_slots:
                    keys = blk.targets << 32 | blk.var_idx[:, slot]
                    blk.jac_slots.append(np.searchsorted(jac_keys, keys))
            for a, b in blk.tape.second_pairs:
                gi = blk.var_idx[:, a]
                gj = blk.var_idx[:, b]
                keys = np.maximum(gi, gj) << 32 | np.minimum(gi, gj)
                blk.hess_slots.append(np.searchsorted(hess_keys, keys))
                # distinct slots landing on the same variable hit the
                # diagonal from both symmetric halves
                if a != b:
                    blk.hess_factor.append(np.where(gi == gj, 2.0, 1.0))
                else:
                    blk.hess_factor.append(np.ones(blk.n_records))

    @property
    def jacobian_sparsity(self):
        return self.jac_rows, self.jac_cols

    @property
    def hessian_sparsity(self):
        return self.hess_rows, self.hess_cols
