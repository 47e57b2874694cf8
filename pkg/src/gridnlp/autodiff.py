"""Objective/constraint evaluation and sparse derivatives of a compiled model.

Derivatives are computed per pattern block: one reverse sweep over the
block's instruction gives the first derivatives for all records at once,
and one forward-over-reverse sweep per variable slot gives the rows of
the per-record Hessian.  Results are scattered into fixed-sparsity value
arrays through the slot maps precomputed by ``finalize``; all scatter
reductions run in a fixed order, so results are reproducible bit for bit.
"""
from __future__ import annotations

import numpy as np

from .model import (
    CONSTRAINT_DEFINE,
    CONSTRAINT_INCREMENT,
    OBJECTIVE_SUM,
    CompiledModel,
)


class NonFiniteResult(ArithmeticError):
    """Evaluation produced NaN or infinity (point outside the domain)."""


class DerivativeBuffers:
    """Preallocated output arrays matching a model's fixed sparsity."""

    def __init__(self, model: CompiledModel):
        self.gradient = np.zeros(model.n_var)
        self.jacobian_values = np.zeros(model.nnz_jac)
        self.hessian_values = np.zeros(model.nnz_hess)
        self.constraint_values = np.zeros(model.n_con)


def _gather(blk, x):
    return x[blk.var_idx] if blk.var_idx.shape[1] else np.zeros((blk.n_records, 0))


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteResult(f"{what} evaluation produced a non-finite value")


def eval_objective(model: CompiledModel, x: np.ndarray) -> float:
    total = 0.0
    with np.errstate(all="ignore"):
        for blk in model.pattern_blocks:
            if blk.kind != OBJECTIVE_SUM or blk.n_records == 0:
                continue
            vals = blk.tape.value(_gather(blk, x), blk.params)
            total += float(np.sum(vals))
    _check_finite(total, "objective")
    return total


def eval_constraints(model: CompiledModel, x: np.ndarray, out=None) -> np.ndarray:
    cons = out if out is not None else np.zeros(model.n_con)
    cons[:] = 0.0
    with np.errstate(all="ignore"):
        for blk in model.pattern_blocks:
            if blk.kind != CONSTRAINT_DEFINE or blk.n_records == 0:
                continue
            cons[blk.targets] = blk.tape.value(_gather(blk, x), blk.params)
        for blk in model.pattern_blocks:
            if blk.kind != CONSTRAINT_INCREMENT or blk.n_records == 0:
                continue
            np.add.at(cons, blk.targets, blk.tape.value(_gather(blk, x), blk.params))
    _check_finite(cons, "constraint")
    return cons


def eval_gradient(model: CompiledModel, x: np.ndarray, out=None) -> np.ndarray:
    grad = out if out is not None else np.zeros(model.n_var)
    grad[:] = 0.0
    with np.errstate(all="ignore"):
        for blk in model.pattern_blocks:
            if blk.kind != OBJECTIVE_SUM or blk.n_records == 0:
                continue
            vals = blk.tape.forward(_gather(blk, x), blk.params)
            slot_grad, _ = blk.tape.reverse(vals, blk.n_records)
            for slot, g in slot_grad.items():
                np.add.at(grad, blk.var_idx[:, slot], g)
    _check_finite(grad, "gradient")
    return grad


def eval_jacobian(model: CompiledModel, x: np.ndarray, out=None) -> np.ndarray:
    jac = out if out is not None else np.zeros(model.nnz_jac)
    jac[:] = 0.0
    with np.errstate(all="ignore"):
        for blk in model.pattern_blocks:
            if blk.kind == OBJECTIVE_SUM or blk.n_records == 0:
                continue
            vals = blk.tape.forward(_gather(blk, x), blk.params)
            slot_grad, _ = blk.tape.reverse(vals, blk.n_records)
            for k, slot in enumerate(blk.tape.first_slots):
                g = slot_grad.get(slot)
                if g is None:
                    continue
                np.add.at(jac, blk.jac_slots[k], np.broadcast_to(g, (blk.n_records,)))
    _check_finite(jac, "jacobian")
    return jac


def eval_lagrangian_hessian(
    model: CompiledModel,
    x: np.ndarray,
    y: np.ndarray,
    obj_weight: float = 1.0,
    out=None,
) -> np.ndarray:
    """Lower-triangle values of ``obj_weight * H(f) + sum_i y_i H(g_i)``."""
    hess = out if out is not None else np.zeros(model.nnz_hess)
    hess[:] = 0.0
    with np.errstate(all="ignore"):
        for blk in model.pattern_blocks:
            pairs = blk.tape.second_pairs
            if not pairs or blk.n_records == 0:
                continue
            if blk.kind == OBJECTIVE_SUM:
                if obj_weight == 0.0:
                    continue
                weight = obj_weight
            else:
                weight = y[blk.targets]
            vals = blk.tape.forward(_gather(blk, x), blk.params)
            _, adj = blk.tape.reverse(vals, blk.n_records)
            sweeps = sorted({b for _, b in pairs})
            cols = {
                b: blk.tape.hessian_column(vals, adj, b, blk.n_records) for b in sweeps
            }
            for k, (a, b) in enumerate(pairs):
                h = cols[b].get(a)
                if h is None:
                    continue
                contrib = weight * blk.hess_factor[k] * h
                np.add.at(
                    hess, blk.hess_slots[k], np.broadcast_to(contrib, (blk.n_records,))
                )
    _check_finite(hess, "hessian")
    return hess
