from .csc import SparseSymmetric, UpperTriangleEntry, coo_to_csc
from .amd import amd_order
from .cholesky import (
    NumericFactor,
    SymbolicFactorization,
    estimate_condition,
    factorize,
    solve,
    solve_in_place,
    symbolic_cholesky,
)

__all__ = [
    "SparseSymmetric",
    "UpperTriangleEntry",
    "coo_to_csc",
    "amd_order",
    "SymbolicFactorization",
    "NumericFactor",
    "symbolic_cholesky",
    "factorize",
    "solve",
    "solve_in_place",
    "estimate_condition",
]
