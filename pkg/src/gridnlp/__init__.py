"""Sparse NLP solving via a condensed-space interior-point method, with a
pattern-based modeling layer and an AC optimal power flow front end."""

from .model import ModelBuilder, CompiledModel, VariableBlock
from .expressions import var, param, const, sin, cos, log, sqrt, exp
from .autodiff import (
    DerivativeBuffers,
    NonFiniteResult,
    eval_constraints,
    eval_gradient,
    eval_jacobian,
    eval_lagrangian_hessian,
    eval_objective,
)
from .ipm import SolveReport, SolverOptions, solve
from .matpower import NetworkData, parse_matpower, parse_matpower_file
from .acopf import AcopfModel, build_acopf

__version__ = "0.1.0"

__all__ = [
    "ModelBuilder", "CompiledModel", "VariableBlock",
    "var", "param", "const", "sin", "cos", "log", "sqrt", "exp",
    "DerivativeBuffers", "NonFiniteResult",
    "eval_objective", "eval_constraints", "eval_gradient",
    "eval_jacobian", "eval_lagrangian_hessian",
    "SolverOptions", "SolveReport", "solve",
    "NetworkData", "parse_matpower", "parse_matpower_file",
    "AcopfModel", "build_acopf",
]
