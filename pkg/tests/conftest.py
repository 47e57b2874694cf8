import pathlib
import sys

import numpy as np
import pytest

sys.path.insert(0, str(pathlib.Path(__file__).parent))

from gridnlp.acopf import build_acopf
from gridnlp.ipm import SolverOptions, solve
from gridnlp.matpower import parse_matpower_file

CASE_DIR = pathlib.Path(__file__).parent.parent / "src" / "gridnlp" / "cases"
CASE_NAMES = ("case14", "case30", "case57", "case118")


def case_path(name):
    return CASE_DIR / f"{name}.m"


@pytest.fixture(scope="session")
def networks():
    return {name: parse_matpower_file(case_path(name)) for name in CASE_NAMES}


@pytest.fixture(scope="session")
def acopf_models(networks):
    return {name: build_acopf(net) for name, net in networks.items()}


@pytest.fixture(scope="session")
def condensed_reports(acopf_models):
    out = {}
    for name, am in acopf_models.items():
        out[name] = solve(am.model, SolverOptions(tol=1e-4, keep_workspace=True),
                          constraint_ranges=am.ranges)
    return out


@pytest.fixture(scope="session")
def reference_reports(acopf_models):
    """Dense augmented-system solves of the identical relaxed model at a
    tight tolerance; the independent-route oracle for solution quality."""
    out = {}
    for name, am in acopf_models.items():
        out[name] = solve(
            am.model,
            SolverOptions(tol=1e-8, bound_relax=1e-4, backend="dense_aug"),
            constraint_ranges=am.ranges,
        )
    return out


def interior_points(model, rng, count=5, spread=0.05):
    """Random points strictly inside the variable bounds, near the start."""
    pts = []
    lo = np.where(np.isfinite(model.lower), model.lower, -np.inf)
    hi = np.where(np.isfinite(model.upper), model.upper, np.inf)
    for _ in range(count):
        x = model.start + rng.uniform(-spread, spread, model.n_var)
        width_lo = np.where(np.isfinite(lo), x - lo, np.inf)
        width_hi = np.where(np.isfinite(hi), hi - x, np.inf)
        x = np.where(width_lo < 0.01, lo + 0.01, x)
        x = np.where(width_hi < 0.01, hi - 0.01, x)
        pts.append(x)
    return pts
