"""Benchmark records and case-running helpers behind the CLI.

Produces one record per case in the shape of the timing/quality tables:
problem sizes, iteration count, objective, raw constraint violation, and
the wall-time breakdown into derivative evaluation, linear solver, and
solver internals.  Optionally estimates 1-norm condition numbers of the
condensed and augmented KKT matrices at the final iterate.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .acopf import build_acopf
from .ipm import OPTIMAL, SolverOptions, solve
from .matpower import parse_matpower_file
from .sparse import estimate_condition

DENSE_CONDITION_LIMIT = 2000
SKIPPED_TOO_LARGE = "skipped_too_large"

CSV_COLUMNS = [
    "case", "n_var", "n_con", "iterations", "status", "objective",
    "violation", "total_s", "ad_s", "linear_s", "internal_s",
    "condensed_condition", "augmented_condition", "augmented_condition_dense",
]


@dataclass
class BenchRecord:
    case: str
    n_var: int = 0
    n_con: int = 0
    iterations: int = 0
    status: str = ""
    objective: float | None = None
    violation: float | None = None
    seconds: dict = field(default_factory=dict)
    condensed_condition: float | None = None
    augmented_condition: float | None = None
    augmented_condition_dense: float | str | None = None
    error: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "BenchRecord":
        return cls(**json.loads(text))

    def csv_row(self):
        sec = self.seconds or {}
        return [
            self.case, self.n_var, self.n_con, self.iterations, self.status,
            self.objective, self.violation,
            sec.get("total"), sec.get("ad"), sec.get("linear"), sec.get("internal"),
            self.condensed_condition, self.augmented_condition,
            self.augmented_condition_dense,
        ]


def _augmented_sparse(ws):
    """Assemble the augmented three-block matrix in sparse form."""
    n, m = ws.n, ws.m
    off = ws.hess_rows != ws.hess_cols
    rows = np.concatenate([
        ws.hess_rows, ws.hess_cols[off], np.arange(n),
        ws.jac_rows + n + m, ws.jac_cols,
        n + np.arange(m), n + np.arange(m),
        n + m + np.arange(m), n + m + np.arange(m),
    ])
    cols = np.concatenate([
        ws.hess_cols, ws.hess_rows[off], np.arange(n),
        ws.jac_cols, ws.jac_rows + n + m,
        n + np.arange(m), n + m + np.arange(m),
        n + np.arange(m), n + m + np.arange(m),
    ])
    vals = np.concatenate([
        ws.w_vals, ws.w_vals[off], ws.sigma_x + ws.delta_w,
        ws.a_vals, ws.a_vals,
        ws.sigma_s + ws.delta_w, -np.ones(m),
        -np.ones(m), -np.full(m, ws.delta_c),
    ])
    dim = n + 2 * m
    return sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim)).tocsc()


def _hager_estimate(solve_fn, dim, iters=6):
    x = np.full(dim, 1.0 / dim)
    est = 0.0
    for _ in range(iters):
        y = solve_fn(x)
        est_new = float(np.abs(y).sum())
        xi = np.sign(y)
        xi[xi == 0.0] = 1.0
        z = solve_fn(xi)  # all matrices here are symmetric
        j = int(np.argmax(np.abs(z)))
        if np.abs(z[j]) <= z @ x or est_new <= est:
            est = max(est, est_new)
            break
        est = est_new
        x = np.zeros(dim)
        x[j] = 1.0
    return est


def diagnose_conditioning(report, dense_limit=DENSE_CONDITION_LIMIT):
    """Condition estimates of the condensed and augmented systems at the
    final iterate of a solve run with ``keep_workspace=True``."""
    ws = report.debug["workspace"]
    backend = report.debug["backend"]
    out = {}
    if hasattr(backend, "structure"):
        backend.try_factorize()
        if backend.factor.ok:
            out["condensed_condition"] = float(
                estimate_condition(backend.factor, backend.structure.matrix)
            )
    m_aug = _augmented_sparse(ws)
    norm1 = float(np.abs(m_aug).sum(axis=0).max())
    lu = spla.splu(m_aug)
    out["augmented_condition"] = norm1 * _hager_estimate(lu.solve, m_aug.shape[0])
    if m_aug.shape[0] <= dense_limit:
        out["augmented_condition_dense"] = float(
            np.linalg.cond(m_aug.toarray(), 1)
        )
    else:
        out["augmented_condition_dense"] = SKIPPED_TOO_LARGE
    return out


def solve_case(path, tol=1e-4, max_iter=3000, log_level=0,
               diagnose=False, backend="condensed"):
    """Parse, build, and solve one case file; returns (record, report)."""
    net = parse_matpower_file(path)
    acopf = build_acopf(net)
    opts = SolverOptions(tol=tol, max_iter=max_iter, log_level=log_level,
                         backend=backend, keep_workspace=diagnose)
    report = solve(acopf.model, opts, constraint_ranges=acopf.ranges)
    record = BenchRecord(
        case=net.name or str(path),
        n_var=report.n_var,
        n_con=report.n_con,
        iterations=report.iterations,
        status=report.status,
        objective=None if report.objective is None or np.isnan(report.objective)
        else float(report.objective),
        violation=None if np.isnan(report.constraint_violation)
        else float(report.constraint_violation),
        seconds={k: float(v) for k, v in report.seconds.items()},
    )
    if diagnose and report.status == OPTIMAL:
        diag = diagnose_conditioning(report)
        record.condensed_condition = diag.get("condensed_condition")
        record.augmented_condition = diag.get("augmented_condition")
        record.augmented_condition_dense = diag.get("augmented_condition_dense")
    return record, report


def run_suite(case_paths, tol=1e-4, max_iter=3000, log_level=0, parallel=0):
    """Solve every case; per-case failures become failure records."""
    if parallel and parallel > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=parallel) as pool:
            futures = [
                pool.submit(_suite_worker, str(p), tol, max_iter) for p in case_paths
            ]
            return [f.result() for f in futures]
    return [_suite_worker(str(p), tol, max_iter, log_level) for p in case_paths]


def _suite_worker(path, tol, max_iter, log_level=0):
    try:
        record, _ = solve_case(path, tol=tol, max_iter=max_iter,
                               log_level=log_level)
        return record
    except Exception as exc:  # parse errors etc. must not kill the suite
        name = path.rsplit("/", 1)[-1]
        return BenchRecord(case=name, status="failed", error=str(exc))


def render_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow(r.csv_row())
    return buf.getvalue()


def render_text(records) -> str:
    headers = ["case", "vars", "cons", "iter", "status", "objective",
               "violation", "ad_s", "lin_s", "total_s"]
    rows = []
    for r in records:
        sec = r.seconds or {}
        rows.append([
            r.case, str(r.n_var), str(r.n_con), str(r.iterations),
            r.status or "failed",
            "" if r.objective is None else f"{r.objective:.4f}",
            "" if r.violation is None else f"{r.violation:.3e}",
            "" if "ad" not in sec else f"{sec['ad']:.3f}",
            "" if "linear" not in sec else f"{sec['linear']:.3f}",
            "" if "total" not in sec else f"{sec['total']:.3f}",
        ])
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    out = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    for row in rows:
        out.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(out) + "\n"
