"""Condensed-space interior-point loop with inequality relaxation.

Every constraint row ``g_i(x) = 0`` (or ``lo_i <= g_i(x) <= hi_i`` for
range rows) receives a slack: the solver works on

    min f(x)  s.t.  g(x) - s = 0,   sl <= s <= su,   xl <= x <= xu,

where equality rows get the tight interval ``[-tol, +tol]`` and range
rows carry their own interval, widened by the same relative relaxation.
Steps come from the condensed KKT system (or the dense augmented
reference backend), refined against the full system, and are globalized
by a filter line search with a fraction-to-boundary rule.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteResult
from .kkt import (
    CondensedBackend,
    DegenerateInterior,
    DenseAugmentedBackend,
    KKTWorkspace,
    PVec,
    RegState,
    RegularizationExhausted,
    assemble_steps,
    iterative_refinement,
    solve_with_regularization,
)

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
REGULARIZATION_EXHAUSTED = "regularization_exhausted"
LINE_SEARCH_FAILURE = "line_search_failure"
EVAL_ERROR = "eval_error"


@dataclass
class SolverOptions:
    tol: float = 1e-4
    max_iter: int = 3000
    mu_init: float = 0.1
    bound_push: float = 0.01        # relative interior push for slack starts
    bound_relax: float | None = None  # slack interval width; defaults to tol
    mu_min: float | None = None       # barrier floor; defaults to tol/10
    kappa_eps: float = 10.0
    kappa_mu: float = 0.2
    theta_mu: float = 1.5
    tau_min: float = 0.99
    eta_phi: float = 1e-8
    gamma_theta: float = 1e-5
    gamma_phi: float = 1e-5
    s_theta: float = 1.1
    s_phi: float = 2.3
    delta: float = 1.0
    kappa_sigma: float = 1e10
    alpha_min: float = 1e-12
    s_max: float = 100.0
    fixed_var_eps: float = 1e-8
    scaling: bool = True
    backend: str = "condensed"      # "condensed" | "dense_aug"
    log_level: int = 0
    record_trace: bool = True
    keep_workspace: bool = False    # stash workspace/backend for diagnostics

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")


@dataclass
class IPMState:
    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    zxl: np.ndarray
    zxu: np.ndarray
    zsl: np.ndarray
    zsu: np.ndarray
    mu: float
    filter: list = field(default_factory=list)
    iteration: int = 0


@dataclass
class SolveReport:
    status: str
    objective: float = np.nan
    constraint_violation: float = np.nan
    residual_scaled: float = np.nan
    iterations: int = 0
    seconds: dict = field(default_factory=dict)
    final_mu: float = np.nan
    n_var: int = 0
    n_con: int = 0
    refinement_relative_residual: float = np.nan
    message: str = ""
    x: np.ndarray | None = None
    trace: list = field(default_factory=list)
    debug: dict = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return self.status == OPTIMAL


def relax_equalities(m, ranges, tol):
    """Per-row slack bounds: equality rows get [-tol, +tol]; range rows
    keep their interval widened by the same relative relaxation."""
    if ranges is None:
        lo = np.zeros(m)
        hi = np.zeros(m)
    else:
        ranges = np.asarray(ranges, dtype=float)
        lo, hi = ranges[:, 0].copy(), ranges[:, 1].copy()
    sl = np.where(np.isfinite(lo), lo - tol * np.maximum(1.0, np.abs(lo)), -np.inf)
    su = np.where(np.isfinite(hi), hi + tol * np.maximum(1.0, np.abs(hi)), np.inf)
    return sl, su


def initial_slacks(g0, sl, su, tol, push):
    """Clamp g(x0) into the strict interior of the slack intervals."""
    lo = np.where(np.isfinite(sl), sl + push * tol, -np.inf)
    hi = np.where(np.isfinite(su), su - push * tol, np.inf)
    s = np.minimum(np.maximum(g0, lo), hi)
    crossed = lo > hi
    if np.any(crossed):
        s = np.where(crossed, 0.5 * (sl + su), s)
    return s


def _width(v, bound, upper=False):
    d = (bound - v) if upper else (v - bound)
    return np.where(np.isfinite(bound), d, np.inf)


def _safe_max(*arrays):
    out = 0.0
    for a in arrays:
        if a.size:
            out = max(out, float(np.abs(a).max()))
    return out


def kkt_residual(dual_x, dual_s, primal, comps, z_l1, y_l1, m, n_bounds, s_max=100.0):
    """Scaled optimality residual (max of scaled dual, primal, and
    complementarity infinity norms)."""
    s_d = max(s_max, (y_l1 + z_l1) / max(1, m + n_bounds)) / s_max
    s_c = max(s_max, z_l1 / max(1, n_bounds)) / s_max
    dual = max(_safe_max(dual_x), _safe_max(dual_s)) / s_d
    comp = _safe_max(*comps) / s_c if n_bounds else 0.0
    return max(dual, _safe_max(primal), comp)


class _Problem:
    """Scaled model callbacks plus bound/slack bookkeeping for one solve."""

    def __init__(self, model, options, constraint_ranges):
        self.model = model
        self.opts = options
        self.n = model.n_var
        self.m = model.n_con
        tol = options.bound_relax if options.bound_relax is not None else options.tol

        self.xl = model.lower.copy()
        self.xu = model.upper.copy()
        fixed = self.xl == self.xu
        if np.any(fixed):
            eps = options.fixed_var_eps * np.maximum(1.0, np.abs(self.xl))
            self.xl = np.where(fixed, self.xl - eps, self.xl)
            self.xu = np.where(fixed, self.xu + eps, self.xu)
        self.x0 = np.minimum(np.maximum(model.start, self.xl), self.xu)

        # gradient-based scaling, frozen at the start point
        grad0 = ad.eval_gradient(model, self.x0)
        jac0 = ad.eval_jacobian(model, self.x0)
        if options.scaling:
            gmax = _safe_max(grad0)
            self.obj_scale = min(1.0, 100.0 / gmax) if gmax > 0 else 1.0
            rowmax = np.zeros(self.m)
            if jac0.size:
                np.maximum.at(rowmax, model.jac_rows, np.abs(jac0))
            self.con_scale = np.ones(self.m)
            pos = rowmax > 0
            self.con_scale[pos] = np.minimum(1.0, 100.0 / rowmax[pos])
        else:
            self.obj_scale = 1.0
            self.con_scale = np.ones(self.m)

        if constraint_ranges is None:
            self.range_lo = np.zeros(self.m)
            self.range_hi = np.zeros(self.m)
        else:
            cr = np.asarray(constraint_ranges, dtype=float)
            self.range_lo, self.range_hi = cr[:, 0].copy(), cr[:, 1].copy()
        scaled = np.column_stack([self.range_lo * self.con_scale,
                                  self.range_hi * self.con_scale]) if self.m else None
        self.sl, self.su = relax_equalities(self.m, scaled, tol)
        self.relax_tol = tol
        self.ad_seconds = 0.0

    # scaled callbacks, instrumented for the timing breakdown ------------
    def objective(self, x):
        t = time.perf_counter()
        try:
            return self.obj_scale * ad.eval_objective(self.model, x)
        finally:
            self.ad_seconds += time.perf_counter() - t

    def constraints(self, x):
        t = time.perf_counter()
        try:
            return self.con_scale * ad.eval_constraints(self.model, x)
        finally:
            self.ad_seconds += time.perf_counter() - t

    def gradient(self, x):
        t = time.perf_counter()
        try:
            return self.obj_scale * ad.eval_gradient(self.model, x)
        finally:
            self.ad_seconds += time.perf_counter() - t

    def jacobian(self, x):
        t = time.perf_counter()
        try:
            vals = ad.eval_jacobian(self.model, x)
            return vals * self.con_scale[self.model.jac_rows] if vals.size else vals
        finally:
            self.ad_seconds += time.perf_counter() - t

    def hessian(self, x, y):
        """W of the scaled Lagrangian f~ + y^T g~.

        The solver's internal multiplier convention matches the AD
        callback convention, so y passes through with only row scaling;
        this is the single place the two meet.
        """
        t = time.perf_counter()
        try:
            yb = y * self.con_scale if self.m else y
            return ad.eval_lagrangian_hessian(self.model, x, yb, self.obj_weight)
        finally:
            self.ad_seconds += time.perf_counter() - t

    @property
    def obj_weight(self):
        return self.obj_scale

    def raw_violation(self, x):
        """Unscaled inf-norm of g(x) outside its [lo, hi] range."""
        g = ad.eval_constraints(self.model, x)
        if not g.size:
            return 0.0
        lo_side = np.maximum(self.range_lo - g, 0.0)
        hi_side = np.maximum(g - self.range_hi, 0.0)
        return float(np.maximum(lo_side, hi_side).max())


def _fraction_to_boundary(v, dv, lower, upper, tau):
    alpha = 1.0
    neg = (dv < 0) & np.isfinite(lower)
    if np.any(neg):
        alpha = min(alpha, float(np.min(-tau * (v[neg] - lower[neg]) / dv[neg])))
    pos = (dv > 0) & np.isfinite(upper)
    if np.any(pos):
        alpha = min(alpha, float(np.min(tau * (upper[pos] - v[pos]) / dv[pos])))
    return alpha


def _dual_fraction_to_boundary(z, dz, tau):
    alpha = 1.0
    neg = dz < 0
    if np.any(neg):
        alpha = min(alpha, float(np.min(-tau * z[neg] / dz[neg])))
    return alpha


class _Filter:
    def __init__(self):
        self.entries: list[tuple[float, float]] = []

    def acceptable(self, theta, phi):
        return all(theta < th or phi < ph for th, ph in self.entries)

    def add(self, theta, phi):
        self.entries = [
            (th, ph) for th, ph in self.entries if not (th >= theta and ph >= phi)
        ]
        self.entries.append((theta, phi))

    def clear(self):
        self.entries.clear()


def solve(model, options: SolverOptions | None = None, constraint_ranges=None) -> SolveReport:
    opts = options if options is not None else SolverOptions()
    t_start = time.perf_counter()
    lin_seconds = 0.0

    report = SolveReport(status=MAX_ITER, n_var=model.n_var, n_con=model.n_con)
    try:
        prob = _Problem(model, opts, constraint_ranges)
    except NonFiniteResult as exc:
        report.status = EVAL_ERROR
        report.message = str(exc)
        report.seconds = {"total": time.perf_counter() - t_start, "ad": 0.0,
                          "linear": 0.0, "internal": 0.0}
        return report

    n, m = prob.n, prob.m
    xl, xu, sl, su = prob.xl, prob.xu, prob.sl, prob.su
    mu_min = opts.mu_min if opts.mu_min is not None else opts.tol / 10.0

    ws = KKTWorkspace(n, m, model.hess_rows, model.hess_cols,
                      model.jac_rows, model.jac_cols)
    backend = (DenseAugmentedBackend(ws) if opts.backend == "dense_aug"
               else CondensedBackend(ws))
    reg = RegState()

    state = IPMState(
        x=prob.x0.copy(),
        s=np.zeros(m),
        y=np.zeros(m),
        zxl=np.where(np.isfinite(xl), 1.0, 0.0),
        zxu=np.where(np.isfinite(xu), 1.0, 0.0),
        zsl=np.where(np.isfinite(sl), 1.0, 0.0),
        zsu=np.where(np.isfinite(su), 1.0, 0.0),
        mu=opts.mu_init,
    )
    fil = _Filter()
    n_bounds = int(np.isfinite(xl).sum() + np.isfinite(xu).sum()
                   + np.isfinite(sl).sum() + np.isfinite(su).sum())

    def barrier_phi(fval, dxl, dxu, dsl, dsu):
        out = fval
        for w in (dxl, dxu, dsl, dsu):
            finite = np.isfinite(w)
            if np.any(finite):
                out -= state.mu * float(np.log(w[finite]).sum())
        return out

    def finish(status, message=""):
        total = time.perf_counter() - t_start
        report.status = status
        report.message = message
        report.iterations = state.iteration
        report.final_mu = state.mu
        report.x = state.x.copy()
        try:
            report.objective = ad.eval_objective(model, state.x)
            report.constraint_violation = prob.raw_violation(state.x)
        except NonFiniteResult:
            pass
        internal = max(0.0, total - prob.ad_seconds - lin_seconds)
        report.seconds = {"total": total, "ad": prob.ad_seconds,
                          "linear": lin_seconds, "internal": internal}
        if opts.record_trace:
            report.debug["filter"] = list(fil.entries)
        if opts.keep_workspace:
            report.debug["workspace"] = ws
            report.debug["backend"] = backend
            report.debug["problem"] = prob
        return report

    try:
        g0 = prob.constraints(state.x)
    except NonFiniteResult as exc:
        return finish(EVAL_ERROR, str(exc))
    state.s = initial_slacks(g0, sl, su, prob.relax_tol, opts.bound_push)

    theta_fn = lambda g, s: float(np.abs(g - s).sum()) if m else 0.0
    theta0 = theta_fn(g0, state.s)
    theta_min = 1e-4 * max(1.0, theta0)
    theta_max = 1e4 * max(1.0, theta0)

    for _ in range(opts.max_iter):
        x, s = state.x, state.s
        try:
            fval = prob.objective(x)
            g = prob.constraints(x)
            grad = prob.gradient(x)
            jvals = prob.jacobian(x)
            wvals = prob.hessian(x, state.y)
        except NonFiniteResult as exc:
            return finish(EVAL_ERROR, str(exc))

        dxl = _width(x, xl)
        dxu = _width(x, xu, upper=True)
        dsl = _width(s, sl)
        dsu = _width(s, su, upper=True)
        ws.set_iterate(wvals, jvals, dxl, dxu, state.zxl, state.zxu,
                       dsl, dsu, state.zsl, state.zsu)

        dual_x = grad + ws.at_matvec(state.y) - state.zxl + state.zxu
        dual_s = -state.y - state.zsl + state.zsu
        primal = g - s

        def comp_terms(mu):
            out = []
            for z, w in ((state.zxl, dxl), (state.zxu, dxu),
                         (state.zsl, dsl), (state.zsu, dsu)):
                finite = np.isfinite(w)
                out.append(z[finite] * w[finite] - mu)
            return out

        z_l1 = float(sum(np.abs(z).sum() for z in
                         (state.zxl, state.zxu, state.zsl, state.zsu)))
        y_l1 = float(np.abs(state.y).sum())
        resid_args = dict(z_l1=z_l1, y_l1=y_l1, m=m, n_bounds=n_bounds,
                          s_max=opts.s_max)
        e_0 = kkt_residual(dual_x, dual_s, primal, comp_terms(0.0), **resid_args)
        if e_0 < opts.tol:
            report.residual_scaled = e_0
            return finish(OPTIMAL)

        e_mu = kkt_residual(dual_x, dual_s, primal, comp_terms(state.mu), **resid_args)
        while e_mu <= opts.kappa_eps * state.mu and state.mu > mu_min * (1 + 1e-12):
            state.mu = max(mu_min, min(opts.kappa_mu * state.mu,
                                       state.mu ** opts.theta_mu))
            fil.clear()
            e_mu = kkt_residual(dual_x, dual_s, primal, comp_terms(state.mu),
                                **resid_args)
        mu = state.mu

        def mu_vec(w):
            return np.where(np.isfinite(w), mu, 0.0)

        pv = PVec(
            x=-dual_x,
            s=-dual_s,
            y=-primal,
            zxl=mu_vec(dxl) - state.zxl * np.where(np.isfinite(dxl), dxl, 0.0),
            zxu=mu_vec(dxu) - state.zxu * np.where(np.isfinite(dxu), dxu, 0.0),
            zsl=mu_vec(dsl) - state.zsl * np.where(np.isfinite(dsl), dsl, 0.0),
            zsu=mu_vec(dsu) - state.zsu * np.where(np.isfinite(dsu), dsu, 0.0),
        )

        t_lin = time.perf_counter()
        try:
            (dx, ds, dy), delta_w = solve_with_regularization(ws, backend, pv, reg)
            steps = assemble_steps(ws, pv, dx, ds, dy)
            ir_stats = iterative_refinement(ws, backend, steps, pv)
        except RegularizationExhausted as exc:
            lin_seconds += time.perf_counter() - t_lin
            return finish(REGULARIZATION_EXHAUSTED, str(exc))
        lin_seconds += time.perf_counter() - t_lin
        report.refinement_relative_residual = ir_stats.relative_residual

        # fraction-to-boundary rule
        tau = max(opts.tau_min, 1.0 - mu)
        alpha_max = min(_fraction_to_boundary(x, steps.x, xl, xu, tau),
                        _fraction_to_boundary(s, steps.s, sl, su, tau))
        alpha_z = 1.0
        for z, dz in ((state.zxl, steps.zxl), (state.zxu, steps.zxu),
                      (state.zsl, steps.zsl), (state.zsu, steps.zsu)):
            alpha_z = min(alpha_z, _dual_fraction_to_boundary(z, dz, tau))

        theta_cur = theta_fn(g, s)
        phi_cur = barrier_phi(fval, dxl, dxu, dsl, dsu)
        gphi_x = grad.copy()
        finite = np.isfinite(dxl)
        gphi_x[finite] -= mu / dxl[finite]
        finite = np.isfinite(dxu)
        gphi_x[finite] += mu / dxu[finite]
        gphi_s = np.zeros(m)
        finite = np.isfinite(dsl)
        gphi_s[finite] -= mu / dsl[finite]
        finite = np.isfinite(dsu)
        gphi_s[finite] += mu / dsu[finite]
        dphi = float(gphi_x @ steps.x + (gphi_s @ steps.s if m else 0.0))

        alpha = alpha_max
        accepted = False
        f_type = False
        while alpha >= opts.alpha_min:
            xt = x + alpha * steps.x
            st_trial = s + alpha * steps.s
            try:
                ft = prob.objective(xt)
                gt = prob.constraints(xt)
            except NonFiniteResult:
                alpha *= 0.5
                continue
            theta_t = theta_fn(gt, st_trial)
            phi_t = barrier_phi(ft, _width(xt, xl), _width(xt, xu, upper=True),
                                _width(st_trial, sl), _width(st_trial, su, upper=True))
            if not np.isfinite(phi_t) or theta_t > theta_max:
                alpha *= 0.5
                continue
            if not fil.acceptable(theta_t, phi_t):
                alpha *= 0.5
                continue
            switching = (dphi < 0.0 and
                         alpha * (-dphi) ** opts.s_phi
                         > opts.delta * theta_cur ** opts.s_theta)
            if theta_cur <= theta_min and switching:
                if phi_t <= phi_cur + opts.eta_phi * alpha * dphi:
                    accepted = True
                    f_type = True
                    break
            else:
                if (theta_t <= (1.0 - opts.gamma_theta) * theta_cur
                        or phi_t <= phi_cur - opts.gamma_phi * theta_cur):
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            return finish(LINE_SEARCH_FAILURE,
                          f"step size below {opts.alpha_min:g}")
        if not f_type:
            fil.add((1.0 - opts.gamma_theta) * theta_cur,
                    phi_cur - opts.gamma_phi * theta_cur)

        # accept the trial point and the dual steps
        state.x = x + alpha * steps.x
        state.s = s + alpha * steps.s
        state.y = state.y + alpha * steps.y
        state.zxl = state.zxl + alpha_z * steps.zxl
        state.zxu = state.zxu + alpha_z * steps.zxu
        state.zsl = state.zsl + alpha_z * steps.zsl
        state.zsu = state.zsu + alpha_z * steps.zsu

        # dual safeguard: keep z within a mu-proportional band of 1/width
        for z, v, bound, upper in ((state.zxl, state.x, xl, False),
                                   (state.zxu, state.x, xu, True),
                                   (state.zsl, state.s, sl, False),
                                   (state.zsu, state.s, su, True)):
            w = _width(v, bound, upper=upper)
            finite = np.isfinite(w)
            if np.any(finite):
                wf = w[finite]
                z[finite] = np.minimum(np.maximum(z[finite],
                                                  mu / (opts.kappa_sigma * wf)),
                                       opts.kappa_sigma * mu / wf)

        for v, bound, upper, what in ((state.x, xl, False, "x lower"),
                                      (state.x, xu, True, "x upper"),
                                      (state.s, sl, False, "s lower"),
                                      (state.s, su, True, "s upper")):
            w = _width(v, bound, upper=upper)
            if np.any(w[np.isfinite(w)] <= 0.0):
                raise DegenerateInterior(f"{what} slack lost strict interiority")

        state.iteration += 1
        if opts.record_trace:
            report.trace.append((state.iteration, fval / prob.obj_scale,
                                 _safe_max(primal), _safe_max(dual_x, dual_s),
                                 mu, alpha, delta_w))
            report.debug.setdefault("accepted", []).append(
                (theta_t, phi_t, list(fil.entries)))
        if opts.log_level >= 2:
            print(f"iter {state.iteration:4d} obj {fval / prob.obj_scale: .8e} "
                  f"inf_pr {_safe_max(primal):.2e} inf_du {_safe_max(dual_x, dual_s):.2e} "
                  f"mu {mu:.1e} alpha {alpha:.2e} dw {delta_w:.1e}")
        report.residual_scaled = e_0

    return finish(MAX_ITER)
