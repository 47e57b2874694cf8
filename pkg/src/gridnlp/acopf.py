"""Polar-form AC optimal power flow as fifteen pattern blocks.

The network is mapped onto component data arrays and one instruction per
computational pattern: generation cost, the reference-angle row, the four
branch-flow definitions, angle-difference and apparent-power limits, the
two power-balance rows per bus, and the generator/flow increments into
the balance rows.  Every network produces exactly these fifteen blocks
(possibly with zero records, e.g. when no branch carries a thermal
limit).

Branch flows use the standard complex tap model: series admittance
``g + jb = 1/(r + jx)``, total charging ``b_c`` split evenly, complex tap
``tap * exp(j*shift)`` on the from side.  One-sided and range constraints
(angle difference, thermal limits) are expressed as equality rows whose
slack interval carries the range, so the interior-point relaxation
machinery handles them without extra apparatus.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expressions import cos, param, sin, var
from .matpower import NetworkData
from .model import CompiledModel, ModelBuilder


@dataclass
class AcopfVariables:
    """Index map from network quantities into the flat variable vector."""

    va: np.ndarray
    vm: np.ndarray
    pg: np.ndarray
    qg: np.ndarray
    p_from: np.ndarray
    p_to: np.ndarray
    q_from: np.ndarray
    q_to: np.ndarray


@dataclass
class AcopfModel:
    model: CompiledModel
    variables: AcopfVariables
    ranges: np.ndarray           # (n_con, 2) slack ranges per constraint row
    network: NetworkData
    p_balance_rows: np.ndarray   # per-bus active balance row
    q_balance_rows: np.ndarray


def _branch_admittances(br):
    ys = 1.0 / complex(br.r, br.x)
    g, b = ys.real, ys.imag
    t2 = br.tap * br.tap
    return {
        "gff": g / t2,
        "bff": (b + br.b_charge / 2.0) / t2,
        "gtt": g,
        "btt": b + br.b_charge / 2.0,
        "gft": g / br.tap,
        "bft": b / br.tap,
        "shift": br.shift,
    }


def build_acopf(net: NetworkData) -> AcopfModel:
    nb = len(net.buses)
    ng = len(net.generators)
    nbr = len(net.branches)
    bus_of = net.bus_index()
    base = net.base_mva

    b = ModelBuilder()
    va = b.add_variables(nb, np.full(nb, -np.inf), np.full(nb, np.inf), np.zeros(nb))
    vm = b.add_variables(
        nb,
        np.array([u.vmin for u in net.buses]),
        np.array([u.vmax for u in net.buses]),
        np.ones(nb),
    )
    pg = b.add_variables(
        ng,
        np.array([g.pmin for g in net.generators]),
        np.array([g.pmax for g in net.generators]),
        np.zeros(ng),
    )
    qg = b.add_variables(
        ng,
        np.array([g.qmin for g in net.generators]),
        np.array([g.qmax for g in net.generators]),
        np.zeros(ng),
    )
    rate = np.array([br.rate_a for br in net.branches])
    flow_lo = np.where(rate > 0, -rate, -np.inf)
    flow_hi = np.where(rate > 0, rate, np.inf)
    pf = b.add_variables(2 * nbr, np.tile(flow_lo, 2), np.tile(flow_hi, 2),
                         np.zeros(2 * nbr)) if nbr else None
    qf = b.add_variables(2 * nbr, np.tile(flow_lo, 2), np.tile(flow_hi, 2),
                         np.zeros(2 * nbr)) if nbr else None

    vmap = AcopfVariables(
        va=va.indices,
        vm=vm.indices,
        pg=pg.indices,
        qg=qg.indices,
        p_from=pf.indices[:nbr] if nbr else np.zeros(0, dtype=np.int64),
        p_to=pf.indices[nbr:] if nbr else np.zeros(0, dtype=np.int64),
        q_from=qf.indices[:nbr] if nbr else np.zeros(0, dtype=np.int64),
        q_to=qf.indices[nbr:] if nbr else np.zeros(0, dtype=np.int64),
    )

    ranges: list[tuple[float, float]] = []

    def add_ranged(instr, vi, pa, lo, hi):
        rows = b.add_constraints(instr, vi, pa)
        lo = np.broadcast_to(np.asarray(lo, dtype=float), rows.shape)
        hi = np.broadcast_to(np.asarray(hi, dtype=float), rows.shape)
        ranges.extend(zip(lo.tolist(), hi.tolist()))
        return rows

    adm = [_branch_admittances(br) for br in net.branches]
    fbus = np.array([bus_of[br.from_bus] for br in net.branches], dtype=np.int64)
    tbus = np.array([bus_of[br.to_bus] for br in net.branches], dtype=np.int64)

    # (1) generation cost (per-unit coefficients keep the $/h objective)
    cost = np.array([[g.cost[0] * base * base, g.cost[1] * base, g.cost[2]]
                     for g in net.generators]).reshape(ng, 3)
    b.add_objective(
        param(0) * var(0) ** 2 + param(1) * var(0) + param(2),
        vmap.pg.reshape(-1, 1),
        cost,
    )

    # (2) reference bus voltage angle
    ref_idx = bus_of[net.ref_bus]
    add_ranged(var(0), np.array([[vmap.va[ref_idx]]]), np.zeros((1, 0)), 0.0, 0.0)

    # (3)-(6) branch flow definitions: flow variable minus the polar flow
    delta_f = var(3) - var(4) - param(3)
    p_from_expr = var(0) - (
        param(0) * var(1) ** 2
        - var(1) * var(2) * (param(1) * cos(delta_f) + param(2) * sin(delta_f))
    )
    q_from_expr = var(0) - (
        -param(0) * var(1) ** 2
        - var(1) * var(2) * (param(1) * sin(delta_f) - param(2) * cos(delta_f))
    )
    delta_t = var(4) - var(3) + param(3)
    p_to_expr = var(0) - (
        param(0) * var(2) ** 2
        - var(1) * var(2) * (param(1) * cos(delta_t) + param(2) * sin(delta_t))
    )
    q_to_expr = var(0) - (
        -param(0) * var(2) ** 2
        - var(1) * var(2) * (param(1) * sin(delta_t) - param(2) * cos(delta_t))
    )
    vvars = np.column_stack([vmap.vm[fbus], vmap.vm[tbus],
                             vmap.va[fbus], vmap.va[tbus]]) if nbr else np.zeros((0, 4), dtype=np.int64)

    def flow_params(keys):
        return np.array([[a[k] for k in keys] for a in adm]).reshape(nbr, len(keys))

    add_ranged(p_from_expr,
               np.column_stack([vmap.p_from, vvars]) if nbr else np.zeros((0, 5), dtype=np.int64),
               flow_params(("gff", "gft", "bft", "shift")), 0.0, 0.0)
    add_ranged(q_from_expr,
               np.column_stack([vmap.q_from, vvars]) if nbr else np.zeros((0, 5), dtype=np.int64),
               flow_params(("bff", "gft", "bft", "shift")), 0.0, 0.0)
    add_ranged(p_to_expr,
               np.column_stack([vmap.p_to, vvars]) if nbr else np.zeros((0, 5), dtype=np.int64),
               flow_params(("gtt", "gft", "bft", "shift")), 0.0, 0.0)
    add_ranged(q_to_expr,
               np.column_stack([vmap.q_to, vvars]) if nbr else np.zeros((0, 5), dtype=np.int64),
               flow_params(("btt", "gft", "bft", "shift")), 0.0, 0.0)

    # (7) angle differences; MATPOWER marks +-360 deg (or 0,0) unconstrained
    ang_sel = []
    ang_lo, ang_hi = [], []
    for k, br in enumerate(net.branches):
        lo = br.angmin if -np.pi < br.angmin else -np.inf
        hi = br.angmax if br.angmax < np.pi else np.inf
        if br.angmin == 0.0 and br.angmax == 0.0:
            continue
        if not (np.isfinite(lo) or np.isfinite(hi)):
            continue
        ang_sel.append(k)
        ang_lo.append(lo)
        ang_hi.append(hi)
    ang_sel = np.array(ang_sel, dtype=np.int64)
    add_ranged(
        var(0) - var(1),
        np.column_stack([vmap.va[fbus[ang_sel]], vmap.va[tbus[ang_sel]]])
        if ang_sel.size else np.zeros((0, 2), dtype=np.int64),
        np.zeros((ang_sel.size, 0)),
        np.array(ang_lo) if ang_sel.size else np.zeros(0),
        np.array(ang_hi) if ang_sel.size else np.zeros(0),
    )

    # (8)-(9) apparent-power limits, only for rated branches
    lim_sel = np.flatnonzero(rate > 0)
    rate_sq = (rate[lim_sel] ** 2).reshape(-1, 1)
    thermal = var(0) ** 2 + var(1) ** 2 - param(0)
    add_ranged(thermal,
               np.column_stack([vmap.p_from[lim_sel], vmap.q_from[lim_sel]])
               if lim_sel.size else np.zeros((0, 2), dtype=np.int64),
               rate_sq, -np.inf, 0.0)
    add_ranged(thermal,
               np.column_stack([vmap.p_to[lim_sel], vmap.q_to[lim_sel]])
               if lim_sel.size else np.zeros((0, 2), dtype=np.int64),
               rate_sq, -np.inf, 0.0)

    # (10)-(11) power balance rows seeded with load and shunt
    pd_gs = np.array([[u.pd, u.gs] for u in net.buses]).reshape(nb, 2)
    qd_bs = np.array([[u.qd, u.bs] for u in net.buses]).reshape(nb, 2)
    p_rows = add_ranged(-param(0) - param(1) * var(0) ** 2,
                        vmap.vm.reshape(-1, 1), pd_gs, 0.0, 0.0)
    q_rows = add_ranged(-param(0) + param(1) * var(0) ** 2,
                        vmap.vm.reshape(-1, 1), qd_bs, 0.0, 0.0)

    # (12)-(13) generator contributions to their bus balance
    gen_bus = np.array([bus_of[g.bus] for g in net.generators], dtype=np.int64)
    b.add_constraint_increments(var(0), vmap.pg.reshape(-1, 1),
                                np.zeros((ng, 0)), p_rows[gen_bus])
    b.add_constraint_increments(var(0), vmap.qg.reshape(-1, 1),
                                np.zeros((ng, 0)), q_rows[gen_bus])

    # (14)-(15) branch flows leaving through the from / to ends
    def flow_increment(flow_p, flow_q, end_bus):
        vi = np.concatenate([flow_p, flow_q]).reshape(-1, 1)
        tg = np.concatenate([p_rows[end_bus], q_rows[end_bus]])
        b.add_constraint_increments(-var(0), vi, np.zeros((vi.shape[0], 0)), tg)

    flow_increment(vmap.p_from, vmap.q_from, fbus)
    flow_increment(vmap.p_to, vmap.q_to, tbus)

    model = b.finalize()
    return AcopfModel(
        model=model,
        variables=vmap,
        ranges=np.array(ranges).reshape(model.n_con, 2),
        network=net,
        p_balance_rows=p_rows,
        q_balance_rows=q_rows,
    )
