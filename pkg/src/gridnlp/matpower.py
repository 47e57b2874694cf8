"""MATPOWER case file parser.

Reads the standard ``mpc.<field> = <value>;`` / ``mpc.<table> = [ ... ];``
format (MATPOWER version 2 column conventions), normalizes quantities to
per-unit, converts angles to radians, and drops out-of-service
components.  Only polynomial generator costs up to degree 2 are
supported, which covers the pglib-opf conventions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PQ, PV, REF = 1, 2, 3


class ParseError(ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnsupportedCost(ParseError):
    pass


class MissingTable(ParseError):
    pass


class MultipleRefBuses(ParseError):
    pass


@dataclass
class Bus:
    id: int
    type: int
    pd: float       # per-unit
    qd: float
    gs: float       # per-unit shunt conductance
    bs: float
    vm: float       # parsed operating point (used as oracle data)
    va: float       # radians
    vmax: float
    vmin: float


@dataclass
class Generator:
    bus: int
    pg: float       # per-unit setpoints from the case (oracle data)
    qg: float
    qmax: float
    qmin: float
    vg: float
    pmax: float
    pmin: float
    cost: tuple     # (c2, c1, c0) in $/h over MW


@dataclass
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charge: float
    rate_a: float   # per-unit; 0 means unlimited
    tap: float      # 1.0 when the case gives 0
    shift: float    # radians
    angmin: float   # radians
    angmax: float


@dataclass
class NetworkData:
    base_mva: float
    buses: list
    generators: list
    branches: list
    name: str = ""

    @property
    def ref_bus(self) -> int:
        return next(b.id for b in self.buses if b.type == REF)

    def bus_index(self) -> dict:
        return {b.id: k for k, b in enumerate(self.buses)}


def _tokenize_matrix(body, start_line):
    rows = []
    for offset, line in enumerate(body.split("\n")):
        text = line.split("%")[0].strip()
        if not text:
            continue
        for chunk in text.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                rows.append([float(tok) for tok in chunk.split()])
            except ValueError as exc:
                raise ParseError(f"bad numeric row: {chunk!r}",
                                 line=start_line + offset) from exc
    return rows


def _split_statements(text):
    """Yields (name, value_text, line_number) for each mpc.<name> assignment."""
    lines = text.split("\n")
    i = 0
    while i < len(lines):
        raw = lines[i]
        line = raw.split("%")[0].strip()
        if not line.startswith("mpc."):
            i += 1
            continue
        eq = line.find("=")
        if eq < 0:
            raise ParseError("assignment without '='", line=i + 1)
        name = line[4:eq].strip()
        rest = line[eq + 1:].strip()
        if rest.startswith("["):
            body_lines = [rest[1:]]
            start = i
            closed = "]" in rest
            while not closed:
                i += 1
                if i >= len(lines):
                    raise ParseError(f"unterminated matrix for mpc.{name}",
                                     line=start + 1)
                part = lines[i].split("%")[0]
                closed = "]" in part
                body_lines.append(part.split("]")[0])
            body = "\n".join(b.split("]")[0] for b in body_lines)
            yield name, _tokenize_matrix(body, start + 1), start + 1
        else:
            yield name, rest.rstrip(";").strip(), i + 1
        i += 1


def _require_columns(rows, count, table, line):
    for r in rows:
        if len(r) < count:
            raise ParseError(
                f"{table} row has {len(r)} columns, expected at least {count}",
                line=line,
            )


def parse_matpower(text: str, name: str = "") -> NetworkData:
    tables = {}
    scalars = {}
    lines = {}
    for key, value, line in _split_statements(text):
        if isinstance(value, list):
            tables[key] = value
            lines[key] = line
        else:
            scalars[key] = value

    for required in ("bus", "gen", "branch", "gencost"):
        if required not in tables:
            raise MissingTable(f"mpc.{required} table not found")
    if "baseMVA" not in scalars:
        raise MissingTable("mpc.baseMVA not found")
    try:
        base = float(scalars["baseMVA"])
    except ValueError as exc:
        raise ParseError(f"baseMVA is not numeric: {scalars['baseMVA']!r}") from exc
    if base <= 0:
        raise ParseError("baseMVA must be positive")

    bus_rows = tables["bus"]
    gen_rows = tables["gen"]
    branch_rows = tables["branch"]
    cost_rows = tables["gencost"]
    _require_columns(bus_rows, 13, "bus", lines["bus"])
    _require_columns(gen_rows, 10, "gen", lines["gen"])
    _require_columns(branch_rows, 13, "branch", lines["branch"])
    _require_columns(cost_rows, 4, "gencost", lines["gencost"])
    if len(cost_rows) < len(gen_rows):
        raise ParseError("gencost must provide one row per generator",
                         line=lines["gencost"])

    deg2rad = np.pi / 180.0
    buses = []
    dropped = set()
    for r in bus_rows:
        btype = int(r[1])
        if btype == 4:  # isolated
            dropped.add(int(r[0]))
            continue
        if btype not in (PQ, PV, REF):
            raise ParseError(f"unknown bus type {btype} for bus {int(r[0])}",
                             line=lines["bus"])
        buses.append(Bus(
            id=int(r[0]), type=btype,
            pd=r[2] / base, qd=r[3] / base,
            gs=r[4] / base, bs=r[5] / base,
            vm=r[7], va=r[8] * deg2rad,
            vmax=r[11], vmin=r[12],
        ))
    known = {b.id for b in buses}
    refs = [b.id for b in buses if b.type == REF]
    if len(refs) > 1:
        raise MultipleRefBuses(f"{len(refs)} reference buses: {refs}")
    if not refs:
        raise ParseError("no reference bus")

    gens = []
    for gi, r in enumerate(gen_rows):
        if int(r[7]) <= 0:
            continue
        bus = int(r[0])
        if bus in dropped:
            continue
        if bus not in known:
            raise ParseError(f"generator {gi} references unknown bus {bus}",
                             line=lines["gen"])
        c = cost_rows[gi]
        ctype = int(c[0])
        if ctype == 1:
            raise UnsupportedCost(
                f"generator {gi}: piecewise-linear cost not supported",
                line=lines["gencost"],
            )
        if ctype != 2:
            raise UnsupportedCost(f"generator {gi}: unknown cost model {ctype}",
                                  line=lines["gencost"])
        ncoef = int(c[3])
        if len(c) < 4 + ncoef:
            raise ParseError(f"gencost row for generator {gi} is short",
                             line=lines["gencost"])
        if ncoef > 3:
            raise UnsupportedCost(
                f"generator {gi}: polynomial degree {ncoef - 1} > 2",
                line=lines["gencost"],
            )
        coefs = [0.0] * (3 - ncoef) + list(c[4:4 + ncoef])
        gens.append(Generator(
            bus=bus,
            pg=r[1] / base, qg=r[2] / base,
            qmax=r[3] / base, qmin=r[4] / base,
            vg=r[5],
            pmax=r[8] / base, pmin=r[9] / base,
            cost=tuple(coefs),
        ))

    branches = []
    for bi, r in enumerate(branch_rows):
        if int(r[10]) <= 0:
            continue
        f, t = int(r[0]), int(r[1])
        if f in dropped or t in dropped:
            continue
        if f not in known or t not in known:
            raise ParseError(f"branch {bi} references unknown bus",
                             line=lines["branch"])
        if r[2] == 0.0 and r[3] == 0.0:
            raise ParseError(f"branch {bi} has zero impedance",
                             line=lines["branch"])
        branches.append(Branch(
            from_bus=f, to_bus=t,
            r=r[2], x=r[3], b_charge=r[4],
            rate_a=r[5] / base,
            tap=r[8] if r[8] != 0.0 else 1.0,
            shift=r[9] * deg2rad,
            angmin=r[11] * deg2rad,
            angmax=r[12] * deg2rad,
        ))

    return NetworkData(base_mva=base, buses=buses, generators=gens,
                       branches=branches, name=name)


def parse_matpower_file(path) -> NetworkData:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    name = str(path).rsplit("/", 1)[-1]
    if name.endswith(".m"):
        name = name[:-2]
    return parse_matpower(text, name=name)
