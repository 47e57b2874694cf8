"""Scalar instruction expressions evaluated in bulk over record arrays.

An instruction is a small expression tree over a fixed set of variable
slots (``var(i)``) and parameter slots (``param(k)``).  One instruction is
shared by every record of a pattern block; evaluation and differentiation
are vectorized over the records, so the per-node work is a handful of
numpy array operations regardless of how many records the block holds.

The tree is compiled once into a flat tape.  The tape supports:

* forward evaluation of values,
* a reverse sweep producing first derivatives w.r.t. every variable slot,
* forward-over-reverse sweeps producing rows of the per-record Hessian,
* structural analysis yielding the slots appearing in the first
  derivative and the slot pairs appearing in the second derivative
  (the "parameterized sparsity template" that is later expanded over the
  data arrays).
"""
from __future__ import annotations

import numpy as np

# opcodes
VAR = 0
PAR = 1
CONST = 2
ADD = 3
SUB = 4
MUL = 5
DIV = 6
POW = 7   # constant exponent
NEG = 8
SIN = 9
COS = 10
LOG = 11
SQRT = 12
EXP = 13

_UNARY = {NEG, SIN, COS, LOG, SQRT, EXP}
_BINARY = {ADD, SUB, MUL, DIV}


class Expr:
    """Node of an instruction expression tree."""

    __slots__ = ("op", "a", "b", "value")

    def __init__(self, op, a=None, b=None, value=None):
        self.op = op
        self.a = a
        self.b = b
        self.value = value

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return Expr(ADD, self, as_expr(other))

    def __radd__(self, other):
        return Expr(ADD, as_expr(other), self)

    def __sub__(self, other):
        return Expr(SUB, self, as_expr(other))

    def __rsub__(self, other):
        return Expr(SUB, as_expr(other), self)

    def __mul__(self, other):
        return Expr(MUL, self, as_expr(other))

    def __rmul__(self, other):
        return Expr(MUL, as_expr(other), self)

    def __truediv__(self, other):
        return Expr(DIV, self, as_expr(other))

    def __rtruediv__(self, other):
        return Expr(DIV, as_expr(other), self)

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only constant exponents are supported")
        return Expr(POW, self, value=float(exponent))

    def __neg__(self):
        return Expr(NEG, self)


def var(slot: int) -> Expr:
    return Expr(VAR, value=int(slot))


def param(slot: int) -> Expr:
    return Expr(PAR, value=int(slot))


def const(c: float) -> Expr:
    return Expr(CONST, value=float(c))


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    return const(x)


def sin(x) -> Expr:
    return Expr(SIN, as_expr(x))


def cos(x) -> Expr:
    return Expr(COS, as_expr(x))


def log(x) -> Expr:
    return Expr(LOG, as_expr(x))


def sqrt(x) -> Expr:
    return Expr(SQRT, as_expr(x))


def exp(x) -> Expr:
    return Expr(EXP, as_expr(x))


class Tape:
    """Instruction compiled to a flat single-assignment program.

    ``ops[i] = (op, a, b)`` where ``a``/``b`` index earlier tape entries
    for composite nodes, the variable/parameter slot for leaves, and
    ``b`` holds the constant-pool index for CONST/POW.
    """

    def __init__(self, root: Expr):
        self.ops: list[tuple[int, int, int]] = []
        self.consts: list[float] = []
        self._index: dict[int, int] = {}
        self.out = self._emit(root)
        self.n_var_slots = 1 + max(
            (op[1] for op in self.ops if op[0] == VAR), default=-1
        )
        self.n_param_slots = 1 + max(
            (op[1] for op in self.ops if op[0] == PAR), default=-1
        )
        self.first_slots, self.second_pairs = self._analyze()

    def _emit(self, node: Expr) -> int:
        key = id(node)
        if key in self._index:
            return self._index[key]
        op = node.op
        if op == VAR or op == PAR:
            entry = (op, int(node.value), -1)
        elif op == CONST:
            self.consts.append(node.value)
            entry = (op, -1, len(self.consts) - 1)
        elif op == POW:
            a = self._emit(node.a)
            self.consts.append(node.value)
            entry = (op, a, len(self.consts) - 1)
        elif op in _UNARY:
            entry = (op, self._emit(node.a), -1)
        else:
            a = self._emit(node.a)
            b = self._emit(node.b)
            entry = (op, a, b)
        self.ops.append(entry)
        idx = len(self.ops) - 1
        self._index[key] = idx
        return idx

    # -- structural sparsity template -----------------------------------
    def _analyze(self):
        """Slots in the first derivative and slot pairs in the second.

        The pair set is built by propagating per-node dependence sets and
        recording every nonlinear interaction; it is exact for generic
        parameter values.
        """
        deps: list[frozenset[int]] = []
        pairs: set[tuple[int, int]] = set()

        def cross(sa, sb):
            for i in sa:
                for j in sb:
                    pairs.add((max(i, j), min(i, j)))

        for op, a, b in self.ops:
            if op == VAR:
                deps.append(frozenset((a,)))
            elif op == PAR or op == CONST:
                deps.append(frozenset())
            elif op in (ADD, SUB):
                deps.append(deps[a] | deps[b])
            elif op == NEG:
                deps.append(deps[a])
            elif op == MUL:
                cross(deps[a], deps[b])
                deps.append(deps[a] | deps[b])
            elif op == DIV:
                cross(deps[a], deps[b])
                cross(deps[b], deps[b])
                deps.append(deps[a] | deps[b])
            elif op == POW:
                c = self.consts[b]
                if c == 0.0:
                    deps.append(frozenset())
                    continue
                if c != 1.0:
                    cross(deps[a], deps[a])
                deps.append(deps[a])
            else:  # SIN, COS, LOG, SQRT, EXP
                cross(deps[a], deps[a])
                deps.append(deps[a])

        out_deps = deps[self.out]
        # only pairs both of whose slots can reach the output survive
        pairs = {p for p in pairs if p[0] in out_deps and p[1] in out_deps}
        return sorted(out_deps), sorted(pairs)

    # -- evaluation ------------------------------------------------------
    def forward(self, X, P):
        """Evaluate values.  X: (R, n_var_slots); P: (R, n_param_slots)."""
        vals = [None] * len(self.ops)
        for i, (op, a, b) in enumerate(self.ops):
            if op == VAR:
                vals[i] = X[:, a]
            elif op == PAR:
                vals[i] = P[:, a]
            elif op == CONST:
                vals[i] = self.consts[b]
            elif op == ADD:
                vals[i] = vals[a] + vals[b]
            elif op == SUB:
                vals[i] = vals[a] - vals[b]
            elif op == MUL:
                vals[i] = vals[a] * vals[b]
            elif op == DIV:
                vals[i] = vals[a] / vals[b]
            elif op == POW:
                vals[i] = vals[a] ** self.consts[b]
            elif op == NEG:
                vals[i] = -vals[a]
            elif op == SIN:
                vals[i] = np.sin(vals[a])
            elif op == COS:
                vals[i] = np.cos(vals[a])
            elif op == LOG:
                vals[i] = np.log(vals[a])
            elif op == SQRT:
                vals[i] = np.sqrt(vals[a])
            else:
                vals[i] = np.exp(vals[a])
        return vals

    def value(self, X, P):
        return np.broadcast_to(self.forward(X, P)[self.out], (X.shape[0],))

    def _partials(self, vals, i):
        """(df/da, df/db) for tape entry i; None where absent."""
        op, a, b = self.ops[i]
        if op == ADD:
            return 1.0, 1.0
        if op == SUB:
            return 1.0, -1.0
        if op == MUL:
            return vals[b], vals[a]
        if op == DIV:
            return 1.0 / vals[b], -vals[a] / (vals[b] * vals[b])
        if op == POW:
            c = self.consts[b]
            return c * vals[a] ** (c - 1.0), None
        if op == NEG:
            return -1.0, None
        if op == SIN:
            return np.cos(vals[a]), None
        if op == COS:
            return -np.sin(vals[a]), None
        if op == LOG:
            return 1.0 / vals[a], None
        if op == SQRT:
            return 0.5 / vals[i], None
        if op == EXP:
            return vals[i], None
        return None, None

    def reverse(self, vals, n_rec):
        """Adjoint sweep.  Returns (per-slot gradient dict, adjoint list).

        The adjoint list is reused by ``hessian_column``.
        """
        adj = [None] * len(self.ops)
        adj[self.out] = np.ones(n_rec)
        grad = {}
        for i in range(len(self.ops) - 1, -1, -1):
            ai = adj[i]
            if ai is None:
                continue
            op, a, b = self.ops[i]
            if op == VAR:
                if a in grad:
                    grad[a] = grad[a] + ai
                else:
                    grad[a] = +ai
                continue
            if op == PAR or op == CONST:
                continue
            fa, fb = self._partials(vals, i)
            contrib = fa * ai
            adj[a] = contrib if adj[a] is None else adj[a] + contrib
            if fb is not None:
                contrib = fb * ai
                adj[b] = contrib if adj[b] is None else adj[b] + contrib
        return grad, adj

    def hessian_column(self, vals, adj, tangent_slot, n_rec):
        """Forward-over-reverse sweep for one variable slot.

        Returns a dict mapping each variable slot v to the per-record
        second derivative d2f/(dv d tangent_slot).
        """
        ops = self.ops
        # forward tangent pass
        dot = [None] * len(ops)
        for i, (op, a, b) in enumerate(ops):
            if op == VAR:
                dot[i] = 1.0 if a == tangent_slot else None
            elif op == PAR or op == CONST:
                dot[i] = None
            elif op in (ADD, SUB, NEG, MUL, DIV, POW, SIN, COS, LOG, SQRT, EXP):
                da = dot[a]
                db = dot[b] if op in _BINARY else None
                if da is None and db is None:
                    dot[i] = None
                    continue
                fa, fb = self._partials(vals, i)
                t = None
                if da is not None:
                    t = fa * da
                if db is not None:
                    t = fb * db if t is None else t + fb * db
                dot[i] = t
        # reverse adjoint-tangent pass
        adj_dot = [None] * len(ops)
        hess = {}

        def push(idx, val):
            adj_dot[idx] = val if adj_dot[idx] is None else adj_dot[idx] + val

        for i in range(len(ops) - 1, -1, -1):
            ai = adj[i]
            adi = adj_dot[i]
            if ai is None and adi is None:
                continue
            op, a, b = ops[i]
            if op == VAR:
                if adi is not None:
                    hess[a] = adi if a not in hess else hess[a] + adi
                continue
            if op == PAR or op == CONST:
                continue
            fa, fb = self._partials(vals, i)
            da = dot[a]
            db = dot[b] if op in _BINARY else None
            # d/dt of the local partials
            if op in (ADD, SUB, NEG):
                dfa = dfb = None
            elif op == MUL:
                dfa = db
                dfb = da
            elif op == DIV:
                vb = vals[b]
                dfa = None if db is None else -db / (vb * vb)
                dfb = None
                if da is not None:
                    dfb = -da / (vb * vb)
                if db is not None:
                    t = 2.0 * vals[a] * db / (vb * vb * vb)
                    dfb = t if dfb is None else dfb + t
            elif op == POW:
                c = self.consts[b]
                dfa = None
                if da is not None and c != 1.0:
                    dfa = c * (c - 1.0) * vals[a] ** (c - 2.0) * da
                dfb = None
            else:  # unary nonlinear
                dfb = None
                if da is None:
                    dfa = None
                elif op == SIN:
                    dfa = -np.sin(vals[a]) * da
                elif op == COS:
                    dfa = -np.cos(vals[a]) * da
                elif op == LOG:
                    dfa = -da / (vals[a] * vals[a])
                elif op == SQRT:
                    dfa = -0.25 * da / (vals[a] * vals[i])
                else:  # EXP
                    dfa = vals[i] * da
            if ai is not None and dfa is not None:
                push(a, dfa * ai)
            if adi is not None:
                push(a, fa * adi)
            if fb is not None:
                if ai is not None and dfb is not None:
                    push(b, dfb * ai)
                if adi is not None:
                    push(b, fb * adi)
        return hess
