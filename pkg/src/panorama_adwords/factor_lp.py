"""Factor-revealing LPs for the dual-fitting parameters, and a small solver.

Two LP families are built here:

* basic: one sequence of (alpha, beta) increments per semi-assignment count,
  either with closed-form geometric tails past kmax or with zero tails;
* hybrid: split left/right halves of each budget circle, ten sequences tied
  together by the amortization cells, every cell at least 2 * Gamma.

`solve` pivots in floating point and then certifies: the final basis is
re-solved in exact rationals and every constraint is re-checked exactly.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .panocs import GAMMA_LARGE_FROZEN

LE, GE, EQ = "<=", ">=", "="
F0 = Fraction(0)
HYBRID_ROWS = ("alpha_RL", "alpha_RR", "alpha_DL", "alpha_DR")


class LpError(RuntimeError):
    pass


class Infeasible(LpError):
    pass


class Unbounded(LpError):
    pass


class CertificationError(LpError):
    pass


# -- affine expressions -------------------------------------------------------

class Expr:
    """Sparse affine form sum(coef * var) + const over exact rationals."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: Mapping[int, Fraction] | None = None, const=0):
        self.terms = dict(terms or {})
        self.const = Fraction(const)

    @classmethod
    def var(cls, j: int | None) -> "Expr":
        return cls() if j is None else cls({j: Fraction(1)})

    def __add__(self, other):
        other = other if isinstance(other, Expr) else Expr(const=other)
        t = dict(self.terms)
        for j, v in other.terms.items():
            t[j] = t.get(j, F0) + v
        return Expr(t, self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return Expr({j: -v for j, v in self.terms.items()}, -self.const)

    def __sub__(self, other):
        return self + (-(other if isinstance(other, Expr) else Expr(const=other)))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, s):
        s = Fraction(s)
        return Expr({j: v * s for j, v in self.terms.items()}, self.const * s)

    __rmul__ = __mul__

    def value(self, x: Sequence[Fraction]) -> Fraction:
        return self.const + sum((v * x[j] for j, v in self.terms.items()), F0)


# -- programs -----------------------------------------------------------------

@dataclass
class Constraint:
    coefs: dict[int, Fraction]
    sense: str
    rhs: Fraction
    label: str = ""


@dataclass
class LinearProgram:
    """maximize objective . x subject to rows; variables >= 0 unless free."""

    names: list[str]
    objective: dict[int, Fraction]
    rows: list[Constraint] = field(default_factory=list)
    free: set[int] = field(default_factory=set)
    # magnitude hints; the float solver works in x / scale to keep pivots sane
    scale: dict[int, Fraction] = field(default_factory=dict)

    def add(self, lhs: Expr, sense: str, rhs: Expr | Fraction | int = 0, label: str = "") -> None:
        e = lhs - rhs
        coefs = {j: v for j, v in e.terms.items() if v != 0}
        self.rows.append(Constraint(coefs, sense, -e.const, label))

    def ge(self, lhs, rhs=0, label=""):
        self.add(lhs if isinstance(lhs, Expr) else Expr(const=lhs), GE, rhs, label)

    def le(self, lhs, rhs=0, label=""):
        self.add(lhs if isinstance(lhs, Expr) else Expr(const=lhs), LE, rhs, label)

    def eq(self, lhs, rhs=0, label=""):
        self.add(lhs if isinstance(lhs, Expr) else Expr(const=lhs), EQ, rhs, label)

    @property
    def n(self) -> int:
        return len(self.names)

    def violation(self, x: Sequence[Fraction]) -> tuple[Fraction, str]:
        worst, where = F0, ""
        for j in range(self.n):
            if j not in self.free and -x[j] > worst:
                worst, where = -x[j], f"{self.names[j]} >= 0"
        for r in self.rows:
            lhs = sum((v * x[j] for j, v in r.coefs.items()), F0)
            if r.sense == LE:
                v = lhs - r.rhs
            elif r.sense == GE:
                v = r.rhs - lhs
            else:
                v = abs(lhs - r.rhs)
            if v > worst:
                worst, where = v, r.label
        return worst, where

    def to_text(self) -> str:
        """CPLEX LP text format."""
        def term_list(coefs):
            parts = []
            for j, v in sorted(coefs.items()):
                fv = float(v)
                parts.append(f"{'-' if fv < 0 else '+'} {abs(fv):.17g} {self.names[j]}")
            return " ".join(parts) if parts else "0 " + self.names[0]
        out = ["Maximize", " obj: " + term_list(self.objective), "Subject To"]
        for i, r in enumerate(self.rows):
            out.append(f" c{i + 1}: {term_list(r.coefs)} {r.sense} {float(r.rhs):.17g}")
        out.append("Bounds")
        for j in range(self.n):
            out.append(f" {self.names[j]} free" if j in self.free else f" {self.names[j]} >= 0")
        out.append("End")
        return "\n".join(out) + "\n"


@dataclass
class LpSolution:
    names: list[str]
    values: list[Fraction]
    objective: Fraction
    max_violation: Fraction
    worst_row: str = ""
    pivots: int = 0
    seconds: float = 0.0

    @property
    def certified(self) -> bool:
        return self.max_violation <= Fraction(1, 10**9)

    def get(self, name: str) -> Fraction:
        return self.values[self.names.index(name)]


# -- dense simplex ------------------------------------------------------------

_EPS = 1e-11       # reduced-cost and ratio tolerance
_PIV = 1e-12       # smallest admissible pivot element


def _pivot(T: np.ndarray, r: int, c: int) -> None:
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    nz = np.nonzero(np.abs(col) > 0)[0]
    if len(nz):
        T[nz] -= np.outer(col[nz], T[r])


def _run(T: np.ndarray, basis: list[int], allowed: int, max_pivots: int) -> int:
    """Minimize the last row of T over columns < allowed.  Returns pivots."""
    m = T.shape[0] - 1
    pivots, stall = 0, 0
    while True:
        cost = T[-1, :allowed]
        if stall > 50:
            # anti-cycling: smallest index with negative reduced cost
            cand = np.nonzero(cost < -_EPS)[0]
            if not len(cand):
                return pivots
            c = int(cand[0])
        else:
            c = int(np.argmin(cost))
            if cost[c] >= -_EPS:
                return pivots
        col = T[:m, c]
        pos = col > _PIV
        if not pos.any():
            raise Unbounded("objective unbounded")
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / col[pos]
        best = ratios.min()
        ties = np.nonzero(ratios <= best + _EPS * max(1.0, abs(best)))[0]
        r = int(min(ties, key=lambda i: basis[i]))
        stall = stall + 1 if best <= _EPS else 0
        _pivot(T, r, c)
        basis[r] = c
        pivots += 1
        if pivots > max_pivots:
            raise LpError("pivot limit reached")


def _float_basis(lp: LinearProgram, max_pivots: int) -> tuple[dict[int, str], int]:
    """Run two-phase simplex; return the nonbasic structural/slack columns."""
    n, m = lp.n, len(lp.rows)
    free = sorted(lp.free)
    ncols_struct = n + len(free)     # free variables split as x = x+ - x-
    A = np.zeros((m, ncols_struct))
    b = np.zeros(m)
    senses = []
    colscale = np.ones(n)
    for j, v in lp.scale.items():
        colscale[j] = float(v)
    for i, row in enumerate(lp.rows):
        for j, v in row.coefs.items():
            A[i, j] = float(v) * colscale[j]
        for k, j in enumerate(free):
            A[i, n + k] = -A[i, j]
        b[i] = float(row.rhs)
        big = np.abs(A[i]).max()
        if big > 0:
            A[i] /= big
            b[i] /= big
        s = row.sense
        if b[i] < 0:
            A[i] *= -1
            b[i] *= -1
            s = {LE: GE, GE: LE, EQ: EQ}[s]
        senses.append(s)
    slack_of = {}
    cols = ncols_struct
    for i, s in enumerate(senses):
        if s != EQ:
            slack_of[i] = cols
            cols += 1
    n_real = cols
    art_of = {}
    for i, s in enumerate(senses):
        if s != LE:
            art_of[i] = cols
            cols += 1
    T = np.zeros((m + 1, cols + 1))
    T[:m, :ncols_struct] = A
    for i, c in slack_of.items():
        T[i, c] = 1.0 if senses[i] == LE else -1.0
    for i, c in art_of.items():
        T[i, c] = 1.0
    T[:m, -1] = b
    basis = [art_of.get(i, slack_of.get(i)) for i in range(m)]

    pivots = 0
    if art_of:
        for i in art_of:
            T[-1] -= T[i]
        for c in art_of.values():
            T[-1, c] = 0.0
        pivots += _run(T, basis, cols, max_pivots)
        if -T[-1, -1] > 1e-7:
            raise Infeasible(f"infeasible (phase-one residual {-T[-1, -1]:.3g})")
        keep = []
        for r in range(m):
            if basis[r] >= n_real:
                nz = np.nonzero(np.abs(T[r, :n_real]) > 1e-9)[0]
                if len(nz):
                    _pivot(T, r, int(nz[0]))
                    basis[r] = int(nz[0])
                    keep.append(r)
                # else: redundant row, dropped
            else:
                keep.append(r)
        T = np.vstack([T[keep], T[-1:]])
        basis = [basis[r] for r in keep]
        T = np.delete(T, list(range(n_real, cols)), axis=1)
    # phase two: minimize -objective
    T[-1] = 0.0
    for j, v in lp.objective.items():
        T[-1, j] = -float(v) * colscale[j]
        if j in lp.free:
            T[-1, n + free.index(j)] = float(v) * colscale[j]
    for r, c in enumerate(basis):
        if T[-1, c] != 0:
            T[-1] -= T[-1, c] * T[r]
    pivots += _run(T, basis, n_real, max_pivots)

    basic = set(basis)
    # nonbasic columns translate to exact equations in the original variables
    eqs: dict[int, str] = {}
    for j in range(n):
        if j in lp.free:
            k = n + free.index(j)
            if j not in basic and k not in basic:
                eqs[j] = "zero"
        elif j not in basic:
            eqs[j] = "zero"
    tight = [i for i, c in slack_of.items() if c not in basic]
    return {"vars": eqs, "tight": tight}, pivots


def _solve_exact(rows: list[dict[int, Fraction]], rhs: list[Fraction], n: int) -> list[Fraction]:
    """Gaussian elimination over rationals on a square nonsingular system."""
    M = [dict(r) for r in rows]
    b = list(rhs)
    pivot_of: dict[int, int] = {}
    order = []
    for i in range(len(M)):
        # eliminate existing pivots from row i
        for c, r in order:
            v = M[i].get(c)
            if v:
                f = v / M[r][c]
                for j, w in M[r].items():
                    nv = M[i].get(j, F0) - f * w
                    if nv:
                        M[i][j] = nv
                    else:
                        M[i].pop(j, None)
                b[i] -= f * b[r]
        if not M[i]:
            if b[i] != 0:
                raise CertificationError("basis system inconsistent")
            continue
        c = min(M[i], key=lambda j: (len(str(M[i][j].denominator)), j))
        pivot_of[c] = i
        order.append((c, i))
    if len(order) < n:
        raise CertificationError("basis system singular")
    x = [F0] * n
    for c, r in reversed(order):
        s = b[r] - sum((w * x[j] for j, w in M[r].items() if j != c), F0)
        x[c] = s / M[r][c]
    return x


def solve(lp: LinearProgram, max_pivots: int = 200000) -> LpSolution:
    """Optimal vertex of `lp`, re-solved and certified in exact rationals."""
    t0 = time.perf_counter()
    info, pivots = _float_basis(lp, max_pivots)
    rows, rhs = [], []
    for j in info["vars"]:
        rows.append({j: Fraction(1)})
        rhs.append(F0)
    for i in info["tight"]:
        rows.append(dict(lp.rows[i].coefs))
        rhs.append(lp.rows[i].rhs)
    for r in lp.rows:
        if r.sense == EQ:
            rows.append(dict(r.coefs))
            rhs.append(r.rhs)
    x = _solve_exact(rows, rhs, lp.n)
    worst, where = lp.violation(x)
    obj = sum((v * x[j] for j, v in lp.objective.items()), F0)
    return LpSolution(list(lp.names), x, obj, worst, where, pivots, time.perf_counter() - t0)


# -- basic family -------------------------------------------------------------

def dx_basic(k: int, gamma) -> Fraction:
    g = Fraction(gamma)
    if k < 1:
        return F0
    if k == 1:
        return Fraction(1, 2)
    return Fraction(1, 2**k) * (1 - g) ** (k - 2) * (1 + g)


def tail_x(k: int, gamma) -> Fraction:
    """Sum of dx(l) for l > k."""
    g = Fraction(gamma)
    if k <= 0:
        return Fraction(1)
    return Fraction(1, 2**k) * (1 - g) ** (k - 1)


def gamma_closed_form(gamma) -> Fraction:
    g = Fraction(gamma)
    return (3 + 2 * g) / (6 + 3 * g)


def gamma_truncated(gamma, kmax: int) -> Fraction:
    return gamma_closed_form(gamma) - tail_x(kmax, gamma)


@dataclass
class ParamTable:
    """Per-count increments; past the listed entries either zero or geometric."""

    gamma: Fraction
    Gamma: Fraction
    dalpha: tuple[Fraction, ...]
    dbeta: tuple[Fraction, ...]
    geometric: bool = False
    kmax: int | None = None

    def __post_init__(self):
        if self.kmax is None and not self.geometric:
            self.kmax = len(self.dalpha)
        self._ratio = (1 - self.gamma) / 2

    def _entry(self, seq, k):
        if k < 1:
            return F0
        if k <= len(seq):
            return seq[k - 1]
        if self.geometric:
            return seq[-1] * self._ratio ** (k - len(seq))
        return F0

    def _tail(self, seq, k):
        # sum of entries with index > k
        L = len(seq)
        head = sum(seq[max(k, 0):], F0)
        if not self.geometric:
            return head
        r = self._ratio
        last = seq[-1] * r ** max(k - L, 0)
        geo = last * r / (1 - r)
        return head + geo

    def alpha(self, k):
        return self._entry(self.dalpha, k)

    def beta(self, k):
        return self._entry(self.dbeta, k)

    def dx(self, k):
        return self.alpha(k) + self.beta(k)

    def alpha_prefix(self, k):
        return sum((self.alpha(l) for l in range(1, k + 1)), F0)

    def alpha_total(self):
        return self.alpha_prefix(0) + self._tail(self.dalpha, 0)

    def alpha_tail(self, k):
        return self._tail(self.dalpha, k)

    def beta_tail(self, k):
        return self._tail(self.dbeta, k)

    def x_tail(self, k):
        return self._tail(self.dalpha, k) + self._tail(self.dbeta, k)

    def to_json(self) -> dict:
        return {"kind": "basic", "gamma": str(self.gamma), "kmax": self.kmax,
                "Gamma": str(self.Gamma), "geometric": self.geometric,
                "rows": {"dalpha": [str(v) for v in self.dalpha],
                         "dbeta": [str(v) for v in self.dbeta]}}


def closed_form_basic(gamma, kmax: int | None = None) -> ParamTable:
    """Explicit table; kmax None keeps geometric tails, else truncates."""
    g = Fraction(gamma)
    c1 = (3 + g) / (6 + 3 * g)
    c = (1 + g) / (2 + g)
    L = 2 if kmax is None else kmax
    da = tuple((c1 if k == 1 else c) * dx_basic(k, g) for k in range(1, L + 1))
    db = tuple(dx_basic(k, g) - a for k, a in zip(range(1, L + 1), da))
    if kmax is None:
        return ParamTable(g, gamma_closed_form(g), da, db, geometric=True)
    return ParamTable(g, gamma_truncated(g, kmax), da, db, kmax=kmax)


def basic_constraint_values(table: ParamTable, K: int) -> dict[str, list[tuple[int, Fraction, Fraction]]]:
    """(k, lhs, rhs) for each basic constraint family, k up to K."""
    G = table.Gamma
    A = table.alpha_prefix
    out = {"not_to_a": [], "random_vs_deter": [], "half_to_a": [], "at_limit": [],
           "monotone": [], "split": []}
    for k in range(0, K + 1):
        out["not_to_a"].append((k, A(k) + 2 * table.beta(k + 1), G))
    for k in range(1, K + 1):
        out["random_vs_deter"].append((k, table.beta(k), table.beta_tail(k)))
        out["half_to_a"].append((k, A(k) + table.beta(k) + table.beta_tail(k), G))
        out["monotone"].append((k, table.beta(k), table.beta(k + 1)))
        out["split"].append((k, table.alpha(k) + table.beta(k), dx_basic(k, table.gamma)
                             if table.geometric or k <= (table.kmax or 0) else F0))
    out["at_limit"].append((0, table.alpha_total(), G))
    return out


def certify_basic_table(table: ParamTable, K: int = 64) -> Fraction:
    """Exact worst slack over every basic constraint up to K (negative = violated)."""
    vals = basic_constraint_values(table, K)
    worst = None
    for fam, rows in vals.items():
        for k, lhs, rhs in rows:
            s = -abs(lhs - rhs) if fam == "split" else lhs - rhs
            if table.alpha(k) < 0 or table.beta(k) < 0:
                s = min(s, table.alpha(k), table.beta(k))
            worst = s if worst is None else min(worst, s)
    return worst


def closed_form_tail_identity(gamma) -> Fraction:
    """Coefficient of the geometric tail in prefix(alpha, k) + 2 beta(k+1).

    prefix(alpha, k) = c1/2 + c (1/2 - tail(k)) and 2 beta(k+1) = 2 (1-c) dx(k+1)
    = (1-c)(1+gamma) tail(k), so the k-dependence is tail(k) times this value.
    A zero means the not-to-a rows are equal to Gamma for every k >= 1.
    """
    g = Fraction(gamma)
    c = (1 + g) / (2 + g)
    return -c + (1 - c) * (1 + g)


def build_basic_lp(gamma, kmax: int, mode: str = "closed-tail") -> LinearProgram:
    """Variables Gamma, dalpha(1..kmax), dbeta(1..kmax).

    mode "closed-tail": entries past kmax are pinned to the closed-form table
    mode "truncated":   entries past kmax are zero
    """
    if mode not in ("closed-tail", "truncated"):
        raise ValueError(f"unknown mode {mode!r}")
    g = Fraction(gamma)
    K = kmax
    names = ["Gamma"] + [f"dalpha_{k}" for k in range(1, K + 1)] + [f"dbeta_{k}" for k in range(1, K + 1)]
    lp = LinearProgram(names, {0: Fraction(1)}, free={0})
    for k in range(1, K + 1):
        lp.scale[k] = lp.scale[K + k] = dx_basic(k, g)
    G = Expr.var(0)
    ref = closed_form_basic(g)

    def a(k):
        if k <= K:
            return Expr.var(k)
        return Expr(const=ref.alpha(k) if mode == "closed-tail" else 0)

    def b(k):
        if k <= K:
            return Expr.var(K + k)
        return Expr(const=ref.beta(k) if mode == "closed-tail" else 0)

    def beta_tail(k):
        # entries past k
        e = Expr()
        for l in range(k + 1, K + 1):
            e = e + b(l)
        if mode == "closed-tail":
            e = e + ref.beta_tail(max(k, K))
        return e

    alpha_rest = ref._tail(ref.dalpha, K) if mode == "closed-tail" else F0
    prefix = Expr()
    prefixes = [Expr()]
    for k in range(1, K + 1):
        prefix = prefix + a(k)
        prefixes.append(prefix)
    for k in range(1, K + 1):
        lp.eq(a(k) + b(k), dx_basic(k, g), f"split[{k}]")
    for k in range(0, K + 1):
        lp.ge(prefixes[k] + 2 * b(k + 1), G, f"not_to_a[{k}]")
    for k in range(1, K + 1):
        lp.ge(b(k), beta_tail(k), f"random_vs_deter[{k}]")
        lp.ge(prefixes[k] + b(k) + beta_tail(k), G, f"half_to_a[{k}]")
        lp.ge(b(k), b(k + 1), f"monotone[{k}]")
    lp.ge(prefixes[K] + alpha_rest, G, "at_limit")
    return lp


# -- hybrid family ------------------------------------------------------------

def hybrid_dx(row: str, k: int, gamma) -> Fraction:
    """Primal increments per row; zero for k < 1."""
    g = Fraction(gamma)
    if k < 1:
        return F0
    if row == "L":
        return Fraction(1, 2**k)
    if row == "RS":
        return Fraction(1, 2) - g / 4 if k == 1 else Fraction(1, 2**k) * (1 - g) ** (k - 2)
    if row == "RL":
        return Fraction(1, 2) if k == 1 else Fraction(1, 2**k) * (1 - g) ** (k - 2) * (1 + g)
    if row == "DL":
        return Fraction(1, 2 ** (k - 1))
    if row == "DR":
        return Fraction(1) if k == 1 else Fraction(1, 2 ** (k - 1)) * (1 - g) ** (k - 2)
    raise ValueError(row)


# beta row -> (alpha row it pairs with, primal row)
HYBRID_BETA = {"L": ("alpha_RL", "L"), "RS": ("alpha_RR", "RS"), "RL": ("alpha_RR", "RL"),
               "DL": ("alpha_DL", "DL"), "DR": ("alpha_DR", "DR")}


@dataclass
class HybridParamTable:
    gamma: Fraction
    kmax: int
    Gamma: Fraction
    alpha: dict[str, tuple[Fraction, ...]]   # HYBRID_ROWS, index k-1

    def a(self, row: str, k: int) -> Fraction:
        seq = self.alpha[row]
        return seq[k - 1] if 1 <= k <= len(seq) else F0

    def b(self, row: str, k: int) -> Fraction:
        if k < 1 or k > self.kmax:
            return F0
        arow, xrow = HYBRID_BETA[row]
        return hybrid_dx(xrow, k, self.gamma) - self.a(arow, k)

    def x(self, row: str, k: int) -> Fraction:
        return hybrid_dx(row, k, self.gamma) if 1 <= k <= self.kmax else F0

    def to_json(self) -> dict:
        return {"kind": "hybrid", "gamma": str(self.gamma), "kmax": self.kmax, "Gamma": str(self.Gamma),
                "rows": {r: [str(v) for v in self.alpha[r]] for r in HYBRID_ROWS}}


def _hybrid_rows(K: int, gamma, a_of, G):
    """Yield (label, lhs >= 0 expression) for every hybrid constraint.

    a_of(row, k) returns an Expr (or constant) for an alpha entry.
    """
    g = Fraction(gamma)

    def a(row, k):
        return a_of(row, k) if 1 <= k <= K else Expr()

    def b(row, k):
        if k < 1 or k > K:
            return Expr()
        arow, xrow = HYBRID_BETA[row]
        return hybrid_dx(xrow, k, g) - a(arow, k)

    pre = {"L": [Expr()], "R": [Expr()]}
    for k in range(1, K + 2):
        pre["L"].append(pre["L"][-1] + a("alpha_RL", k))
        pre["R"].append(pre["R"][-1] + a("alpha_RR", k))

    def A(side, k):
        return pre[side][max(0, min(k, K + 1))]

    for k in range(1, K + 1):
        yield f"order L>=RL[{k}]", b("L", k) - b("RL", k)
        yield f"order RL>=L+[{k}]", b("RL", k) - b("L", k + 1)
        yield f"order L>=RS[{k}]", b("L", k) - b("RS", k)
        yield f"order RS>=L+[{k}]", b("RS", k) - b("L", k + 1)
        yield f"order DL>=DR[{k}]", b("DL", k) - b("DR", k)
        yield f"order DR>=DL+[{k}]", b("DR", k) - b("DL", k + 1)
        yield f"rand vs det L[{k}]", 2 * b("L", k) - b("DL", k)
        yield f"rand vs det RL[{k}]", 2 * b("RL", k) - b("DR", k)
        yield f"rand vs det RS[{k}]", 2 * b("RS", k) - b("DR", k)
        for r in ("L", "RS", "RL", "DL", "DR"):
            yield f"beta >= 0[{r},{k}]", b(r, k)
        yield f"det drop L[{k}]", a("alpha_DL", k) - a("alpha_DL", k + 1) - a("alpha_RL", k)
        yield f"det drop R[{k}]", a("alpha_DR", k) - a("alpha_DR", k + 1) - a("alpha_RR", k)
    yield "first left", G * Fraction(1, 2) - b("L", 1)
    yield "at limit", A("L", K) + A("R", K) - 2 * G

    def NL_L(k): return A("L", k) + 2 * b("L", k + 1)
    def NL_R(k): return A("R", k) + 2 * b("RL", k + 1)
    NS1_L = NL_L
    def NS1_R(k): return A("R", k) + 2 * b("RS", k + 1)
    def NS2_L(k): return A("L", k) + 2 * b("RS", k)
    def NS2_R(k): return A("R", k) + 2 * b("L", k + 1)
    def R_L(k): return A("L", k) + b("DL", k)
    def R_R(k): return A("R", k) + b("DR", k)
    def D_L(k): return A("L", k - 1) + a("alpha_DL", k)
    def D_R(k): return A("R", k - 1) + a("alpha_DR", k)

    cells = [
        (0, "NS1L+NS2R", lambda k: NS1_L(k) + NS2_R(k)),
        (0, "NLL+NLR", lambda k: NL_L(k) + NL_R(k)),
        (0, "NS2L'+NS1R", lambda k: NS2_L(k + 1) + NS1_R(k)),
        (0, "NLL'+NLR", lambda k: NL_L(k + 1) + NL_R(k)),
        (0, "RL'+NS1R", lambda k: R_L(k + 1) + NS1_R(k)),
        (0, "DL'+NS1R", lambda k: D_L(k + 1) + NS1_R(k)),
        (1, "NS1L+RR", lambda k: NS1_L(k) + R_R(k)),
        (1, "NS1L+DR", lambda k: NS1_L(k) + D_R(k)),
        (1, "NS1L'+DR", lambda k: NS1_L(k + 1) + D_R(k)),
        (1, "RL+NS1R", lambda k: R_L(k) + NS1_R(k)),
        (1, "RL+RR", lambda k: R_L(k) + R_R(k)),
        (1, "RL+DR", lambda k: R_L(k) + D_R(k)),
        (1, "DL+NS1R", lambda k: D_L(k) + NS1_R(k)),
        (1, "DL+RR", lambda k: D_L(k) + R_R(k)),
        (1, "DL+DR", lambda k: D_L(k) + D_R(k)),
        (1, "RL'+RR", lambda k: R_L(k + 1) + R_R(k)),
        (1, "RL'+DR", lambda k: R_L(k + 1) + D_R(k)),
        (1, "DL'+RR", lambda k: D_L(k + 1) + R_R(k)),
        (1, "DL'+DR", lambda k: D_L(k + 1) + D_R(k)),
    ]
    for k in range(0, K + 1):
        for lo, name, f in cells:
            if k >= lo:
                yield f"cell {name}[{k}]", f(k) - 2 * G


def build_hybrid_lp(gamma=GAMMA_LARGE_FROZEN, kmax: int = 20, *, limit_extra=0) -> LinearProgram:
    """`limit_extra` raises the at-limit row's right-hand side (for infeasibility checks)."""
    if kmax < 2:
        raise ValueError("kmax must be >= 2")
    K = kmax
    names = ["Gamma"] + [f"{r}_{k}" for r in HYBRID_ROWS for k in range(1, K + 1)]
    lp = LinearProgram(names, {0: Fraction(1)}, free={0})
    index = {(r, k): 1 + i * K + (k - 1) for i, r in enumerate(HYBRID_ROWS) for k in range(1, K + 1)}
    for (r, k), j in index.items():
        lp.scale[j] = Fraction(1, 2**k)
    G = Expr.var(0)
    for label, e in _hybrid_rows(K, gamma, lambda r, k: Expr.var(index[(r, k)]), G):
        if label == "at limit":
            e = e - limit_extra
        lp.ge(e, 0, label)
    return lp


def certify_hybrid_table(table: HybridParamTable) -> tuple[Fraction, str]:
    """Exact worst slack (negative = violated) and its row label."""
    worst, where = None, ""
    for r in HYBRID_ROWS:
        for k in range(1, table.kmax + 1):
            v = table.a(r, k)
            if worst is None or v < worst:
                worst, where = v, f"{r}_{k} >= 0"
    for label, e in _hybrid_rows(table.kmax, table.gamma, lambda r, k: table.a(r, k),
                                 Expr(const=table.Gamma)):
        v = e.const if isinstance(e, Expr) else Fraction(e)
        if v < worst:
            worst, where = v, label
    return worst, where


def _max_gamma_hybrid(gamma, K: int, alpha: dict[str, tuple[Fraction, ...]]) -> tuple[Fraction, Fraction]:
    """Largest Gamma the fixed alpha rows support, and the worst Gamma-free slack.

    Rows with a positive Gamma coefficient bound Gamma from below; a gap
    between the two bounds is reported as a negative slack.
    """
    G = Expr.var(0)
    lo_gamma, free_worst, hi_floor = None, None, None
    for label, e in _hybrid_rows(K, gamma, lambda r, k: Expr(const=alpha[r][k - 1]), G):
        cg = e.terms.get(0, F0)
        if cg == 0:
            free_worst = e.const if free_worst is None else min(free_worst, e.const)
        elif cg < 0:
            bound = e.const / -cg
            lo_gamma = bound if lo_gamma is None else min(lo_gamma, bound)
        else:
            bound = -e.const / cg
            hi_floor = bound if hi_floor is None else max(hi_floor, bound)
    if hi_floor is not None and lo_gamma is not None and hi_floor > lo_gamma:
        free_worst = min(free_worst if free_worst is not None else F0, lo_gamma - hi_floor)
    return lo_gamma, free_worst


def export_table(solution: LpSolution, mode: str, *, gamma=None, kmax: int | None = None,
                 max_denominator: int = 10**12):
    """Rationalized, re-certified table from a certified solution."""
    if not solution.certified:
        raise CertificationError(f"solution not certified ({float(solution.max_violation):.3g} at "
                                 f"{solution.worst_row})")
    if mode == "basic":
        K = sum(1 for n in solution.names if n.startswith("dalpha_"))
        da = tuple(solution.get(f"dalpha_{k}") for k in range(1, K + 1))
        db = tuple(solution.get(f"dbeta_{k}") for k in range(1, K + 1))
        table = ParamTable(Fraction(gamma), solution.objective, da, db, kmax=K)
        return table
    if mode != "hybrid":
        raise ValueError(f"unknown mode {mode!r}")
    g = Fraction(GAMMA_LARGE_FROZEN if gamma is None else gamma)
    K = kmax or sum(1 for n in solution.names if n.startswith("alpha_RL_"))
    exact = {r: tuple(solution.get(f"{r}_{k}") for k in range(1, K + 1)) for r in HYBRID_ROWS}
    rounded = {r: tuple(max(F0, v.limit_denominator(max_denominator)) for v in seq)
               for r, seq in exact.items()}
    for alpha in (rounded, exact):
        G, free_worst = _max_gamma_hybrid(g, K, alpha)
        if free_worst is not None and free_worst < 0:
            continue
        G = min(G, solution.objective)
        Gr = G.limit_denominator(max_denominator)
        if Gr > G:
            Gr = Fraction(int(G * max_denominator), max_denominator)
        # a tight first-left row floors Gamma, so the rounded-down value may not fit
        for cand in (Gr, G):
            table = HybridParamTable(g, K, cand, dict(alpha))
            if certify_hybrid_table(table)[0] >= 0:
                return table
    raise CertificationError("table failed re-certification after rounding")


def solve_hybrid(kmax: int = 20, gamma=GAMMA_LARGE_FROZEN) -> tuple[LpSolution, HybridParamTable]:
    sol = solve(build_hybrid_lp(gamma, kmax))
    return sol, export_table(sol, "hybrid", gamma=gamma, kmax=kmax)


# -- table I/O ----------------------------------------------------------------

def table_to_json(table) -> str:
    return json.dumps(table.to_json(), indent=1)


def table_from_json(text: str | dict):
    d = json.loads(text) if isinstance(text, str) else text
    g = Fraction(d["gamma"])
    if d["kind"] == "basic":
        rows = d["rows"]
        return ParamTable(g, Fraction(d["Gamma"]), tuple(map(Fraction, rows["dalpha"])),
                          tuple(map(Fraction, rows["dbeta"])), geometric=d.get("geometric", False),
                          kmax=d.get("kmax"))
    if d["kind"] == "hybrid":
        t = HybridParamTable(g, int(d["kmax"]), Fraction(d["Gamma"]),
                             {r: tuple(map(Fraction, d["rows"][r])) for r in HYBRID_ROWS})
        worst, where = certify_hybrid_table(t)
        if worst < 0:
            raise CertificationError(f"loaded table violates {where}")
        return t
    raise ValueError(f"unknown table kind {d['kind']!r}")


def basic_table_for(instance_all_large: bool, kmax: int = 18):
    """Default basic table: closed form when bids are all large, truncated otherwise."""
    if instance_all_large:
        return closed_form_basic(GAMMA_LARGE_FROZEN)
    return closed_form_basic(gamma_general_frozen(kmax), kmax=kmax)


def gamma_general_frozen(kmax: int) -> Fraction:
    return Fraction(1245, 100000) / kmax


def iter_kmax(values: Iterable[int]):
    for k in values:
        yield k, solve(build_hybrid_lp(GAMMA_LARGE_FROZEN, k))
