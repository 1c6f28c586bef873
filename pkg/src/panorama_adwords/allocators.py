"""Online allocators and the dual ledger they maintain.

greedy      - highest immediate payment
msvv        - deterministic budget-smoothing trade-off for small bids
basic       - panoramic primal-dual with one parameter table
hybrid      - left/right split tables, large-bid selection engine
independent - basic with the gamma = 0 table and fresh coins

Every primal-dual step asserts surrogate primal == dual exactly, the
realized payment dominates the panorama payment, and the surrogate x-bar
computed from the segment counters dominates the surrogate primal.
"""
from __future__ import annotations

import json
import random
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

from .factor_lp import (GAMMA_LARGE_FROZEN, HybridParamTable, ParamTable, closed_form_basic,
                        gamma_general_frozen, solve_hybrid, table_from_json)
from .instance import Impression, Instance, instance_from_dict, instance_to_dict
from .panocs import Candidate, Engine, RoundPair, make_engine
from .panorama import (DETERMINISTIC, SEMI, AdvertiserPanorama, Segment, Subset, normalize,
                       panorama_payment)

F0 = Fraction(0)
ALGOS = ("greedy", "msvv", "basic", "hybrid", "independent")


class LedgerError(AssertionError):
    pass


# -- records ------------------------------------------------------------------

@dataclass
class AssignmentRecord:
    impression: str
    kind: str                     # randomized | deterministic | greedy | none
    candidates: list[tuple[str, Subset]] = field(default_factory=list)
    selected: str | None = None
    beta: Fraction = F0

    def to_json(self) -> dict:
        return {"id": self.impression, "kind": self.kind,
                "candidates": [{"advertiser": a, "subset": [list(iv) for iv in s]} for a, s in self.candidates],
                "selected": self.selected, "beta": str(self.beta)}


@dataclass
class RunTrace:
    algo: str
    instance: Instance
    records: list[AssignmentRecord]
    P: int
    panorama: int
    Pbar: Fraction
    D: Fraction
    xbar: Fraction
    alpha: dict[str, Fraction]
    dumps: dict[str, str]
    Gamma: Fraction | None = None
    table: dict | None = None

    @property
    def beta(self) -> dict[str, Fraction]:
        return {r.impression: r.beta for r in self.records}

    def to_json(self) -> dict:
        return {"algo": self.algo, "instance": instance_to_dict(self.instance),
                "Gamma": None if self.Gamma is None else str(self.Gamma),
                "table": self.table,
                "records": [r.to_json() for r in self.records],
                "advertisers": {a: {"alpha": str(self.alpha.get(a, F0)), "panorama": self.dumps.get(a, "")}
                                for a in self.instance.advertiser_ids},
                "totals": {"P": self.P, "panorama": self.panorama, "Pbar": str(self.Pbar),
                           "D": str(self.D), "xbar": str(self.xbar)}}

    def dump(self) -> str:
        return json.dumps(self.to_json(), indent=1)


def trace_from_json(text: str | dict) -> RunTrace:
    d = json.loads(text) if isinstance(text, str) else text
    inst = instance_from_dict(d["instance"])
    recs = []
    for r in d["records"]:
        cands = [(c["advertiser"], normalize(tuple(map(tuple, c["subset"])))) for c in r["candidates"]]
        recs.append(AssignmentRecord(r["id"], r["kind"], cands, r["selected"], Fraction(r["beta"])))
    t = d["totals"]
    adv = d["advertisers"]
    return RunTrace(d["algo"], inst, recs, int(t["P"]), int(t["panorama"]), Fraction(t["Pbar"]),
                    Fraction(t["D"]), Fraction(t["xbar"]),
                    {a: Fraction(v["alpha"]) for a, v in adv.items()},
                    {a: v["panorama"] for a, v in adv.items()},
                    None if d.get("Gamma") is None else Fraction(d["Gamma"]), d.get("table"))


def realized_payments(inst: Instance, records: Sequence[AssignmentRecord]) -> tuple[int, int]:
    """(budget-additive payment, panorama payment) of the selected combinations."""
    bids: dict[str, int] = {}
    subsets: dict[str, list[Subset]] = {}
    for r in records:
        if r.selected is None:
            continue
        bids[r.selected] = bids.get(r.selected, 0) + inst.bid(r.selected, r.impression)
        for a, s in r.candidates:
            if a == r.selected:
                subsets.setdefault(a, []).append(s)
    P = sum(min(v, inst.budget(a)) for a, v in bids.items())
    pano = sum(panorama_payment(v) for v in subsets.values())
    return P, pano


# -- per-point rules ----------------------------------------------------------

@dataclass(frozen=True)
class Piece:
    seg: Segment
    length: Fraction
    half: str        # "L" or "R": which half of the budget circle


def split_halves(pano: AdvertiserPanorama, subset: Sequence) -> list[Piece]:
    """Segments clipped to `subset`, each further cut at the budget midpoint."""
    mid = Fraction(pano.budget, 2)
    out = []
    for seg in pano.pieces(subset) if subset is not None else pano.segments:
        lo, hi = Fraction(seg.start), Fraction(seg.end)
        if lo < mid:
            out.append(Piece(seg, min(hi, mid) - lo, "L"))
        if hi > mid:
            out.append(Piece(seg, hi - max(lo, mid), "R"))
    return out


class BasicRule:
    """Unit-length (d_alpha, d_beta, d_x) from one parameter table."""

    def __init__(self, table: ParamTable):
        self.table = table
        self.Gamma = table.Gamma
        self.gamma = table.gamma
        self._cache: dict = {}

    def randomized(self, p: Piece, large: bool):
        k = p.seg.k
        t = self.table
        a, b = t.alpha(k + 1), t.beta(k + 1)
        return a, b, a + b

    def deterministic(self, p: Piece):
        k = p.seg.k
        key = ("d", k)
        if key not in self._cache:
            t = self.table
            a = t.alpha_tail(k)
            b = t.beta_tail(k)
            self._cache[key] = (a, b, a + b)
        return self._cache[key]

    def alpha_point(self, seg: Segment, half: str) -> Fraction:
        t = self.table
        return t.alpha_total() if seg.det else t.alpha_prefix(seg.k)

    def xbar_point(self, seg: Segment, half: str) -> Fraction:
        if seg.det:
            return Fraction(1)
        k = seg.k
        return 1 - Fraction(1, 2**k) * (1 - self.gamma) ** max(k - 1, 0)


class HybridRule:
    def __init__(self, table: HybridParamTable):
        self.table = table
        self.Gamma = table.Gamma
        self.gamma = table.gamma

    def randomized(self, p: Piece, large: bool):
        t, k = self.table, p.seg.k
        if p.half == "L":
            a, b = t.a("alpha_RL", k + 1), t.b("L", k + 1)
        else:
            a, b = t.a("alpha_RR", k + 1), t.b("RL" if large else "RS", k + 1)
        return a, b, a + b

    def deterministic(self, p: Piece):
        t, k = self.table, p.seg.k
        if p.half == "L":
            a, b = t.a("alpha_DL", k + 1), t.b("DL", k + 1)
        else:
            a, b = t.a("alpha_DR", k + 1), t.b("DR", k + 1)
        return a, b, a + b

    def alpha_point(self, seg: Segment, half: str) -> Fraction:
        t = self.table
        row = "alpha_RL" if half == "L" else "alpha_RR"
        v = sum((t.a(row, l) for l in range(1, seg.k + 1)), F0)
        if seg.det:
            v += t.a("alpha_DL" if half == "L" else "alpha_DR", seg.k + 1)
        return v

    def xbar_point(self, seg: Segment, half: str) -> Fraction:
        return hybrid_xbar(seg, half, self.gamma)


def hybrid_xbar(seg: Segment, half: str, gamma) -> Fraction:
    if seg.det:
        return Fraction(1)
    k, kl = seg.k, seg.kl
    if k == 0:
        return F0
    if half == "L":
        return 1 - Fraction(1, 2**k)
    if k == 1 and kl == 0:
        return Fraction(1, 2) - Fraction(gamma) / 4
    return 1 - Fraction(1, 2**k) * (1 - Fraction(gamma)) ** max(kl - 1, 0)


# -- allocators ---------------------------------------------------------------

class Allocator:
    name = ""

    def __init__(self, inst: Instance):
        self.inst = inst
        self.ids = inst.advertiser_ids
        self.records: list[AssignmentRecord] = []
        self.spent = {a: 0 for a in self.ids}

    def step(self, imp: Impression) -> AssignmentRecord:
        raise NotImplementedError

    def _pay(self, a: str, imp: Impression) -> None:
        self.spent[a] += imp.bid(a)

    def greedy_choice(self, imp: Impression) -> str | None:
        best, who = 0, None
        for a in self.ids:
            gain = min(imp.bid(a), max(self.inst.budget(a) - self.spent[a], 0))
            if gain > best:
                best, who = gain, a
        return who

    def run(self) -> RunTrace:
        for imp in self.inst.impressions:
            self.records.append(self.step(imp))
        return self.trace()

    def trace(self) -> RunTrace:
        P, pano = realized_payments(self.inst, self.records)
        return RunTrace(self.name, self.inst, self.records, P, pano, F0, F0, F0, {}, {})


class GreedyAllocator(Allocator):
    name = "greedy"

    def step(self, imp):
        a = self.greedy_choice(imp)
        if a is None:
            return AssignmentRecord(imp.id, "none")
        self._pay(a, imp)
        return AssignmentRecord(imp.id, "greedy", [(a, ())], a)


def msvv_alpha(y) -> Fraction:
    y = Fraction(y)
    if y <= Fraction(1, 2):
        return Fraction(4, 9) * y
    return Fraction(2, 3) * y - Fraction(1, 9)


def msvv_beta(y) -> Fraction:
    return Fraction(y) - msvv_alpha(y)


class MsvvAllocator(Allocator):
    name = "msvv"
    Gamma = Fraction(5, 9)

    def __init__(self, inst):
        super().__init__(inst)
        if not inst.all_small():
            warnings.warn("instance has bids above half a budget; the 5/9 guarantee does not apply")
        self.alpha = {a: F0 for a in self.ids}

    def offer(self, a: str, b: int) -> Fraction:
        B = self.inst.budget(a)
        s = Fraction(self.spent[a], B)
        return B * (msvv_beta(min(s + Fraction(b, B), 1)) - msvv_beta(s))

    def step(self, imp):
        best, who = F0, None
        for a in self.ids:
            b = imp.bid(a)
            if b <= 0:
                continue
            o = self.offer(a, b)
            if o > best:
                best, who = o, a
        if who is None:
            return AssignmentRecord(imp.id, "none")
        B = self.inst.budget(who)
        self._pay(who, imp)
        self.alpha[who] = B * msvv_alpha(Fraction(min(self.spent[who], B), B))
        return AssignmentRecord(imp.id, "deterministic", [(who, ())], who, best)

    def trace(self):
        t = super().trace()
        t.alpha = dict(self.alpha)
        t.D = sum(self.alpha.values(), F0) + sum((r.beta for r in self.records), F0)
        t.Pbar = Fraction(t.P)
        t.Gamma = self.Gamma
        if t.D != t.P:
            raise LedgerError("MSVV dual differs from payment")
        return t


class PrimalDualAllocator(Allocator):
    """The panoramic allocator shared by basic, hybrid and independent."""

    def __init__(self, inst: Instance, rule, engine: Engine, rng: random.Random, *,
                 name: str = "basic", check: bool = True):
        super().__init__(inst)
        self.name = name
        self.rule = rule
        self.engine = engine
        self.rng = rng
        self.check = check
        self.panos = {a: AdvertiserPanorama(inst.budget(a)) for a in self.ids}
        self.alpha = {a: F0 for a in self.ids}
        self.Pbar = F0
        self.D = F0
        self.beta_sum = F0
        self.selected_subsets: dict[str, list[Subset]] = {a: [] for a in self.ids}
        self.rounds: list[RoundPair] = []

    # offers
    def _evaluate(self, a: str, b: int):
        pano = self.panos[a]
        subset = pano.next_subset(b)
        pieces = split_halves(pano, subset)
        large = 2 * b >= pano.budget
        R = [self.rule.randomized(p, large) for p in pieces]
        Dd = [self.rule.deterministic(p) for p in pieces]
        rand = tuple(sum((p.length * r[i] for p, r in zip(pieces, R)), F0) for i in range(3))
        det = tuple(sum((p.length * r[i] for p, r in zip(pieces, Dd)), F0) for i in range(3))
        return subset, large, rand, det

    def offer_randomized(self, a: str, b: int) -> Fraction:
        return self._evaluate(a, b)[2][1] if b > 0 else F0

    def offer_deterministic(self, a: str, b: int) -> Fraction:
        return self._evaluate(a, b)[3][1] if b > 0 else F0

    def step(self, imp):
        ev = {}
        for a in self.ids:
            b = imp.bid(a)
            if b > 0:
                ev[a] = self._evaluate(a, b)
        order = {a: j for j, a in enumerate(self.ids)}
        rand = sorted((a for a in ev if ev[a][2][1] > 0), key=lambda a: (-ev[a][2][1], order[a]))
        dstar = min(ev, key=lambda a: (-ev[a][3][1], order[a])) if ev else None
        dval = ev[dstar][3][1] if dstar else F0

        if len(rand) >= 2 and ev[rand[0]][2][1] + ev[rand[1]][2][1] >= dval:
            a1, a2 = rand[0], rand[1]
            c1 = Candidate(a1, ev[a1][0], imp.bid(a1), self.inst.budget(a1))
            c2 = Candidate(a2, ev[a2][0], imp.bid(a2), self.inst.budget(a2))
            pair = RoundPair(imp.id, c1, c2)
            self.rounds.append(pair)
            sel = self.engine.select(pair, self.rng)
            chosen = (a1, a2)[sel - 1]
            beta = F0
            for a in (a1, a2):
                subset, large, (da, db, dx), _ = ev[a]
                self.panos[a].commit(subset, SEMI, large=large, bid=imp.bid(a))
                self.alpha[a] += da
                self.Pbar += dx
                beta += db
            self.selected_subsets[chosen].append(ev[chosen][0])
            self._pay(chosen, imp)
            rec = AssignmentRecord(imp.id, "randomized", [(a1, ev[a1][0]), (a2, ev[a2][0])], chosen, beta)
        elif dval > 0:
            subset, _, _, (da, db, dx) = ev[dstar]
            self.panos[dstar].commit(subset, DETERMINISTIC, bid=imp.bid(dstar))
            self.alpha[dstar] += da
            self.Pbar += dx
            self.selected_subsets[dstar].append(subset)
            self._pay(dstar, imp)
            rec = AssignmentRecord(imp.id, "deterministic", [(dstar, subset)], dstar, db)
        else:
            # nothing left to earn on the ledger: plain greedy, duals untouched
            a = self.greedy_choice(imp)
            if a is None:
                return self._checked(AssignmentRecord(imp.id, "none"))
            self._pay(a, imp)
            rec = AssignmentRecord(imp.id, "greedy", [(a, ())], a, F0)
        return self._checked(rec)

    def _checked(self, rec: AssignmentRecord) -> AssignmentRecord:
        self.beta_sum += rec.beta
        self.D = sum(self.alpha.values(), F0) + self.beta_sum
        if self.check:
            if self.Pbar != self.D:
                raise LedgerError(f"{rec.impression}: surrogate primal {self.Pbar} != dual {self.D}")
            P = sum(min(v, self.inst.budget(a)) for a, v in self.spent.items())
            pano = sum(panorama_payment(v) for v in self.selected_subsets.values())
            if P < pano:
                raise LedgerError(f"{rec.impression}: payment {P} below panorama payment {pano}")
            xb = self.xbar_total()
            if xb < self.Pbar:
                raise LedgerError(f"{rec.impression}: surrogate x-bar {xb} below {self.Pbar}")
            if rec.beta < 0 or any(v < 0 for v in self.alpha.values()):
                raise LedgerError(f"{rec.impression}: negative dual")
        return rec

    def xbar_total(self) -> Fraction:
        total = F0
        for a, pano in self.panos.items():
            for p in split_halves(pano, None):
                total += p.length * self.rule.xbar_point(p.seg, p.half)
        return total

    def reconstruct_alpha(self) -> dict[str, Fraction]:
        """alpha masses recomputed from the final segment counters."""
        out = {}
        for a, pano in self.panos.items():
            out[a] = sum((p.length * self.rule.alpha_point(p.seg, p.half)
                          for p in split_halves(pano, None)), F0)
        return out

    def trace(self):
        P, pano = realized_payments(self.inst, self.records)
        return RunTrace(self.name, self.inst, self.records, P, pano, self.Pbar, self.D,
                        self.xbar_total(), dict(self.alpha),
                        {a: p.dump() for a, p in self.panos.items()}, self.rule.Gamma,
                        self.rule.table.to_json())


# -- tables and factories -----------------------------------------------------

@lru_cache(maxsize=4)
def default_hybrid_table(kmax: int = 20) -> HybridParamTable:
    return solve_hybrid(kmax)[1]


def default_basic_table(inst: Instance, kmax: int = 18) -> ParamTable:
    if inst.all_large():
        return closed_form_basic(GAMMA_LARGE_FROZEN)
    return closed_form_basic(gamma_general_frozen(kmax), kmax=kmax)


def load_table(path: str):
    with open(path) as fh:
        return table_from_json(fh.read())


def make_allocator(algo: str, inst: Instance, seed: int = 0, *, table=None, kmax: int = 18,
                   check: bool = True) -> Allocator:
    rng = random.Random(seed)
    if algo == "greedy":
        return GreedyAllocator(inst)
    if algo == "msvv":
        return MsvvAllocator(inst)
    if algo == "independent":
        return PrimalDualAllocator(inst, BasicRule(table or closed_form_basic(0)), make_engine("independent"),
                                   rng, name="independent", check=check)
    if algo == "basic":
        if table is None:
            table = default_basic_table(inst, kmax)
        if table.kmax is None or inst.all_large():
            engine = make_engine("large")
        else:
            engine = make_engine("general", kmax=table.kmax)
        return PrimalDualAllocator(inst, BasicRule(table), engine, rng, name="basic", check=check)
    if algo == "hybrid":
        table = table or default_hybrid_table()
        return PrimalDualAllocator(inst, HybridRule(table), make_engine("large"), rng, name="hybrid", check=check)
    raise ValueError(f"unknown algorithm {algo!r}")


def run(algo: str, inst: Instance, seed: int = 0, **kw) -> RunTrace:
    return make_allocator(algo, inst, seed, **kw).run()


# -- approximate dual feasibility ---------------------------------------------

SUBSET_LIMIT = 20


class EnumerationLimit(RuntimeError):
    pass


def dual_feasibility_check(inst: Instance, alpha: dict[str, Fraction], beta: dict[str, Fraction],
                           Gamma, limit: int = SUBSET_LIMIT):
    """min over (a, S) of alpha_a + sum_S beta - Gamma * min(bids(S), B_a).

    Only impressions with a positive bid can lower the slack, so subsets
    range over those.  Returns (slack, advertiser, subset).
    """
    Gamma = Fraction(Gamma)
    best = None
    for adv in inst.advertisers:
        a, B = adv.id, adv.budget
        items = [(i.id, i.bid(a), beta.get(i.id, F0)) for i in inst.impressions if i.bid(a) > 0]
        if len(items) > limit:
            raise EnumerationLimit(f"advertiser {a}: {len(items)} impressions exceed {limit}")
        vals = [alpha.get(a, F0), Gamma] + [x[2] for x in items]
        den = 1
        for v in vals:
            den = den * v.denominator // _gcd(den, v.denominator)
        al = int(alpha.get(a, F0) * den)
        gn = int(Gamma * den)
        bs = [int(x[2] * den) for x in items]
        bids = [x[1] for x in items]
        # Gray-code walk over subsets
        mask, sb, sbeta = 0, 0, 0
        cur_best = al, 0
        for step in range(1, 1 << len(items)):
            j = (step & -step).bit_length() - 1
            mask ^= 1 << j
            if mask >> j & 1:
                sb += bids[j]
                sbeta += bs[j]
            else:
                sb -= bids[j]
                sbeta -= bs[j]
            s = al + sbeta - gn * min(sb, B)
            if s < cur_best[0]:
                cur_best = s, mask
        slack = Fraction(cur_best[0], den)
        if best is None or slack < best[0]:
            S = [items[j][0] for j in range(len(items)) if cur_best[1] >> j & 1]
            best = (slack, a, S)
    return best


def _gcd(a: int, b: int) -> int:
    while b:
        a, b = b, a % b
    return a


def trace_dual_feasibility(trace: RunTrace, Gamma=None, limit: int = SUBSET_LIMIT):
    G = trace.Gamma if Gamma is None else Fraction(Gamma)
    return dual_feasibility_check(trace.instance, trace.alpha, trace.beta, G, limit)


def certify_trace(trace: RunTrace) -> list[str]:
    """Replay checks on a dumped trace; returns a list of problems (empty = ok)."""
    problems = []
    P, pano = realized_payments(trace.instance, trace.records)
    if (P, pano) != (trace.P, trace.panorama):
        problems.append(f"payments drifted: recomputed P={P} panorama={pano}, "
                        f"recorded P={trace.P} panorama={trace.panorama}")
    if P < pano:
        problems.append(f"payment {P} below panorama payment {pano}")
    D = sum(trace.alpha.values(), F0) + sum((r.beta for r in trace.records), F0)
    if D != trace.D:
        problems.append(f"dual drifted: recomputed {D}, recorded {trace.D}")
    if trace.algo != "greedy" and trace.Pbar != D:
        problems.append(f"surrogate primal {trace.Pbar} != dual {D}")
    if trace.algo in ("basic", "hybrid", "independent") and trace.xbar < trace.Pbar:
        problems.append(f"x-bar {trace.xbar} below surrogate primal {trace.Pbar}")
    problems.extend(replay_trace(trace))
    return problems


class ScriptedSelections(Engine):
    """Replays recorded selections instead of drawing them."""

    name = "scripted"

    def __init__(self, chosen: Sequence[str]):
        super().__init__()
        self.chosen = list(chosen)
        self.pos = 0

    def select(self, pair, rng):
        a = self.chosen[self.pos]
        self.pos += 1
        if a == pair.first.advertiser:
            return 1
        if a == pair.second.advertiser:
            return 2
        raise LedgerError(f"{pair.impression}: recorded selection {a!r} is not a candidate")


def replay_trace(trace: RunTrace) -> list[str]:
    """Re-run a primal-dual trace with its recorded selections; list drifts."""
    if trace.algo not in ("basic", "hybrid", "independent"):
        return []
    if trace.table is None:
        return ["trace carries no parameter table"]
    table = table_from_json(trace.table)
    rule = HybridRule(table) if trace.algo == "hybrid" else BasicRule(table)
    chosen = [r.selected for r in trace.records if r.kind == "randomized"]
    alloc = PrimalDualAllocator(trace.instance, rule, ScriptedSelections(chosen), random.Random(0),
                                name=trace.algo)
    try:
        again = alloc.run()
    except (LedgerError, ValueError) as e:
        return [f"replay failed: {e}"]
    problems = []
    for old, new in zip(trace.records, again.records):
        if (old.kind, old.candidates, old.selected, old.beta) != (new.kind, new.candidates, new.selected, new.beta):
            problems.append(f"{old.impression}: record drifted on replay")
    if again.alpha != trace.alpha:
        problems.append("alpha drifted on replay")
    if (again.Pbar, again.D, again.xbar) != (trace.Pbar, trace.D, trace.xbar):
        problems.append("totals drifted on replay")
    recon = alloc.reconstruct_alpha()
    if recon != again.alpha:
        problems.append("alpha reconstruction from segment counters disagrees")
    return problems
