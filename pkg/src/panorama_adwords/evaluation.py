"""Offline optimum, ratio estimation, selection-engine verification, reports.

Trials of a panoramic allocator differ only in the selection engine's
randomness: both candidates of a randomized round commit, so the sequence
of rounds is the same for every seed.  `replay_trials` exploits this by
running the allocator once and re-drawing only the selections.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
import os
import random
import statistics
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

from .allocators import (PrimalDualAllocator, RunTrace, make_allocator, realized_payments,
                         trace_dual_feasibility)
from .instance import Instance, budget_additive_payment
from .panocs import (RandomChooser, RoundPair, contains, enumerate_exact, make_engine,
                     point_counts, round_from_dict)
from .panorama import normalize, panorama_payment

BRUTE_LIMIT = 10**8
REPORT_FIELDS = ["instance", "algo", "table", "trials", "seed", "mean_alg", "opt", "ratio",
                 "ci_low", "ci_high", "guarantee", "pass"]
REPORT_SCHEMA = "# schema=1"


# -- offline optimum ----------------------------------------------------------

@dataclass
class OptResult:
    value: Fraction
    assignment: dict[str, str | None]
    method: str            # brute | bound
    flagged: bool = False


def _choices(inst: Instance) -> list[list[str | None]]:
    return [[None] + [a for a in inst.advertiser_ids if imp.bid(a) > 0] for imp in inst.impressions]


def assignment_space(inst: Instance) -> int:
    return math.prod(len(c) for c in _choices(inst))


def offline_opt(inst: Instance, limit: int = BRUTE_LIMIT) -> OptResult:
    """Exact optimum by exhaustive search over assignments.

    Search runs impression by impression, memoized on the vector of
    budget-capped spend, which is exact because later payments only depend
    on it.  Instances whose raw assignment space exceeds `limit` get the
    dual bound D / Gamma of a hybrid run instead.
    """
    if assignment_space(inst) > limit:
        tr = make_allocator("hybrid", inst, 0).run()
        return OptResult(tr.D / tr.Gamma, {}, "bound", True)
    ids = inst.advertiser_ids
    budgets = [inst.budget(a) for a in ids]
    imps = inst.impressions
    bids = [[imp.bid(a) for a in ids] for imp in imps]

    @lru_cache(maxsize=None)
    def best(t: int, spend: tuple[int, ...]) -> int:
        if t == len(imps):
            return 0
        out = best(t + 1, spend)
        for j, b in enumerate(bids[t]):
            if b <= 0 or spend[j] >= budgets[j]:
                continue
            gain = min(b, budgets[j] - spend[j])
            nxt = spend[:j] + (spend[j] + gain,) + spend[j + 1:]
            out = max(out, gain + best(t + 1, nxt))
        return out

    spend = tuple(0 for _ in ids)
    value = best(0, spend)
    assignment: dict[str, str | None] = {}
    for t, imp in enumerate(imps):
        target = best(t, spend)
        assignment[imp.id] = None
        if best(t + 1, spend) != target:
            for j, b in enumerate(bids[t]):
                if b <= 0 or spend[j] >= budgets[j]:
                    continue
                gain = min(b, budgets[j] - spend[j])
                nxt = spend[:j] + (spend[j] + gain,) + spend[j + 1:]
                if gain + best(t + 1, nxt) == target:
                    assignment[imp.id] = ids[j]
                    spend = nxt
                    break
    best.cache_clear()
    return OptResult(Fraction(value), assignment, "brute")


def offline_opt_product(inst: Instance, limit: int = 10**6) -> Fraction:
    """Second oracle: plain product enumeration, impressions in reverse order."""
    if assignment_space(inst) > limit:
        raise ValueError("assignment space too large for product enumeration")
    choices = _choices(inst)[::-1]
    imps = [i.id for i in inst.impressions][::-1]
    best = 0
    for combo in itertools.product(*choices):
        groups: dict[str, list[str]] = {}
        for i, a in zip(imps, combo):
            if a is not None:
                groups.setdefault(a, []).append(i)
        best = max(best, sum(budget_additive_payment(inst, a, s) for a, s in groups.items()))
    return Fraction(best)


# -- trials -------------------------------------------------------------------

def trial_seed(seed: int, t: int) -> int:
    return random.Random(f"{seed}:{t}").getrandbits(64)


@dataclass
class TrialOutcome:
    P: int
    panorama: int


def replay_trials(inst: Instance, algo: str, seeds: Sequence[int], *, table=None) -> list[TrialOutcome]:
    """Realized payments per seed, redrawing only the selection randomness."""
    base = make_allocator(algo, inst, 0, table=table)
    base.run()
    if not isinstance(base, PrimalDualAllocator):
        P, pano = realized_payments(inst, base.records)
        return [TrialOutcome(P, pano) for _ in seeds]
    engine = make_engine(base.engine.name, kmax=getattr(base.engine, "kmax", 18),
                         p=getattr(base.engine, "p", None))
    infos = [engine.structure.observe(r) for r in base.rounds]
    out = []
    ids = inst.advertiser_ids
    for s in seeds:
        ch = RandomChooser(random.Random(s))
        live: dict = {}
        spent = {a: 0 for a in ids}
        subsets: dict[str, list] = {a: [] for a in ids}
        j = 0
        for rec in base.records:
            imp = inst.impression(rec.impression)
            if rec.kind == "randomized":
                sel, _ = engine.decide(live, infos[j], ch)
                j += 1
                a, sub = rec.candidates[sel - 1]
            elif rec.kind == "deterministic":
                a, sub = rec.candidates[0]
            elif rec.kind == "greedy":
                a, sub, best = None, (), 0
                for x in ids:
                    g = min(imp.bid(x), max(inst.budget(x) - spent[x], 0))
                    if g > best:
                        best, a = g, x
                if a is None:
                    continue
            else:
                continue
            spent[a] += imp.bid(a)
            if sub:
                subsets[a].append(sub)
        P = sum(min(v, inst.budget(a)) for a, v in spent.items())
        out.append(TrialOutcome(P, sum(panorama_payment(v) for v in subsets.values())))
    return out


@dataclass
class RatioEstimate:
    algo: str
    trials: int
    seed: int
    mean_alg: float
    mean_panorama: float
    opt: Fraction
    ratio: float
    ci_low: float
    ci_high: float
    opt_method: str = "brute"


def estimate_ratio(inst: Instance, algo: str, trials: int, seed: int, *, table=None,
                   opt: OptResult | None = None) -> RatioEstimate:
    """Mean realized payment over OPT; 95% normal-approximation interval."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    opt = opt or offline_opt(inst)
    outs = replay_trials(inst, algo, [trial_seed(seed, t) for t in range(trials)], table=table)
    ps = [o.P for o in outs]
    mean = statistics.fmean(ps)
    sd = statistics.pstdev(ps) if trials > 1 else 0.0
    half = 1.96 * sd / math.sqrt(trials)
    o = float(opt.value) or 1.0
    return RatioEstimate(algo, trials, seed, mean, statistics.fmean(o_.panorama for o_ in outs), opt.value,
                         mean / o, (mean - half) / o, (mean + half) / o, opt.method)


def hoeffding_margin(trials: int, delta: float) -> float:
    """One-sided Hoeffding deviation for a mean of [0, 1] variables."""
    return math.sqrt(math.log(1 / delta) / (2 * trials))


def guarantee_for(algo: str, trace: RunTrace | None, inst: Instance) -> Fraction:
    if algo == "greedy":
        return Fraction(1, 2)
    if algo == "msvv":
        return Fraction(5, 9) if inst.all_small() else Fraction(1, 2)
    return trace.Gamma if trace is not None and trace.Gamma is not None else Fraction(1, 2)


# -- selection-engine verification --------------------------------------------

@dataclass
class PointCheck:
    advertiser: str
    point: int
    k: int
    kl: int
    probability: Fraction | float
    bound: Fraction
    margin: float = 0.0

    @property
    def ok(self) -> bool:
        return float(self.bound) - float(self.probability) <= self.margin if self.margin else \
            self.probability >= self.bound


@dataclass
class PanocsReport:
    variant: str
    mode: str
    checks: list[PointCheck] = field(default_factory=list)
    marginals: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)


def query_points(rounds: Sequence[RoundPair]) -> list[tuple[str, int]]:
    """One representative point per elementary interval of each advertiser."""
    cuts: dict[str, set[int]] = {}
    for r in rounds:
        for c in r.candidates:
            s = cuts.setdefault(c.advertiser, set())
            for lo, hi in c.subset:
                s.update((lo, hi))
    out = []
    for a in sorted(cuts):
        pts = sorted(cuts[a])
        for lo, hi in zip(pts, pts[1:]):
            if point_counts(rounds, a, lo)[0] > 0:
                out.append((a, lo))
    return out


def verify_panocs_bound(variant: str, rounds: Sequence[RoundPair], mode: str = "exact", *,
                        trials: int = 10000, delta: float = 0.01, seed: int = 0, kmax: int = 18,
                        queries: Sequence[tuple[str, int]] | None = None) -> PanocsReport:
    engine = make_engine(variant, kmax=kmax)
    queries = list(queries) if queries is not None else query_points(rounds)
    rep = PanocsReport(variant, mode)
    if mode == "exact":
        for a, y in queries:
            k, kl = point_counts(rounds, a, y)
            res = enumerate_exact(variant, rounds, (a, y), kmax=kmax)
            rep.checks.append(PointCheck(a, y, k, kl, res.probability, engine.bound(k, kl)))
            rep.marginals = res.marginals
    elif mode == "mc":
        infos = [engine.structure.observe(r) for r in rounds]
        ch = RandomChooser(random.Random(seed))
        hits = {q: 0 for q in queries}
        firsts = [0] * len(rounds)
        for _ in range(trials):
            live: dict = {}
            covered = set()
            for t, info in enumerate(infos):
                sel, _ = engine.decide(live, info, ch)
                if sel == 1:
                    firsts[t] += 1
                c = info.pair.candidates[sel - 1]
                for q in queries:
                    if q[0] == c.advertiser and contains(c.subset, q[1]):
                        covered.add(q)
            for q in covered:
                hits[q] += 1
        margin = hoeffding_margin(trials, delta)
        for a, y in queries:
            k, kl = point_counts(rounds, a, y)
            rep.checks.append(PointCheck(a, y, k, kl, hits[(a, y)] / trials, engine.bound(k, kl), margin))
        rep.marginals = [f / trials for f in firsts]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return rep


def load_script(data) -> list[RoundPair]:
    rounds = data["rounds"] if isinstance(data, dict) else data
    return [round_from_dict(r, t) for t, r in enumerate(rounds)]


# -- exact expectations over the selection randomness -------------------------

def expected_panorama_exact(inst: Instance, algo: str, *, table=None) -> tuple[Fraction, RunTrace]:
    """E[panorama payment] by exact enumeration, per elementary interval."""
    alloc = make_allocator(algo, inst, 0, table=table)
    trace = alloc.run()
    variant = alloc.engine.name
    kmax = getattr(alloc.engine, "kmax", 18)
    total = Fraction(0)
    for a in inst.advertiser_ids:
        det = normalize(iv for r in trace.records if r.kind == "deterministic" and r.selected == a
                        for iv in r.candidates[0][1])
        semi = [s for r in trace.records if r.kind == "randomized" for (b, s) in r.candidates if b == a]
        cuts = sorted({0, inst.budget(a)} | {x for sub in semi + [det] for iv in sub for x in iv})
        for lo, hi in zip(cuts, cuts[1:]):
            if contains(det, lo):
                total += hi - lo
            elif any(contains(s, lo) for s in semi):
                p = enumerate_exact(variant, alloc.rounds, (a, lo), kmax=kmax).probability
                total += (hi - lo) * p
    return total, trace


def dual_upper_bound_sanity(trace: RunTrace, Gamma, opt: OptResult | None = None) -> bool:
    Gamma = Fraction(Gamma)
    if Gamma <= 0:
        raise ValueError("Gamma must be positive")
    opt = opt or offline_opt(trace.instance)
    return opt.value <= trace.D / Gamma


# -- reports ------------------------------------------------------------------

def report_row(name: str, est: RatioEstimate, table: str, guarantee: Fraction, total_budget: int,
               delta: float = 0.05) -> dict:
    # payments normalized by the total budget lie in [0, 1]
    margin = total_budget / float(est.opt or 1) * hoeffding_margin(est.trials, delta) if est.trials > 1 else 0.0
    ok = est.ratio + margin >= float(guarantee) - 1e-12
    return {"instance": name, "algo": est.algo, "table": table, "trials": est.trials, "seed": est.seed,
            "mean_alg": f"{est.mean_alg:.6f}", "opt": str(est.opt), "ratio": f"{est.ratio:.6f}",
            "ci_low": f"{est.ci_low:.6f}", "ci_high": f"{est.ci_high:.6f}",
            "guarantee": f"{float(guarantee):.6f}", "pass": "true" if ok else "false"}


def append_report(path: str, rows: Sequence[dict]) -> None:
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        if fresh:
            fh.write(REPORT_SCHEMA + "\n")
        w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        if fresh:
            w.writeheader()
        for r in rows:
            w.writerow(r)


def format_rows(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS)
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()
