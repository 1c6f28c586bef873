"""Selection engines for randomized rounds.

A randomized round offers two advertiser-subset candidates; an engine picks
one with marginal probability exactly 1/2 while correlating picks across
rounds negatively.  Four engines share one contract:

* independent  - a fresh coin per round
* warmup       - every node picks one of eight incident arc slots
* large        - sender/receiver, arcs only between large bids
* general      - two-level partition into groups, sender/receiver on groups

Randomness is drawn through a `Chooser`, so the same step code serves the
Monte Carlo path (backed by `random.Random`) and the exact enumeration,
which replays each step under every scripted choice sequence.
"""
from __future__ import annotations

import math
import random
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

from .panorama import Subset, contains, intersect, normalize

HALF = Fraction(1, 2)
GAMMA_WARMUP = Fraction(1, 64)
P_LARGE = Fraction(4, 9)
P_GENERAL = Fraction(44285, 100000)
GAMMA_LARGE_FROZEN = Fraction(643, 12500)     # 0.05144
ENUMERATION_BUDGET = 2**28
VARIANTS = ("independent", "warmup", "large", "general")


def gamma_large(p=P_LARGE) -> Fraction:
    p = Fraction(p)
    return Fraction(1, 4) * (1 - p) * p * (1 - 3 * p / 8)


def gamma_general(kmax: int, p=P_GENERAL) -> float:
    p = float(p)
    return (1 - p) * (1 - (1 - p / (4 * kmax)) ** (4 * kmax)) / (16 * kmax)


def gamma_general_lower(kmax: int, p=P_GENERAL) -> float:
    p = float(p)
    return (1 - p) * (1 - math.exp(-p)) / (16 * kmax)


class EnumerationBudgetExceeded(RuntimeError):
    pass


# -- rounds -------------------------------------------------------------------

@dataclass(frozen=True)
class Candidate:
    advertiser: str
    subset: Subset
    bid: int
    budget: int

    @property
    def large(self) -> bool:
        return 2 * self.bid >= self.budget


@dataclass(frozen=True)
class RoundPair:
    impression: str
    first: Candidate
    second: Candidate

    def __post_init__(self):
        if self.first.advertiser == self.second.advertiser:
            raise ValueError("candidates must be distinct advertisers")

    @property
    def candidates(self) -> tuple[Candidate, Candidate]:
        return (self.first, self.second)


def round_from_dict(d: dict, index: int = 0) -> RoundPair:
    cands = []
    for c in d["candidates"]:
        cands.append(Candidate(str(c["advertiser"]), normalize(tuple(map(tuple, c["subset"]))),
                               int(c["bid"]), int(c["budget"])))
    return RoundPair(str(d.get("impression", f"r{index + 1}")), cands[0], cands[1])


def round_to_dict(r: RoundPair) -> dict:
    return {"impression": r.impression,
            "candidates": [{"advertiser": c.advertiser, "subset": [list(iv) for iv in c.subset],
                            "bid": c.bid, "budget": c.budget} for c in r.candidates]}


def chain(k: int, budget: int = 2) -> list[RoundPair]:
    """k rounds all covering advertiser `a` fully, each with a fresh partner."""
    full = ((0, budget),)
    return [RoundPair(f"i{t + 1}", Candidate("a", full, budget, budget),
                      Candidate(f"p{t + 1}", full, budget, budget)) for t in range(k)]


def point_counts(rounds: Sequence[RoundPair], advertiser: str, y) -> tuple[int, int]:
    """(k, kL): rounds covering the point, and large ones before the first small."""
    k = kl = 0
    small_seen = False
    for r in rounds:
        for c in r.candidates:
            if c.advertiser == advertiser and contains(c.subset, y):
                k += 1
                if c.large and not small_seen:
                    kl += 1
                elif not c.large:
                    small_seen = True
    return k, kl


def guarantee(k: int, gamma, exponent: int | None = None) -> Fraction:
    e = max(k - 1, 0) if exponent is None else max(exponent - 1, 0)
    return 1 - Fraction(1, 2**k) * Fraction(1 - Fraction(gamma)) ** e


# -- randomness ---------------------------------------------------------------

class Chooser:
    def coin(self) -> bool:
        raise NotImplementedError

    def bernoulli(self, p) -> bool:
        raise NotImplementedError

    def uniform(self, n: int) -> int:
        raise NotImplementedError


class RandomChooser(Chooser):
    def __init__(self, rng: random.Random):
        self.rng = rng

    def coin(self):
        return bool(self.rng.getrandbits(1))

    def bernoulli(self, p):
        return self.rng.random() < float(p)

    def uniform(self, n):
        return self.rng.randrange(n)


class ScriptedChooser(Chooser):
    """Replays a forced prefix of choices, defaulting to 0 afterwards."""

    def __init__(self, forced: Sequence[int]):
        self.forced = forced
        self.taken: list[int] = []
        self.arity: list[int] = []
        self.prob = Fraction(1)

    def _pick(self, weights: Sequence[Fraction]) -> int:
        pos = len(self.taken)
        i = self.forced[pos] if pos < len(self.forced) else 0
        self.taken.append(i)
        self.arity.append(len(weights))
        self.prob *= weights[i]
        return i

    def coin(self):
        return self._pick((HALF, HALF)) == 1

    def bernoulli(self, p):
        p = Fraction(p)
        return self._pick((1 - p, p)) == 1

    def uniform(self, n):
        w = Fraction(1, n)
        return self._pick((w,) * n)


def enumerate_choices(fn: Callable[[Chooser], object]):
    """Yield (probability, result) for every choice path of `fn`."""
    forced: list[int] = []
    while True:
        ch = ScriptedChooser(forced)
        out = fn(ch)
        if ch.prob:
            yield ch.prob, out
        i = len(ch.taken) - 1
        while i >= 0 and ch.taken[i] + 1 >= ch.arity[i]:
            i -= 1
        if i < 0:
            return
        forced = ch.taken[:i] + [ch.taken[i] + 1]


# -- randomness-free structure ------------------------------------------------

@dataclass
class RoundInfo:
    t: int
    pair: RoundPair
    # per candidate: prior adjacent rounds, most recent first, as (round, ordinal)
    in_all: tuple = ()
    in_large: tuple = ()
    groups: tuple = ()
    new_groups: tuple = ()
    refs: frozenset = frozenset()


class Structure:
    """Adjacency, arc ordinals and the two-level partition, all oblivious."""

    def __init__(self):
        self.t = -1
        self.cover: dict[str, list[tuple[int, int, int]]] = {}
        self.out_all: dict[tuple[int, str], int] = defaultdict(int)
        self.out_large: dict[tuple[int, str], int] = defaultdict(int)
        self.in_large_deg: dict[tuple[int, str], int] = defaultdict(int)
        self.large_of: dict[tuple[int, str], bool] = {}
        # general-bid partition
        self.j: dict[str, int] = defaultdict(lambda: 1)
        self.first: dict[str, int | None] = defaultdict(lambda: None)
        self.subsets: dict[str, dict[int, list[int]]] = defaultdict(lambda: defaultdict(list))
        self.group_of: dict[tuple[int, str], tuple] = {}
        self.group_adj: dict[tuple, set] = defaultdict(set)
        self.groups_seen: set = set()

    def adjacent(self, advertiser: str, subset: Subset) -> list[int]:
        """Prior rounds of `advertiser` adjacent to a new semi-assignment."""
        hits = set()
        for s, e, r in self.cover.get(advertiser, ()):
            if intersect(((s, e),), subset):
                hits.add(r)
        return sorted(hits, reverse=True)

    def _record_cover(self, advertiser: str, subset: Subset, t: int) -> None:
        old = self.cover.get(advertiser, [])
        out = []
        for s, e, r in old:
            # keep the parts of (s, e) outside subset
            cur = s
            for a, b in subset:
                if b <= cur or a >= e:
                    continue
                if a > cur:
                    out.append((cur, a, r))
                cur = max(cur, b)
            if cur < e:
                out.append((cur, e, r))
        out.extend((s, e, t) for s, e in subset)
        self.cover[advertiser] = sorted(out)

    def observe(self, pair: RoundPair) -> RoundInfo:
        self.t += 1
        t = self.t
        in_all, in_large = [], []
        adj = []
        for c in pair.candidates:
            a = c.advertiser
            prior = self.adjacent(a, c.subset)
            adj.append(prior)
            self.large_of[(t, a)] = c.large
            arcs_all, arcs_large = [], []
            for s in prior:
                self.out_all[(s, a)] += 1
                arcs_all.append((s, self.out_all[(s, a)]))
                if c.large and self.large_of[(s, a)]:
                    self.out_large[(s, a)] += 1
                    self.in_large_deg[(t, a)] += 1
                    arcs_large.append((s, self.out_large[(s, a)]))
            in_all.append(tuple(arcs_all))
            in_large.append(tuple(arcs_large))

        # first level: open a new subset when adjacent to the first round of the current one
        for c, prior in zip(pair.candidates, adj):
            a = c.advertiser
            if self.first[a] is None:
                self.first[a] = t
            elif self.first[a] in prior:
                self.j[a] += 1
                self.first[a] = t
            self.subsets[a][self.j[a]].append(t)
        a0, a1 = pair.first.advertiser, pair.second.advertiser
        groups = ((a0, self.j[a0], self.j[a1]), (a1, self.j[a1], self.j[a0]))
        new = []
        for c, g, prior in zip(pair.candidates, groups, adj):
            new.append(g not in self.groups_seen)
            self.groups_seen.add(g)
            self.group_of[(t, c.advertiser)] = g
            for s in prior:
                h = self.group_of[(s, c.advertiser)]
                if h != g:
                    self.group_adj[g].add(h)
                    self.group_adj[h].add(g)

        for c in pair.candidates:
            self._record_cover(c.advertiser, c.subset, t)

        refs = set()
        for c, arcs in zip(pair.candidates, in_all):
            refs.update(("w", s, c.advertiser, o) for s, o in arcs)
        for c, arcs in zip(pair.candidates, in_large):
            refs.update(("l", s, c.advertiser, o) for s, o in arcs)
        for g in groups:
            refs.add(("dec", g))
            refs.add(("pend", g))
        return RoundInfo(t, pair, tuple(in_all), tuple(in_large), groups, tuple(new), frozenset(refs))

    def first_level_counts(self) -> dict[str, int]:
        return {a: sum(1 for v in subs.values() if v) for a, subs in self.subsets.items()}

    def group_degrees(self) -> dict[tuple, int]:
        return {g: len(v) for g, v in self.group_adj.items()}


# -- engines ------------------------------------------------------------------

class Engine:
    """One selection engine; `live` holds everything randomness touched."""

    name = ""
    gamma: Fraction | float = 0

    def __init__(self):
        self.structure = Structure()
        self.live: dict = {}
        self.realized: list[tuple] = []

    def decide(self, live: dict, info: RoundInfo, ch: Chooser) -> tuple[int, tuple | None]:
        raise NotImplementedError

    def canonical(self, live: dict):
        return tuple(sorted(live.items()))

    def select(self, pair: RoundPair, rng: random.Random) -> int:
        info = self.structure.observe(pair)
        sel, arc = self.decide(self.live, info, RandomChooser(rng))
        if arc is not None:
            self.realized.append(arc)
        return sel

    def bound(self, k: int, kl: int | None = None) -> Fraction:
        return guarantee(k, self.gamma)


def _opposite(pair: RoundPair, idx: int, selected_adv: bool) -> int:
    """Selection in {1, 2} making the opposite call on candidate idx's advertiser."""
    mine = idx + 1
    other = 2 - idx
    return other if selected_adv else mine


class IndependentEngine(Engine):
    name = "independent"
    gamma = Fraction(0)

    def decide(self, live, info, ch):
        return (1 if ch.coin() else 2), None


class WarmupEngine(Engine):
    name = "warmup"
    gamma = GAMMA_WARMUP

    def decide(self, live, info, ch):
        pair, t = info.pair, info.t
        slot = ch.uniform(8)
        sel, arc = None, None
        if slot < 4:
            idx, j = divmod(slot, 2)
            sel = 1 if ch.coin() else 2
            live[("w", t, pair.candidates[idx].advertiser, j + 1)] = (sel == idx + 1)
        else:
            idx, r = divmod(slot - 4, 2)
            arcs = info.in_all[idx]
            adv = pair.candidates[idx].advertiser
            if r < len(arcs):
                s, o = arcs[r]
                key = ("w", s, adv, o)
                if key in live:
                    sel = _opposite(pair, idx, live.pop(key))
                    arc = (s, t, adv)
            if sel is None:
                sel = 1 if ch.coin() else 2
        for idx, arcs in enumerate(info.in_all):
            adv = pair.candidates[idx].advertiser
            for s, o in arcs:
                live.pop(("w", s, adv, o), None)
        return sel, arc


class LargeBidEngine(Engine):
    name = "large"

    def __init__(self, p=P_LARGE):
        super().__init__()
        self.p = Fraction(p)
        self.gamma = gamma_large(self.p)

    def decide(self, live, info, ch):
        pair, t = info.pair, info.t
        sel, arc = None, None
        if ch.bernoulli(self.p):
            sel = 1 if ch.coin() else 2
            idx, j = divmod(ch.uniform(4), 2)
            c = pair.candidates[idx]
            if c.large:
                live[("l", t, c.advertiser, j + 1)] = (sel == idx + 1)
        else:
            senders = []
            for idx, arcs in enumerate(info.in_large):
                adv = pair.candidates[idx].advertiser
                for s, o in arcs:
                    key = ("l", s, adv, o)
                    if key in live:
                        senders.append((idx, key))
            if senders:
                idx, key = senders[ch.uniform(len(senders))] if len(senders) > 1 else senders[0]
                sel = _opposite(pair, idx, live[key])
                arc = (key[1], t, key[2])
            else:
                sel = 1 if ch.coin() else 2
        for idx, arcs in enumerate(info.in_large):
            adv = pair.candidates[idx].advertiser
            for s, o in arcs:
                live.pop(("l", s, adv, o), None)
        return sel, arc

    def bound(self, k, kl=None):
        return guarantee(k, self.gamma, exponent=k if kl is None else kl)


class GeneralBidEngine(Engine):
    name = "general"

    def __init__(self, kmax: int = 18, p=P_GENERAL):
        super().__init__()
        self.kmax = kmax
        self.p = Fraction(p)
        self.gamma = Fraction(gamma_general_lower(kmax, self.p))

    def _group_decision(self, live, g, ch) -> tuple[bool, tuple | None]:
        a, j, _ = g
        pend = live.pop(("pend", g), ())
        if ch.bernoulli(self.p):
            bit = ch.coin()
            slot = ch.uniform(2 * 2 * self.kmax)
            dj, kk = divmod(slot, 2 * self.kmax)
            target = (a, j + 1 + dj, kk + 1)
            live[("pend", target)] = live.get(("pend", target), ()) + ((g, bit),)
            return bit, None
        if pend:
            i = ch.uniform(len(pend)) if len(pend) > 1 else 0
            sender, bit = pend[i]
            return (not bit), (sender, g)
        return ch.coin(), None

    def decide(self, live, info, ch):
        pair = info.pair
        arc = None
        for g, new in zip(info.groups, info.new_groups):
            if new:
                live[("dec", g)], got = self._group_decision(live, g, ch)
                arc = arc or got
        follow = 0 if ch.coin() else 1
        says_a = live[("dec", info.groups[follow])]
        sel = (follow + 1) if says_a else (2 - follow)
        return sel, arc

    def canonical(self, live):
        out = []
        for k, v in live.items():
            if k[0] == "pend":
                v = tuple(sorted(b for _, b in v))
            out.append((k, v))
        return tuple(sorted(out))


def make_engine(variant: str, *, kmax: int = 18, p=None) -> Engine:
    if variant == "independent":
        return IndependentEngine()
    if variant == "warmup":
        return WarmupEngine()
    if variant == "large":
        return LargeBidEngine(P_LARGE if p is None else p)
    if variant == "general":
        return GeneralBidEngine(kmax, P_GENERAL if p is None else p)
    raise ValueError(f"unknown variant {variant!r}")


# -- exact enumeration --------------------------------------------------------

@dataclass
class ExactResult:
    probability: Fraction | None
    marginals: list[Fraction] = field(default_factory=list)   # P[select first] per round
    states_peak: int = 0
    paths: int = 0


def _prune(live: dict, needed: frozenset) -> dict:
    out = {}
    for k, v in live.items():
        tag = k[0]
        if tag in ("w", "l"):
            if k in needed:
                out[k] = v
        elif (tag, k[1]) in needed:
            out[k] = v
    return out


def enumerate_exact(variant: str, rounds: Sequence[RoundPair], query: tuple[str, object] | None = None,
                    *, kmax: int = 18, p=None, budget: int = ENUMERATION_BUDGET) -> ExactResult:
    """Exact P[query point selected at least once] and per-round marginals.

    Forward dynamic programme over the engine's live state; entries no later
    round can read are dropped so equal futures merge.
    """
    engine = make_engine(variant, kmax=kmax, p=p)
    infos = [engine.structure.observe(r) for r in rounds]
    needed = [frozenset()] * len(infos)
    acc: frozenset = frozenset()
    for t in range(len(infos) - 1, -1, -1):
        needed[t] = acc
        acc = acc | infos[t].refs

    states: dict = {(False, ()): (Fraction(1), {})}
    marginals, paths, peak = [], 0, 1
    for t, info in enumerate(infos):
        nxt: dict = {}
        first = Fraction(0)
        for (hit, _), (prob, live) in states.items():
            def step(ch, live=live):
                mine = dict(live)
                sel, _ = engine.decide(mine, info, ch)
                return sel, mine
            for q, (sel, after) in enumerate_choices(step):
                paths += 1
                if paths > budget:
                    raise EnumerationBudgetExceeded(f"more than {budget} enumeration paths")
                w = prob * q
                if sel == 1:
                    first += w
                h = hit
                if query is not None and not h:
                    c = info.pair.candidates[sel - 1]
                    h = c.advertiser == query[0] and contains(c.subset, query[1])
                after = _prune(after, needed[t])
                key = (h, engine.canonical(after))
                if key in nxt:
                    nxt[key] = (nxt[key][0] + w, nxt[key][1])
                else:
                    nxt[key] = (w, after)
        states = nxt
        peak = max(peak, len(states))
        marginals.append(first)
    prob = None
    if query is not None:
        prob = sum((pr for (hit, _), (pr, _) in states.items() if hit), Fraction(0))
    return ExactResult(prob, marginals, peak, paths)


def selection_probability_exact(variant: str, rounds: Sequence[RoundPair], query: tuple[str, object],
                                **kw) -> Fraction:
    return enumerate_exact(variant, rounds, query, **kw).probability


def run_monte_carlo(variant: str, rounds: Sequence[RoundPair], trials: int, seed: int,
                    *, kmax: int = 18, p=None) -> tuple[list[int], list[list[int]], list]:
    """Selections per trial.  Returns (first-counts per round, raw selections, realized arcs)."""
    base = make_engine(variant, kmax=kmax, p=p)
    infos = [base.structure.observe(r) for r in rounds]
    rng = random.Random(seed)
    ch = RandomChooser(rng)
    firsts = [0] * len(rounds)
    all_sel, all_arcs = [], []
    for _ in range(trials):
        live: dict = {}
        sels, arcs = [], []
        for t, info in enumerate(infos):
            sel, arc = base.decide(live, info, ch)
            sels.append(sel)
            if arc is not None:
                arcs.append(arc)
            if sel == 1:
                firsts[t] += 1
        all_sel.append(sels)
        all_arcs.append(arcs)
    return firsts, all_sel, all_arcs


def is_matching(arcs: Iterable[tuple]) -> bool:
    seen = set()
    for arc in arcs:
        for node in arc[:2]:
            if node in seen:
                return False
            seen.add(node)
    return True
