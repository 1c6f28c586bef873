"""AdWords instances: advertisers with budgets, impressions with bids.

All money is an integer number of units on a per-instance scale, so that
interval arithmetic downstream stays exact.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping

MAX_INT = 2**53 - 1
FAMILIES = ("upper-triangular", "uniform-random", "all-large", "mixed")


class InstanceError(ValueError):
    pass


@dataclass(frozen=True)
class Advertiser:
    id: str
    budget: int


@dataclass(frozen=True)
class Impression:
    id: str
    bids: Mapping[str, int] = field(default_factory=dict)

    def bid(self, advertiser: str) -> int:
        return self.bids.get(advertiser, 0)


@dataclass(frozen=True)
class Instance:
    scale: int
    advertisers: tuple[Advertiser, ...]
    impressions: tuple[Impression, ...]

    def __post_init__(self):
        _validate(self)
        object.__setattr__(self, "_budget", {a.id: a.budget for a in self.advertisers})
        object.__setattr__(self, "_imp", {i.id: i for i in self.impressions})

    @property
    def advertiser_ids(self) -> list[str]:
        return [a.id for a in self.advertisers]

    def budget(self, advertiser: str) -> int:
        return self._budget[advertiser]

    def impression(self, impression_id: str) -> Impression:
        try:
            return self._imp[impression_id]
        except KeyError:
            raise InstanceError(f"unknown impression {impression_id!r}") from None

    def bid(self, advertiser: str, impression_id: str) -> int:
        return self.impression(impression_id).bid(advertiser)

    def is_large(self, advertiser: str, bid: int) -> bool:
        # boundary b = B/2 counts as large
        return 2 * bid >= self.budget(advertiser)

    def all_large(self) -> bool:
        return all(b == 0 or self.is_large(a, b)
                   for i in self.impressions for a, b in i.bids.items())

    def all_small(self) -> bool:
        return all(2 * b <= self.budget(a)
                   for i in self.impressions for a, b in i.bids.items())


def _validate(inst: Instance) -> None:
    if not isinstance(inst.scale, int) or inst.scale < 1:
        raise InstanceError(f"scale must be a positive integer, got {inst.scale!r}")
    seen = set()
    for a in inst.advertisers:
        if a.id in seen:
            raise InstanceError(f"duplicate advertiser id {a.id!r}")
        seen.add(a.id)
        if not isinstance(a.budget, int) or a.budget <= 0 or a.budget > MAX_INT:
            raise InstanceError(f"advertiser {a.id!r}: non-positive budget {a.budget!r}")
    budgets = {a.id: a.budget for a in inst.advertisers}
    imps = set()
    for i in inst.impressions:
        if i.id in imps:
            raise InstanceError(f"duplicate impression id {i.id!r}")
        imps.add(i.id)
        for a, b in i.bids.items():
            if a not in budgets:
                raise InstanceError(f"impression {i.id!r}: unknown advertiser {a!r}")
            if not isinstance(b, int) or b < 0:
                raise InstanceError(f"impression {i.id!r}: bad bid {b!r} for {a!r}")
            if b > budgets[a]:
                raise InstanceError(f"impression {i.id!r}: bid exceeds budget for {a!r}")


def instance_from_dict(data: Mapping) -> Instance:
    try:
        advs = tuple(Advertiser(str(a["id"]), a["budget"]) for a in data["advertisers"])
        imps = tuple(Impression(str(i["id"]), {str(k): v for k, v in i.get("bids", {}).items() if v != 0})
                     for i in data["impressions"])
        return Instance(data["scale"], advs, imps)
    except (KeyError, TypeError) as e:
        raise InstanceError(f"malformed instance: {e}") from None


def instance_to_dict(inst: Instance) -> dict:
    return {
        "scale": inst.scale,
        "advertisers": [{"id": a.id, "budget": a.budget} for a in inst.advertisers],
        "impressions": [{"id": i.id, "bids": dict(i.bids)} for i in inst.impressions],
    }


def load_instance(source: IO | bytes | str) -> Instance:
    if hasattr(source, "read"):
        source = source.read()
    try:
        data = json.loads(source)
    except json.JSONDecodeError as e:
        raise InstanceError(f"parse failure: {e}") from None
    return instance_from_dict(data)


def dump_instance(inst: Instance) -> str:
    return json.dumps(instance_to_dict(inst), indent=1, sort_keys=False)


def budget_additive_payment(inst: Instance, advertiser: str, impressions: Iterable[str]) -> int:
    total = sum(inst.bid(advertiser, i) for i in impressions)
    return min(total, inst.budget(advertiser))


def generate_instance(family: str, advertisers: int, impressions: int, seed: int,
                      scale: int = 10) -> Instance:
    """Deterministic given its arguments.  Budgets are multiples of `scale`."""
    if family not in FAMILIES:
        raise InstanceError(f"unknown family {family!r}")
    if advertisers < 1 or impressions < 1:
        raise InstanceError("counts must be >= 1")
    if not -2**63 <= seed < 2**64:
        raise InstanceError("seed must fit in 64 bits")
    rng = random.Random(seed)
    ids = [f"a{j + 1}" for j in range(advertisers)]

    if family == "upper-triangular":
        budgets = [scale] * advertisers
    else:
        budgets = [scale * rng.randint(1, 4) for _ in ids]

    imps = []
    for t in range(impressions):
        bids = {}
        if family == "upper-triangular":
            # impression t bids only on advertisers from its block onwards
            lo = t * advertisers // impressions
            for j in range(lo, advertisers):
                bids[ids[j]] = budgets[j]
        else:
            for j, a in enumerate(ids):
                B = budgets[j]
                if rng.random() < 0.3:
                    continue
                if family == "uniform-random":
                    b = rng.randint(1, B)
                elif family == "all-large":
                    b = rng.randint((B + 1) // 2, B)
                elif rng.random() < 0.5:
                    b = rng.randint((B + 1) // 2, B)
                else:
                    b = rng.randint(1, max(1, (B - 1) // 2))
                bids[a] = b
        imps.append(Impression(f"i{t + 1}", bids))
    return Instance(scale, tuple(Advertiser(a, B) for a, B in zip(ids, budgets)), tuple(imps))
