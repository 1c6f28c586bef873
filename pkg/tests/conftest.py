import random

import pytest
from hypothesis import settings

from panorama_adwords.instance import instance_from_dict
from panorama_adwords.panocs import Candidate, RoundPair
from panorama_adwords.panorama import DETERMINISTIC, SEMI, AdvertiserPanorama

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def unit_pair():
    """Two advertisers with budget 2 and three impressions bidding 1 on both."""
    return instance_from_dict({
        "scale": 1,
        "advertisers": [{"id": "a1", "budget": 2}, {"id": "a2", "budget": 2}],
        "impressions": [{"id": f"i{t}", "bids": {"a1": 1, "a2": 1}} for t in (1, 2, 3)],
    })


def panoramic_rounds(rng: random.Random, kmax: int, all_large: bool = False, n: int = 14, on_commit=None):
    """Rounds produced by the panoramic scan on random budgets, no point above kmax.

    `on_commit(panorama)` runs after every commit.
    """
    budgets = {f"a{j}": rng.choice([4, 6, 8, 10]) for j in range(rng.randint(2, 4))}
    pan = {a: AdvertiserPanorama(b) for a, b in budgets.items()}
    rounds = []
    for t in range(n):
        a1, a2 = rng.sample(sorted(budgets), 2)
        if rng.random() < 0.15:
            b = rng.randint(1, budgets[a1])
            s = pan[a1].next_subset(b)
            if s:
                pan[a1].commit(s, DETERMINISTIC, bid=b)
                if on_commit:
                    on_commit(pan[a1])
            continue
        cands = []
        for a in (a1, a2):
            B = budgets[a]
            b = rng.randint((B + 1) // 2, B) if all_large else rng.randint(1, B)
            s = pan[a].next_subset(b)
            if not s or any(p.k + 1 > kmax for p in pan[a].pieces(s)):
                break
            cands.append(Candidate(a, s, b, B))
        if len(cands) < 2:
            continue
        for c in cands:
            pan[c.advertiser].commit(c.subset, SEMI, large=c.large, bid=c.bid)
            if on_commit:
                on_commit(pan[c.advertiser])
        rounds.append(RoundPair(f"i{t}", *cands))
    return rounds
