"""Write the scripted round sequences used by the selection-engine tests."""
import json
import random
import sys
from pathlib import Path

from panorama_adwords.panocs import Candidate, RoundPair, chain, round_to_dict
from panorama_adwords.panorama import SEMI, AdvertiserPanorama


def staggered() -> list[RoundPair]:
    # half-width bids on a, so consecutive rounds overlap on one half only
    out, pan = [], AdvertiserPanorama(4)
    for t in range(5):
        s = pan.next_subset(3)
        pan.commit(s, SEMI, bid=3)
        out.append(RoundPair(f"i{t + 1}", Candidate("a", s, 3, 4), Candidate(f"p{t % 2}", ((0, 2),), 2, 2)))
    return out


def random_script(seed: int, n: int, advertisers: int, budget: int = 6) -> list[RoundPair]:
    rng = random.Random(seed)
    ids = [f"a{j}" for j in range(advertisers)]
    pan = {a: AdvertiserPanorama(budget) for a in ids}
    out = []
    for t in range(n):
        pair = []
        for a in rng.sample(ids, 2):
            b = rng.randint(1, budget)
            s = pan[a].next_subset(b)
            pan[a].commit(s, SEMI, large=2 * b >= budget, bid=b)
            pair.append(Candidate(a, s, b, budget))
        out.append(RoundPair(f"i{t + 1}", *pair))
    return out


SCRIPTS = {
    "chain3": lambda: chain(3),
    "chain4_wide": lambda: chain(4, budget=6),
    "staggered": staggered,
    "mixed_two": lambda: random_script(1, 5, 2),
    "mixed_three": lambda: random_script(7, 5, 3),
    "mixed_four": lambda: random_script(42, 6, 4),
}


def main(out_dir: str) -> None:
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    for name, make in SCRIPTS.items():
        rounds = [round_to_dict(r) for r in make()]
        (root / f"{name}.json").write_text(json.dumps({"rounds": rounds}, indent=1) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data/panocs")
