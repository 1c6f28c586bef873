import json
import math
import random
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from panorama_adwords.evaluation import load_script
from panorama_adwords.panocs import (GAMMA_LARGE_FROZEN, GAMMA_WARMUP, HALF, P_GENERAL, VARIANTS,
                                     Candidate, EnumerationBudgetExceeded, RoundPair, ScriptedChooser,
                                     Structure, chain, enumerate_choices, enumerate_exact, gamma_general,
                                     gamma_general_lower, gamma_large, guarantee, is_matching, make_engine,
                                     point_counts, round_from_dict, round_to_dict, run_monte_carlo,
                                     selection_probability_exact)

from conftest import panoramic_rounds

CORPUS = sorted((Path(__file__).parent / "data" / "panocs").glob("*.json"))


def corpus(path):
    return load_script(json.loads(path.read_text()))


def test_round_pair_needs_distinct_advertisers():
    c = Candidate("a", ((0, 1),), 1, 2)
    with pytest.raises(ValueError):
        RoundPair("i", c, c)


def test_round_dict_round_trip():
    r = chain(2)[1]
    assert round_from_dict(round_to_dict(r)) == r


def test_adjacency_skips_covered_rounds():
    s = Structure()
    full, left, right = ((0, 2),), ((0, 1),), ((1, 2),)
    for t, sub in enumerate((full, left, right)):
        info = s.observe(RoundPair(f"i{t}", Candidate("a", sub, 1, 2), Candidate(f"p{t}", ((0, 1),), 1, 2)))
    # C overlaps B nowhere and reaches A through [1, 2)
    assert [r for r, _ in info.in_all[0]] == [0]


def test_disjoint_subsets_are_not_adjacent():
    s = Structure()
    s.observe(RoundPair("i0", Candidate("a", ((0, 1),), 1, 4), Candidate("b", ((0, 1),), 1, 4)))
    info = s.observe(RoundPair("i1", Candidate("a", ((1, 3),), 2, 4), Candidate("b", ((2, 3),), 1, 4)))
    assert info.in_all == ((), ())


def test_large_stream_has_at_most_two_prior_neighbours():
    rng = random.Random(5)
    for _ in range(300):
        s = Structure()
        for r in panoramic_rounds(rng, kmax=6, all_large=True):
            info = s.observe(r)
            assert all(len(arcs) <= 2 for arcs in info.in_large)
        assert all(v <= 2 for v in s.out_large.values())


def test_gamma_constants():
    assert gamma_large(Fraction(4, 9)) == Fraction(100, 1944)
    assert abs(float(GAMMA_LARGE_FROZEN) - 0.05144) < 1e-12
    assert GAMMA_LARGE_FROZEN <= gamma_large()
    p = float(P_GENERAL)
    expected = (1 / 16) * (1 - p) * (1 - math.exp(-p)) / 18
    assert gamma_general_lower(18) == pytest.approx(expected, abs=1e-12)
    assert gamma_general_lower(18) >= 0.01245 / 18
    assert gamma_general(18) >= gamma_general_lower(18)


def test_enumerate_choices_weights_sum_to_one():
    def fn(ch):
        return (ch.coin(), ch.uniform(3), ch.bernoulli(Fraction(1, 5)))
    outs = list(enumerate_choices(fn))
    assert len(outs) == 12
    assert sum(q for q, _ in outs) == 1


def test_scripted_chooser_replays():
    ch = ScriptedChooser([1, 2, 0])
    assert ch.coin() is True and ch.uniform(3) == 2 and ch.bernoulli(HALF) is False
    assert ch.prob == Fraction(1, 12)


@pytest.mark.parametrize("k, expected", [(1, HALF), (2, Fraction(3, 4)), (3, Fraction(7, 8))])
def test_independent_chain(k, expected):
    assert selection_probability_exact("independent", chain(k), ("a", 0)) == expected


def test_warmup_two_rounds():
    p = selection_probability_exact("warmup", chain(2), ("a", 0))
    assert 1 - p == Fraction(63, 256)
    assert 1 - p == Fraction(1, 4) * (1 - GAMMA_WARMUP)


def test_warmup_recurrence():
    # f_m: P[no realized consecutive arc] on an m-chain, from the exact miss probability
    f = {m: (1 - selection_probability_exact("warmup", chain(m), ("a", 0))) * 2**m for m in range(1, 6)}
    assert f[2] == Fraction(63, 64) and f[3] == Fraction(62, 64)
    for m in range(3, 6):
        assert f[m] == f[m - 1] - f[m - 2] / 64


@pytest.mark.parametrize("variant", ["warmup", "large"])
@pytest.mark.parametrize("k", range(1, 5))
def test_chain_guarantee(variant, k):
    eng = make_engine(variant)
    p = selection_probability_exact(variant, chain(k), ("a", 0))
    gamma = GAMMA_WARMUP if variant == "warmup" else GAMMA_LARGE_FROZEN
    assert p >= guarantee(k, gamma)
    assert p >= eng.bound(k, k)


def test_general_chain_guarantee():
    eng = make_engine("general", kmax=2)
    for k in (1, 2, 3):
        p = selection_probability_exact("general", chain(k), ("a", 0), kmax=2)
        assert p >= eng.bound(k)


@pytest.mark.parametrize("path", CORPUS, ids=lambda p: p.stem)
@pytest.mark.parametrize("variant", VARIANTS)
def test_exact_marginals_on_corpus(path, variant):
    res = enumerate_exact(variant, corpus(path), kmax=2)
    assert res.marginals == [HALF] * len(res.marginals)


@pytest.mark.parametrize("path", CORPUS, ids=lambda p: p.stem)
@pytest.mark.parametrize("variant", ["warmup", "large"])
def test_guarantee_on_corpus(path, variant):
    rounds = corpus(path)
    eng = make_engine(variant)
    for r in rounds:
        for c in r.candidates:
            for y in {lo for lo, _ in c.subset}:
                k, kl = point_counts(rounds, c.advertiser, y)
                p = selection_probability_exact(variant, rounds, (c.advertiser, y))
                assert p >= eng.bound(k, kl)


def test_mixed_stream_uses_large_prefix():
    small = Candidate("a", ((0, 2),), 2, 6)
    big = Candidate("a", ((0, 6),), 6, 6)
    rounds = [RoundPair("i1", big, Candidate("p1", ((0, 1),), 1, 1)),
              RoundPair("i2", small, Candidate("p2", ((0, 1),), 1, 1)),
              RoundPair("i3", big, Candidate("p3", ((0, 1),), 1, 1))]
    assert point_counts(rounds, "a", 1) == (3, 1)
    assert point_counts(rounds, "a", 4) == (2, 2)


@pytest.mark.parametrize("variant", VARIANTS)
def test_monte_carlo_marginals_within_three_sigma(variant):
    rounds = chain(4)
    n = 20000
    firsts, _, _ = run_monte_carlo(variant, rounds, n, seed=3, kmax=2)
    sigma = math.sqrt(n) / 2
    assert all(abs(f - n / 2) <= 3 * sigma for f in firsts)


@pytest.mark.parametrize("variant", VARIANTS)
def test_seed_determinism(variant):
    rounds = corpus(CORPUS[0])
    a = run_monte_carlo(variant, rounds, 50, seed=9, kmax=2)
    b = run_monte_carlo(variant, rounds, 50, seed=9, kmax=2)
    assert a == b


def test_realized_arcs_form_matching():
    rng = random.Random(11)
    for _ in range(200):
        rounds = panoramic_rounds(rng, kmax=4)
        for variant in ("warmup", "large"):
            _, _, arcs = run_monte_carlo(variant, rounds, 5, seed=rng.getrandbits(32))
            assert all(is_matching(a) for a in arcs)


def test_is_matching():
    assert is_matching([(0, 1, "a"), (2, 3, "b")])
    assert not is_matching([(0, 1, "a"), (1, 2, "a")])


def test_first_level_and_group_degree_bounds():
    rng = random.Random(17)
    for _ in range(500):
        kmax = rng.randint(1, 4)
        s = Structure()
        for r in panoramic_rounds(rng, kmax):
            s.observe(r)
        assert all(v <= 2 * kmax for v in s.first_level_counts().values())
        assert all(v <= 8 * kmax for v in s.group_degrees().values())


def test_budget_exceeded():
    with pytest.raises(EnumerationBudgetExceeded):
        enumerate_exact("warmup", chain(4), ("a", 0), budget=50)


def test_unknown_variant():
    with pytest.raises(ValueError):
        make_engine("nope")


@given(st.integers(0, 2**32))
def test_engine_select_matches_monte_carlo(seed):
    rounds = chain(3)
    eng = make_engine("large")
    rng = random.Random(seed)
    sels = [eng.select(r, rng) for r in rounds]
    assert set(sels) <= {1, 2}
    assert is_matching(eng.realized)
