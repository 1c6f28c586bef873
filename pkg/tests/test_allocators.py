import json
import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from panorama_adwords.allocators import (ALGOS, AssignmentRecord, BasicRule, LedgerError, MsvvAllocator,
                                         PrimalDualAllocator, certify_trace, default_hybrid_table,
                                         dual_feasibility_check, hybrid_xbar, make_allocator, msvv_alpha,
                                         msvv_beta, realized_payments, run, trace_dual_feasibility,
                                         trace_from_json)
from panorama_adwords.evaluation import offline_opt
from panorama_adwords.factor_lp import GAMMA_LARGE_FROZEN, closed_form_basic, gamma_closed_form
from panorama_adwords.instance import FAMILIES, generate_instance, instance_from_dict
from panorama_adwords.panocs import make_engine
from panorama_adwords.panorama import Segment

G = GAMMA_LARGE_FROZEN


def one_advertiser(budget=10, bids=(4, 4, 4)):
    return instance_from_dict({"scale": 1, "advertisers": [{"id": "a", "budget": budget}],
                               "impressions": [{"id": f"i{t}", "bids": {"a": b}} for t, b in enumerate(bids)]})


def basic_alloc(inst, table=None, seed=0):
    table = table or closed_form_basic(G)
    return PrimalDualAllocator(inst, BasicRule(table), make_engine("large"), random.Random(seed))


def test_fresh_full_bid_offers():
    inst = one_advertiser(10, (10,))
    t = closed_form_basic(G)
    alloc = basic_alloc(inst, t)
    r = alloc.offer_randomized("a", 10)
    assert r == 10 * t.beta(1)
    assert t.beta(1) == gamma_closed_form(G) / 2
    assert abs(float(t.beta(1)) - 0.25209) < 1e-5
    assert alloc.offer_randomized("a", 0) == 0
    direct = sum(float(t.beta(l)) for l in range(1, 200))
    assert float(alloc.offer_deterministic("a", 10)) == pytest.approx(10 * direct, rel=1e-14)


def test_truncated_table_deterministic_offer_vanishes_at_kmax():
    t = closed_form_basic(G, kmax=3)
    assert t.beta_tail(3) == 0 and t.alpha_tail(3) == 0


@given(st.integers(0, 2**32), st.sampled_from(["basic", "hybrid"]))
def test_random_offer_dominates_half_deterministic(seed, algo):
    inst = generate_instance("mixed", 3, 8, seed % 1000)
    alloc = make_allocator(algo, inst, seed)
    for imp in inst.impressions:
        for a in inst.advertiser_ids:
            b = imp.bid(a)
            if b:
                assert alloc.offer_deterministic(a, b) <= 2 * alloc.offer_randomized(a, b)
        alloc.records.append(alloc.step(imp))


def test_single_advertiser_is_deterministic():
    tr = basic_alloc(one_advertiser()).run()
    assert {r.kind for r in tr.records} == {"deterministic"}


def test_ledger_invariant_each_step():
    inst = generate_instance("uniform-random", 3, 10, 4)
    alloc = make_allocator("basic", inst, 1)
    for imp in inst.impressions:
        alloc.records.append(alloc.step(imp))
        assert alloc.Pbar == alloc.D
        assert alloc.xbar_total() >= alloc.Pbar


def test_alpha_reconstruction_matches():
    for algo in ("basic", "hybrid"):
        alloc = make_allocator(algo, generate_instance("mixed", 3, 9, 12), 5)
        tr = alloc.run()
        assert alloc.reconstruct_alpha() == tr.alpha


def test_hybrid_xbar_increments():
    def seg(k, kl, half="R"):
        return hybrid_xbar(Segment(0, 1, k=k, kl=kl), half, G)
    assert seg(1, 0) == Fraction(1, 2) - G / 4
    # small bid then large bid on the same right-half point
    assert seg(2, 0) - seg(1, 0) == (1 + G) / 4
    for k in range(1, 6):
        assert seg(k, 0, "L") - seg(k - 1, 0, "L") == Fraction(1, 2**k)


def test_hybrid_first_small_right_point_in_run():
    # budget 4, bid 1: one small semi on the right half is impossible first, so fill the left first
    inst = instance_from_dict({"scale": 1, "advertisers": [{"id": "a", "budget": 4}, {"id": "b", "budget": 4}],
                               "impressions": [{"id": f"i{t}", "bids": {"a": 1, "b": 1}} for t in range(3)]})
    alloc = make_allocator("hybrid", inst, 0)
    before = alloc.xbar_total()
    recs = [alloc.step(i) for i in inst.impressions]
    assert all(r.kind == "randomized" for r in recs)
    assert alloc.xbar_total() - before == 4 * Fraction(1, 2) + 2 * (Fraction(1, 2) - G / 4)


def test_msvv_closed_form():
    assert msvv_alpha(Fraction(1, 2)) == Fraction(2, 9)
    assert msvv_alpha(1) == Fraction(5, 9)
    assert msvv_beta(1) == Fraction(4, 9)
    h = Fraction(1, 10**6)
    assert (msvv_beta(h) - msvv_beta(0)) / h == Fraction(5, 9)


def test_msvv_zero_bids_unassigned():
    inst = instance_from_dict({"scale": 1, "advertisers": [{"id": "a", "budget": 4}],
                               "impressions": [{"id": "i", "bids": {}}]})
    tr = MsvvAllocator(inst).run()
    assert tr.records[0].kind == "none" and tr.records[0].beta == 0


def test_msvv_warns_on_large_bids():
    with pytest.warns(UserWarning):
        MsvvAllocator(one_advertiser(4, (3,)))


def test_greedy_ties_to_lower_index(unit_pair):
    tr = run("greedy", unit_pair)
    assert [r.selected for r in tr.records] == ["a1", "a1", "a2"]


def test_greedy_exhausted_budgets():
    tr = run("greedy", one_advertiser(4, (4, 2)))
    assert tr.records[1].kind == "none"


def test_greedy_half_of_opt():
    for seed in range(150):
        inst = generate_instance(FAMILIES[seed % 4], 3, 5, seed)
        assert 2 * run("greedy", inst).P >= offline_opt(inst).value


@pytest.mark.filterwarnings("ignore::UserWarning")
def test_payments_capped_by_budget():
    for seed in range(50):
        inst = generate_instance("uniform-random", 3, 8, seed)
        for algo in ALGOS:
            tr = run(algo, inst, seed)
            assert tr.P <= sum(a.budget for a in inst.advertisers)
            assert tr.P >= tr.panorama


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("algo", ["basic", "hybrid", "independent"])
def test_certify_clean_runs(family, algo):
    for seed in range(8):
        tr = run(algo, generate_instance(family, 3, 7, seed), seed)
        assert certify_trace(tr) == []
        assert certify_trace(trace_from_json(tr.dump())) == []


def test_certify_catches_tampering():
    tr = run("basic", generate_instance("uniform-random", 3, 6, 1), 2)
    d = json.loads(tr.dump())
    d["records"][0]["beta"] = "1000"
    assert certify_trace(trace_from_json(d))


def test_dual_feasibility_basic_all_large():
    for seed in range(25):
        inst = generate_instance("all-large", 3, 8, seed)
        slack, _, _ = trace_dual_feasibility(run("basic", inst, seed))
        assert slack >= 0


def test_dual_feasibility_hybrid_mixed():
    for seed in range(25):
        inst = generate_instance("mixed", 3, 8, seed)
        tr = run("hybrid", inst, seed)
        assert tr.Gamma >= Fraction(5016, 10000)
        slack, _, _ = trace_dual_feasibility(tr)
        assert slack >= 0


def test_empty_subset_slack_is_alpha():
    inst = one_advertiser(10, (4,))
    slack, a, S = dual_feasibility_check(inst, {"a": Fraction(3)}, {"i0": Fraction(0)}, Fraction(1, 2))
    assert (slack, S) == (1, ["i0"])
    slack, _, S = dual_feasibility_check(inst, {"a": Fraction(3)}, {"i0": Fraction(5)}, Fraction(1, 2))
    assert (slack, S) == (3, [])


def test_ledger_error_on_bad_table():
    bad = closed_form_basic(G)
    bad.dbeta = (bad.dbeta[0] + 1,) + bad.dbeta[1:]
    with pytest.raises(LedgerError):
        basic_alloc(generate_instance("all-large", 2, 4, 0), bad).run()


def test_hybrid_table_cached_and_certified():
    assert default_hybrid_table() is default_hybrid_table()


def test_unknown_algorithm():
    with pytest.raises(ValueError):
        make_allocator("nope", one_advertiser())


def test_realized_payments_example():
    inst = one_advertiser(2, (1, 1, 1))
    recs = [AssignmentRecord(f"i{t}", "deterministic", [("a", s)], "a") for t, s in
            enumerate((((0, 1),), ((1, 2),), ((0, 1),)))]
    assert realized_payments(inst, recs) == (2, 2)
