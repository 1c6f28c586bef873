import csv
import json
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from panorama_adwords.allocators import run
from panorama_adwords.evaluation import (REPORT_FIELDS, REPORT_SCHEMA, append_report, dual_upper_bound_sanity,
                                         estimate_ratio, expected_panorama_exact, hoeffding_margin,
                                         offline_opt, offline_opt_product, replay_trials, report_row,
                                         trial_seed, verify_panocs_bound)
from panorama_adwords.factor_lp import GAMMA_LARGE_FROZEN
from panorama_adwords.instance import FAMILIES, generate_instance, instance_from_dict
from panorama_adwords.panocs import GAMMA_WARMUP, chain


def test_unit_pair_opt(unit_pair):
    assert offline_opt(unit_pair).value == 3


def test_unit_pair_scaled():
    inst = instance_from_dict({"scale": 7, "advertisers": [{"id": "a1", "budget": 14}, {"id": "a2", "budget": 14}],
                               "impressions": [{"id": f"i{t}", "bids": {"a1": 7, "a2": 7}} for t in range(3)]})
    assert offline_opt(inst).value == 21


def test_single_advertiser_opt():
    inst = instance_from_dict({"scale": 1, "advertisers": [{"id": "a", "budget": 5}],
                               "impressions": [{"id": f"i{t}", "bids": {"a": 2}} for t in range(4)]})
    assert offline_opt(inst).value == 5


@pytest.mark.parametrize("family", FAMILIES)
def test_opt_oracles_agree(family):
    for seed in range(20):
        inst = generate_instance(family, 3 if family != "upper-triangular" else 4, 4, seed)
        assert offline_opt(inst).value == offline_opt_product(inst)


def test_opt_falls_back_to_bound():
    inst = generate_instance("uniform-random", 4, 6, 0)
    res = offline_opt(inst, limit=10)
    assert res.method == "bound" and res.flagged
    assert res.value >= offline_opt(inst).value


def test_opt_dominates_runs():
    for seed in range(30):
        inst = generate_instance(FAMILIES[seed % 4], 3, 5, seed)
        opt = offline_opt(inst).value
        for algo in ("greedy", "basic", "hybrid", "independent"):
            assert run(algo, inst, seed).P <= opt


def test_replay_matches_full_runs(unit_pair):
    seeds = [trial_seed(3, t) for t in range(40)]
    fast = replay_trials(unit_pair, "independent", seeds)
    for s, o in zip(seeds, fast):
        tr = run("independent", unit_pair, s)
        assert (o.P, o.panorama) == (tr.P, tr.panorama)


def test_estimate_deterministic_and_greedy_bound():
    inst = generate_instance("upper-triangular", 4, 4, 0)
    a = estimate_ratio(inst, "greedy", 1, 5)
    assert a == estimate_ratio(inst, "greedy", 1, 5)
    assert a.ratio >= 0.5


def test_estimate_rejects_zero_trials(unit_pair):
    with pytest.raises(ValueError):
        estimate_ratio(unit_pair, "greedy", 0, 0)


def test_unit_pair_exact_expectation(unit_pair):
    value, trace = expected_panorama_exact(unit_pair, "independent")
    assert value == Fraction(5, 2)
    assert trace.Pbar == trace.D


def test_unit_pair_monte_carlo(unit_pair):
    est = estimate_ratio(unit_pair, "independent", 20000, 1)
    assert est.mean_alg == pytest.approx(11 / 4, rel=0.02)
    assert est.mean_panorama == pytest.approx(5 / 2, rel=0.02)


def test_exact_expectation_dominates_surrogate():
    for seed in range(10):
        inst = generate_instance(FAMILIES[seed % 4], 2, 4, seed)
        for algo in ("basic", "hybrid"):
            value, trace = expected_panorama_exact(inst, algo)
            assert value >= trace.xbar >= trace.Pbar == trace.D


def test_panocs_verify_exact_examples():
    rep = verify_panocs_bound("warmup", chain(3), "exact")
    assert rep.ok
    assert rep.checks[0].probability >= 1 - Fraction(1, 8) * (1 - GAMMA_WARMUP) ** 2
    rep = verify_panocs_bound("large", chain(2), "exact")
    assert rep.ok and rep.checks[0].probability >= 1 - Fraction(1, 4) * (1 - GAMMA_LARGE_FROZEN)
    rep = verify_panocs_bound("independent", chain(4), "exact")
    assert rep.checks[0].probability == 1 - Fraction(1, 16)


def test_panocs_verify_monte_carlo():
    rep = verify_panocs_bound("large", chain(3), "mc", trials=4000, delta=0.01, seed=2)
    assert rep.ok
    assert rep.checks[0].margin == pytest.approx(hoeffding_margin(4000, 0.01))


def test_panocs_verify_bad_mode():
    with pytest.raises(ValueError):
        verify_panocs_bound("large", chain(1), "both")


def test_dual_upper_bound_sanity():
    for seed in range(10):
        inst = generate_instance("all-large", 3, 6, seed)
        tr = run("basic", inst, seed)
        assert dual_upper_bound_sanity(tr, tr.Gamma)
        tr = run("hybrid", generate_instance("mixed", 3, 6, seed), seed)
        assert dual_upper_bound_sanity(tr, tr.Gamma)
    with pytest.raises(ValueError):
        dual_upper_bound_sanity(tr, 0)


@given(st.integers(1, 10**6), st.floats(1e-6, 0.5))
def test_hoeffding_shrinks(n, delta):
    assert hoeffding_margin(4 * n, delta) == pytest.approx(hoeffding_margin(n, delta) / 2)


def test_report_append_has_schema(tmp_path, unit_pair):
    est = estimate_ratio(unit_pair, "greedy", 1, 0)
    row = report_row("ex2", est, "-", Fraction(1, 2), 4)
    path = tmp_path / "r.csv"
    append_report(str(path), [row])
    append_report(str(path), [row])
    lines = path.read_text().splitlines()
    assert lines[0] == REPORT_SCHEMA
    assert lines[1].split(",") == list(REPORT_FIELDS)
    assert len(lines) == 4
    rows = list(csv.DictReader(lines[1:]))
    assert rows[0]["pass"] == "true" and rows[0]["ratio"] == "1.000000"
