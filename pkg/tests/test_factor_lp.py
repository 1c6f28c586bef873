from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from panorama_adwords.factor_lp import (GAMMA_LARGE_FROZEN, CertificationError, Expr, Infeasible, LinearProgram,
                                        Unbounded, build_basic_lp, build_hybrid_lp, certify_basic_table,
                                        certify_hybrid_table, closed_form_basic, closed_form_tail_identity,
                                        dx_basic, export_table, gamma_closed_form, gamma_general_frozen,
                                        gamma_truncated, hybrid_dx, solve, solve_hybrid, table_from_json,
                                        table_to_json, tail_x)

scipy_optimize = pytest.importorskip("scipy.optimize")


def scipy_value(lp: LinearProgram) -> float:
    """Independent optimum from HiGHS."""
    n = lp.n
    c = np.zeros(n)
    for j, v in lp.objective.items():
        c[j] = -float(v)
    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    for r in lp.rows:
        row = np.zeros(n)
        for j, v in r.coefs.items():
            row[j] = float(v)
        if r.sense == "=":
            A_eq.append(row)
            b_eq.append(float(r.rhs))
        elif r.sense == "<=":
            A_ub.append(row)
            b_ub.append(float(r.rhs))
        else:
            A_ub.append(-row)
            b_ub.append(-float(r.rhs))
    bounds = [(None, None) if j in lp.free else (0, None) for j in range(n)]
    res = scipy_optimize.linprog(c, A_ub=A_ub or None, b_ub=b_ub or None, A_eq=A_eq or None,
                                 b_eq=b_eq or None, bounds=bounds, method="highs")
    assert res.status == 0, res.message
    return -res.fun


def toy() -> LinearProgram:
    # max x + y  s.t.  x + 2y <= 1,  3x + y <= 1
    lp = LinearProgram(["x", "y"], {0: Fraction(1), 1: Fraction(1)})
    x, y = Expr.var(0), Expr.var(1)
    lp.le(x + 2 * y, 1, "a")
    lp.le(3 * x + y, 1, "b")
    return lp


def test_toy_lp_exact():
    sol = solve(toy())
    assert sol.objective == Fraction(3, 5)
    assert sol.values == [Fraction(1, 5), Fraction(2, 5)]
    assert sol.max_violation == 0 and sol.certified


def test_infeasible_detected():
    lp = LinearProgram(["x"], {0: Fraction(1)})
    lp.ge(Expr.var(0), 2)
    lp.le(Expr.var(0), 1)
    with pytest.raises(Infeasible):
        solve(lp)


def test_unbounded_detected():
    lp = LinearProgram(["x", "y"], {0: Fraction(1)})
    lp.ge(Expr.var(0) - Expr.var(1), 0)
    with pytest.raises(Unbounded):
        solve(lp)


@given(st.lists(st.lists(st.integers(0, 6), min_size=3, max_size=3), min_size=1, max_size=5),
       st.lists(st.integers(1, 9), min_size=5, max_size=5),
       st.lists(st.integers(-3, 5), min_size=3, max_size=3))
def test_random_packing_lps_match_oracle(rows, rhs, obj):
    lp = LinearProgram(["x0", "x1", "x2"], {j: Fraction(c) for j, c in enumerate(obj)})
    for i, coefs in enumerate(rows):
        e = Expr({j: Fraction(c) for j, c in enumerate(coefs)})
        lp.le(e, rhs[i], f"r{i}")
    for j in range(3):
        lp.le(Expr.var(j), 10, f"box{j}")
    sol = solve(lp)
    assert sol.max_violation == 0
    assert float(sol.objective) == pytest.approx(scipy_value(lp), abs=1e-9)


@pytest.mark.parametrize("gamma", [GAMMA_LARGE_FROZEN, Fraction(100, 1944), Fraction(0), Fraction(1, 64)])
def test_closed_form_table_certifies(gamma):
    t = closed_form_basic(gamma)
    assert t.Gamma == (3 + 2 * gamma) / (6 + 3 * gamma)
    assert certify_basic_table(t, K=64) == 0


def test_closed_form_value_range():
    G = gamma_closed_form(GAMMA_LARGE_FROZEN)
    assert Fraction(5041, 10000) < G < Fraction(5042, 10000)


def test_closed_form_tight_rows():
    from panorama_adwords.factor_lp import basic_constraint_values
    vals = basic_constraint_values(closed_form_basic(GAMMA_LARGE_FROZEN), 30)
    assert all(lhs == rhs for _, lhs, rhs in vals["not_to_a"])
    assert all(lhs == rhs for _, lhs, rhs in vals["at_limit"])


@given(st.fractions(min_value=0, max_value=Fraction(1, 2)))
def test_tail_identity_vanishes(gamma):
    assert closed_form_tail_identity(gamma) == 0


@given(st.fractions(min_value=0, max_value=Fraction(1, 2)), st.integers(0, 30))
def test_tail_is_sum_of_increments(gamma, k):
    assert sum(dx_basic(l, gamma) for l in range(k + 1, 80)) == pytest.approx(float(tail_x(k, gamma)), abs=1e-12)
    if k >= 1:
        assert tail_x(k - 1, gamma) - tail_x(k, gamma) == dx_basic(k, gamma)


def test_general_bid_truncated_ratio():
    g = gamma_general_frozen(18)
    assert g == Fraction(1245, 100000) / 18
    G = gamma_truncated(g, 18)
    assert G > Fraction(50005, 100000) + Fraction(1, 10**7)
    t = closed_form_basic(g, kmax=18)
    assert t.Gamma == G
    assert certify_basic_table(t, K=40) >= 0


@pytest.mark.parametrize("mode", ["closed-tail", "truncated"])
def test_basic_lp_matches_closed_form_and_oracle(mode):
    lp = build_basic_lp(GAMMA_LARGE_FROZEN, 12, mode)
    sol = solve(lp)
    assert sol.certified
    ref = gamma_closed_form(GAMMA_LARGE_FROZEN)
    if mode == "closed-tail":
        assert abs(sol.objective - ref) < Fraction(1, 10**10)
    else:
        assert sol.objective <= ref
    assert float(sol.objective) == pytest.approx(scipy_value(lp), abs=1e-8)
    table = export_table(sol, "basic", gamma=GAMMA_LARGE_FROZEN)
    assert table.Gamma == sol.objective


def test_basic_lp_large_kmax():
    sol = solve(build_basic_lp(GAMMA_LARGE_FROZEN, 40, "closed-tail"))
    assert sol.max_violation == 0
    assert abs(float(sol.objective) - float(gamma_closed_form(GAMMA_LARGE_FROZEN))) < 1e-9


def test_basic_lp_rejects_mode():
    with pytest.raises(ValueError):
        build_basic_lp(GAMMA_LARGE_FROZEN, 5, "weird")


def test_hybrid_increments():
    g = GAMMA_LARGE_FROZEN
    assert hybrid_dx("RS", 1, g) == Fraction(1, 2) - g / 4
    assert hybrid_dx("RS", 2, g) + hybrid_dx("RS", 1, g) == Fraction(1, 2) - g / 4 + Fraction(1, 4)
    assert hybrid_dx("L", 3, g) == Fraction(1, 8)
    assert hybrid_dx("DR", 1, g) == 1
    assert hybrid_dx("L", 0, g) == 0
    with pytest.raises(ValueError):
        hybrid_dx("XX", 1, g)


@pytest.mark.parametrize("kmax", [2, 5, 10])
def test_hybrid_small_kmax_matches_oracle(kmax):
    lp = build_hybrid_lp(GAMMA_LARGE_FROZEN, kmax)
    sol = solve(lp)
    assert sol.certified
    assert float(sol.objective) == pytest.approx(scipy_value(lp), abs=1e-8)


def test_hybrid_monotone_in_kmax():
    vals = [solve(build_hybrid_lp(GAMMA_LARGE_FROZEN, k)).objective for k in (2, 5, 10, 20)]
    assert vals == sorted(vals)
    assert vals[-1] >= Fraction(5016, 10000)


def test_hybrid_export_round_trip():
    sol, table = solve_hybrid(6)
    worst, _ = certify_hybrid_table(table)
    assert worst >= 0
    assert table.Gamma <= sol.objective
    back = table_from_json(table_to_json(table))
    assert back == table


def test_tampered_hybrid_table_rejected():
    _, table = solve_hybrid(4)
    d = table.to_json()
    d["Gamma"] = "1"
    with pytest.raises(CertificationError):
        table_from_json(d)


def test_hybrid_infeasible_variant():
    with pytest.raises(Infeasible):
        solve(build_hybrid_lp(GAMMA_LARGE_FROZEN, 3, limit_extra=10))


def test_basic_table_json_round_trip():
    t = closed_form_basic(GAMMA_LARGE_FROZEN, kmax=8)
    assert table_from_json(table_to_json(t)) == t


def test_lp_text_export():
    text = toy().to_text()
    assert text.startswith("Maximize") and "Subject To" in text and text.rstrip().endswith("End")
