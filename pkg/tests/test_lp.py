from __future__ import annotations

import numpy as np
import pytest
from conftest import make_case, make_instance, random_cases

from dynmatch import lp
from dynmatch.model import INCOMPATIBLE, INFINITE_CAPACITY, UNMATCHED_ID, CapacityProfile
from oracles import hungarian_optimum


def caps_of(d):
    return CapacityProfile({**{a: float(c) for a, c in d.items()}, UNMATCHED_ID: INFINITE_CAPACITY})


def test_single_case_takes_the_slot():
    cases = [make_case("c", 1, {"A": 5.0})]
    spec = lp.build_match_lp(cases, caps_of({"A": 1}), UNMATCHED_ID)
    sol = lp.solve_lp(spec)
    assert sol.value == pytest.approx(5.0)
    assert sol.assignment()[("c", "A")] == pytest.approx(1.0)


def test_two_cases_one_slot_spill_to_second_affiliate():
    cases = [
        make_case("c1", 1, {"A": 3.0, "B": 1.0}),
        make_case("c2", 1, {"A": 3.0, "B": 1.0}),
    ]
    spec = lp.build_match_lp(cases, caps_of({"A": 1, "B": 10}), UNMATCHED_ID)
    sol = lp.solve_lp(spec)
    assert sol.value == pytest.approx(4.0)


def test_unit_lp_equals_ilp_value(rng):
    """Transportation integrality: unit sizes make the relaxation exact."""
    for _ in range(25):
        n_aff = int(rng.integers(1, 5))
        affs = [f"A{i}" for i in range(n_aff)]
        cases = random_cases(rng, int(rng.integers(1, 9)), affs)
        caps = caps_of({a: int(rng.integers(0, 5)) for a in affs})
        spec = lp.build_match_lp(cases, caps, UNMATCHED_ID)
        sol = lp.solve_lp(spec)
        assert sol.value == pytest.approx(
            hungarian_optimum(cases, caps, UNMATCHED_ID), abs=1e-6
        )


def test_strong_duality_and_dual_feasibility(rng):
    for _ in range(15):
        affs = ["A", "B", "C"]
        cases = random_cases(rng, 7, affs, max_size=4)
        caps = caps_of({a: int(rng.integers(1, 8)) for a in affs})
        spec = lp.build_match_lp(cases, caps, UNMATCHED_ID)
        for sense in ("maximal", "minimal"):
            d = lp.extremal_duals(spec, sense)
            dual_value = sum(d.case_duals[c.id] for c in cases) + sum(
                d.prices[a] * caps.remaining[a] for a in affs
            )
            assert dual_value == pytest.approx(d.primal_value, abs=1e-6 * (1 + abs(d.primal_value)))
            for case in cases:
                for a, u in case.scores.items():
                    if u is INCOMPATIBLE or isinstance(u, type(INCOMPATIBLE)):
                        continue
                    assert d.case_duals[case.id] >= u - case.size * d.prices[a] - 1e-6
            assert all(p >= -1e-12 for p in d.prices.values())


def test_slack_affiliate_price_is_zero(rng):
    cases = random_cases(rng, 4, ["A", "B"])
    caps = caps_of({"A": 100, "B": 1})  # A can never bind
    spec = lp.build_match_lp(cases, caps, UNMATCHED_ID)
    for sense in ("maximal", "minimal"):
        d = lp.extremal_duals(spec, sense)
        assert d.prices["A"] == pytest.approx(0.0, abs=1e-9)
        assert d.prices[UNMATCHED_ID] == 0.0


def test_fact1_maximal_duals_match_capacity_differences(rng):
    """p = Opt(c) - Opt(c - e) for unit sizes, against the Hungarian oracle."""
    for _ in range(20):
        n_aff = int(rng.integers(1, 5))
        affs = [f"A{i}" for i in range(n_aff)]
        cases = random_cases(rng, int(rng.integers(1, 10)), affs)
        cap_map = {a: int(rng.integers(0, 5)) for a in affs}
        caps = caps_of(cap_map)
        spec = lp.build_match_lp(cases, caps, UNMATCHED_ID)
        d = lp.extremal_duals(spec, "maximal")
        base = hungarian_optimum(cases, caps, UNMATCHED_ID)
        for a in affs:
            if cap_map[a] < 1:
                continue
            reduced = caps_of({**cap_map, a: cap_map[a] - 1})
            expect = base - hungarian_optimum(cases, reduced, UNMATCHED_ID)
            assert d.prices[a] == pytest.approx(expect, abs=1e-6)


def test_minimal_duals_match_capacity_increments(rng):
    """Element-wise minimal prices equal Opt(c + e) - Opt(c) on unit sizes."""
    for _ in range(20):
        n_aff = int(rng.integers(1, 4))
        affs = [f"A{i}" for i in range(n_aff)]
        cases = random_cases(rng, int(rng.integers(1, 9)), affs)
        cap_map = {a: int(rng.integers(0, 4)) for a in affs}
        caps = caps_of(cap_map)
        spec = lp.build_match_lp(cases, caps, UNMATCHED_ID)
        d = lp.extremal_duals(spec, "minimal")
        base = hungarian_optimum(cases, caps, UNMATCHED_ID)
        for a in affs:
            if cap_map[a] < 1:
                continue  # dropped from the LP; price 0 by convention
            grown = caps_of({**cap_map, a: cap_map[a] + 1})
            expect = hungarian_optimum(cases, grown, UNMATCHED_ID) - base
            assert d.prices[a] == pytest.approx(expect, abs=1e-6)


def test_maximal_dominates_minimal_elementwise(rng):
    for _ in range(15):
        affs = ["A", "B", "C"]
        cases = random_cases(rng, 6, affs, max_size=3)
        caps = caps_of({a: int(rng.integers(1, 6)) for a in affs})
        spec = lp.build_match_lp(cases, caps, UNMATCHED_ID)
        dmax = lp.extremal_duals(spec, "maximal")
        dmin = lp.extremal_duals(spec, "minimal")
        for a in dmax.prices:
            assert dmax.prices[a] >= dmin.prices[a] - 1e-6


def test_elementwise_verification_agrees_with_sum_objective(rng):
    for _ in range(8):
        affs = ["A", "B"]
        cases = random_cases(rng, 6, affs, max_size=2)
        caps = caps_of({a: int(rng.integers(1, 5)) for a in affs})
        spec = lp.build_match_lp(cases, caps, UNMATCHED_ID)
        for sense in ("maximal", "minimal"):
            plain = lp.extremal_duals(spec, sense)
            checked = lp.extremal_duals(spec, sense, verify_elementwise=True)
            for a in plain.prices:
                assert plain.prices[a] == pytest.approx(checked.prices[a], abs=1e-6)


def test_case_order_does_not_change_value_or_prices(rng):
    affs = ["A", "B", "C"]
    cases = random_cases(rng, 8, affs, max_size=3)
    caps = caps_of({"A": 4, "B": 2, "C": 6})
    spec = lp.build_match_lp(cases, caps, UNMATCHED_ID)
    base_value = lp.solve_lp(spec).value
    base = {s: lp.extremal_duals(spec, s).prices for s in ("maximal", "minimal")}
    perm = list(cases)
    rng.shuffle(perm)
    spec2 = lp.build_match_lp(perm, caps, UNMATCHED_ID)
    assert lp.solve_lp(spec2).value == pytest.approx(base_value, abs=1e-8)
    for sense in ("maximal", "minimal"):
        got = lp.extremal_duals(spec2, sense).prices
        for a in base[sense]:
            assert got[a] == pytest.approx(base[sense][a], abs=1e-6)


def test_aggregation_preserves_value_and_prices(rng):
    affs = ["A", "B"]
    base_case = make_case("t", 2, {"A": 1.2, "B": 0.4})
    cases = [make_case(f"t{i}", 2, {"A": 1.2, "B": 0.4}) for i in range(5)]
    cases += random_cases(rng, 4, affs, max_size=2)
    caps = caps_of({"A": 5, "B": 4})
    plain = lp.build_match_lp(cases, caps, UNMATCHED_ID, dedupe=False)
    merged = lp.build_match_lp(cases, caps, UNMATCHED_ID, dedupe=True)
    assert merged.n_case_rows < plain.n_case_rows
    assert lp.solve_lp(merged).value == pytest.approx(lp.solve_lp(plain).value, abs=1e-8)
    for sense in ("maximal", "minimal"):
        a_prices = lp.extremal_duals(plain, sense).prices
        b_prices = lp.extremal_duals(merged, sense).prices
        for a in a_prices:
            assert b_prices[a] == pytest.approx(a_prices[a], abs=1e-6)


def test_zero_capacity_affiliate_is_dropped():
    cases = [make_case("c", 2, {"A": 1.0, "B": 1.5})]
    spec = lp.build_match_lp(cases, caps_of({"A": 0, "B": 2}), UNMATCHED_ID)
    assert spec.cap_ids == ["B"]
    sol = lp.solve_lp(spec)
    assert sol.value == pytest.approx(1.5)
    d = lp.extremal_duals(spec, "maximal")
    assert d.prices["A"] == 0.0  # reported by convention, never usable


def test_empty_problem():
    spec = lp.build_match_lp([], caps_of({"A": 3}), UNMATCHED_ID)
    sol = lp.solve_lp(spec)
    assert sol.value == 0.0
    d = lp.extremal_duals(spec, "maximal")
    assert all(abs(p) <= 1e-6 for p in d.prices.values())
