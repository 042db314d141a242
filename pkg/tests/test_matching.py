from __future__ import annotations

import numpy as np
import pytest
from conftest import make_case, make_instance, random_cases

from dynmatch import matching
from dynmatch.model import (
    INCOMPATIBLE,
    INFINITE_CAPACITY,
    UNMATCHED_ID,
    CapacityProfile,
)
from oracles import enumerate_adjusted_optimum, enumerate_optimum


def caps_of(d):
    return CapacityProfile({**{a: float(c) for a, c in d.items()}, UNMATCHED_ID: INFINITE_CAPACITY})


def test_single_case_goes_to_best_affiliate():
    case = make_case("c", 2, {"A": 1.0, "B": 1.6})
    out = matching.solve_ilp([case], caps_of({"A": 3, "B": 2}), UNMATCHED_ID)
    assert out.placement == {"c": "B"}
    assert out.value == pytest.approx(1.6)
    assert out.matched_refugees == 2
    assert out.consumed == {"B": 2}


def test_negative_adjusted_scores_send_case_to_sink():
    case = make_case("c", 2, {"A": 1.0})
    out = matching.solve_ilp(
        [case], caps_of({"A": 3}), UNMATCHED_ID, potentials={"A": 5.0}
    )
    assert out.placement == {"c": UNMATCHED_ID}
    assert out.value == 0.0


def test_ilp_matches_enumeration(rng):
    for _ in range(80):
        n_aff = int(rng.integers(1, 4))
        affs = [f"A{i}" for i in range(n_aff)]
        cases = random_cases(rng, int(rng.integers(1, 7)), affs, max_size=4, incompat_rate=0.15)
        caps = caps_of({a: int(rng.integers(0, 9)) for a in affs})
        got = matching.solve_ilp(cases, caps, UNMATCHED_ID)
        want = enumerate_optimum(cases, caps, UNMATCHED_ID)
        assert got.value == pytest.approx(want, abs=1e-9)


def test_ilp_with_potentials_matches_adjusted_enumeration(rng):
    for _ in range(25):
        affs = ["A", "B", "C"]
        cases = random_cases(rng, 5, affs, max_size=3, incompat_rate=0.1)
        caps = caps_of({a: int(rng.integers(1, 6)) for a in affs})
        pot = {a: float(np.round(rng.random() * 0.4, 6)) for a in affs}
        eps = 1e-7
        got = matching.solve_ilp(cases, caps, UNMATCHED_ID, potentials=pot, epsilon_matched=eps)
        want = enumerate_adjusted_optimum(cases, caps, UNMATCHED_ID, pot, eps)
        assert got.objective == pytest.approx(want, abs=1e-9)


def test_opt_of_empty_and_all_incompatible():
    assert matching.opt([], caps_of({"A": 2}), UNMATCHED_ID) == 0.0
    cases = [make_case("c", 1, {"A": INCOMPATIBLE})]
    assert matching.opt(cases, caps_of({"A": 2}), UNMATCHED_ID) == 0.0


def test_ilp_value_monotone_in_capacity(rng):
    for _ in range(10):
        affs = ["A", "B"]
        cases = random_cases(rng, 5, affs, max_size=3)
        lo = {a: int(rng.integers(0, 4)) for a in affs}
        hi = {a: lo[a] + int(rng.integers(0, 3)) for a in affs}
        v_lo = matching.opt(cases, caps_of(lo), UNMATCHED_ID)
        v_hi = matching.opt(cases, caps_of(hi), UNMATCHED_ID)
        assert v_hi >= v_lo - 1e-9


def test_epsilon_bonus_keeps_value_and_grows_matching(rng):
    for _ in range(20):
        affs = ["A", "B"]
        cases = random_cases(rng, 5, affs, max_size=3, incompat_rate=0.1)
        # a couple of zero-score cases that only the bonus will place
        cases.append(make_case("z1", 1, {"A": 0.0, "B": 0.0}))
        cases.append(make_case("z2", 2, {"A": 0.0, "B": 0.0}))
        caps = caps_of({a: int(rng.integers(2, 7)) for a in affs})
        eps = matching.default_epsilon(cases)
        plain = matching.solve_ilp(cases, caps, UNMATCHED_ID)
        bonus = matching.solve_ilp(cases, caps, UNMATCHED_ID, epsilon_matched=eps)
        assert bonus.value == pytest.approx(plain.value, abs=1e-9)
        assert bonus.matched_refugees >= plain.matched_refugees
        assert bonus.objective - eps * bonus.matched_refugees == pytest.approx(
            bonus.value, abs=1e-9
        )


def test_unit_sizes_make_lp_exact(rng):
    from dynmatch import lp

    for _ in range(15):
        affs = ["A", "B", "C"]
        cases = random_cases(rng, 7, affs)
        caps = caps_of({a: int(rng.integers(0, 5)) for a in affs})
        spec = lp.build_match_lp(cases, caps, UNMATCHED_ID)
        assert lp.solve_lp(spec).value == pytest.approx(
            matching.opt(cases, caps, UNMATCHED_ID), abs=1e-6
        )


def test_hindsight_identical_without_zero_score_cases(rng):
    cases = random_cases(rng, 6, ["A", "B"], max_size=3)
    cases = [c for c in cases if max(v for a, v in c.scores.items() if a != UNMATCHED_ID and not isinstance(v, type(INCOMPATIBLE))) > 0]
    inst = make_instance({"A": 5, "B": 4}, cases)
    base = matching.solve_ilp(list(inst.cases), inst.final_caps, UNMATCHED_ID)
    h = matching.hindsight_optimum(inst, inst.final_caps)
    assert h.value == pytest.approx(base.value, abs=1e-9)
    assert h.matched_refugees >= base.matched_refugees


def test_hindsight_places_zero_score_case_in_free_slot():
    cases = [
        make_case("c1", 1, {"A": 0.9}, index=1, batch=1),
        make_case("z", 1, {"A": 0.0}, index=2, batch=2),
    ]
    inst = make_instance({"A": 2}, cases)
    h = matching.hindsight_optimum(inst, inst.final_caps)
    assert h.placement["z"] == "A"
    assert h.value == pytest.approx(0.9)
    assert h.matched_refugees == 2


def test_hindsight_augmentation_properties(rng):
    for _ in range(25):
        affs = ["A", "B"]
        cases = random_cases(rng, 5, affs, max_size=3, incompat_rate=0.2)
        for j in range(int(rng.integers(0, 3))):
            cases.append(make_case(f"z{j}", int(rng.integers(1, 3)), {a: 0.0 for a in affs}))
        for i, c in enumerate(cases):
            object.__setattr__(c, "arrival_index", i + 1)
            object.__setattr__(c, "batch_id", i + 1)
        inst = make_instance({a: int(rng.integers(1, 7)) for a in affs}, cases)
        base = matching.solve_ilp(list(inst.cases), inst.final_caps, UNMATCHED_ID)
        h = matching.hindsight_optimum(inst, inst.final_caps)
        assert h.value == pytest.approx(base.value, abs=1e-9)
        assert h.matched_refugees >= base.matched_refugees


def test_determinism(rng):
    affs = ["A", "B", "C"]
    cases = random_cases(rng, 8, affs, max_size=3)
    caps = caps_of({"A": 4, "B": 3, "C": 5})
    first = matching.solve_ilp(cases, caps, UNMATCHED_ID)
    for _ in range(3):
        again = matching.solve_ilp(cases, caps, UNMATCHED_ID)
        assert again.placement == first.placement
        assert again.value == first.value
