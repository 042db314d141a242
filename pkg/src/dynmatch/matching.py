"""Exact integer matching: branch and bound on the LP relaxation, plus the
hindsight-optimum accounting used as the evaluation benchmark."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass

import numpy as np

from . import lp
from .model import CapacityProfile, Case, Incompatible

INT_TOL = 1e-7
BOUND_TOL = 1e-9


@dataclass
class Assignment:
    """An integral placement of cases with score accounting.

    `value` is the raw employment total; `objective` is whatever the solve
    optimized (adjusted scores plus any matched bonus).
    """

    placement: dict[str, str]
    value: float
    objective: float
    consumed: dict[str, int]
    matched_refugees: int

    @classmethod
    def from_placement(cls, cases: list[Case], placement: dict[str, str], sink_id: str,
                       objective: float | None = None) -> "Assignment":
        value = 0.0
        consumed: dict[str, int] = {}
        matched = 0
        by_id = {c.id: c for c in cases}
        for cid, aff in placement.items():
            case = by_id[cid]
            u = case.scores[aff]
            if isinstance(u, Incompatible):
                raise ValueError(f"case {cid!r} placed at incompatible affiliate {aff!r}")
            value += u
            if aff != sink_id:
                consumed[aff] = consumed.get(aff, 0) + case.size
                matched += case.size
        return cls(placement, value, value if objective is None else objective, consumed, matched)


def default_epsilon(cases) -> float:
    """Matched-bonus weight small enough to never trade employment away."""
    return 1e-6 / (1.0 + sum(c.size for c in cases))


def _adjusted(case, aff, sink_id, potentials, epsilon) -> float:
    if aff == sink_id:
        return 0.0
    return case.scores[aff] - case.size * potentials.get(aff, 0.0) + epsilon * case.size


def _objective_of(placement, by_id, sink_id, potentials, epsilon) -> float:
    return sum(_adjusted(by_id[cid], aff, sink_id, potentials, epsilon)
               for cid, aff in placement.items())


def solve_ilp(
    cases: list[Case],
    caps: CapacityProfile,
    sink_id: str,
    *,
    potentials: dict[str, float] | None = None,
    epsilon_matched: float = 0.0,
    tie_break: list[str] | None = None,
) -> Assignment:
    """Maximize sum of (u - s*p + eps*s on non-sink) over integral placements.

    Deterministic: branching follows the canonical (case order, affiliate id)
    column order, and the single-case fast path breaks ties by `tie_break`
    (sorted affiliate ids when not given).
    """
    if not cases:
        return Assignment({}, 0.0, 0.0, {}, 0)
    pot = potentials or {}
    if len(cases) == 1:
        return _solve_single(cases[0], caps, sink_id, pot, epsilon_matched, tie_break)

    by_id = {c.id: c for c in cases}
    spec = lp.build_match_lp(cases, caps, sink_id, potentials=pot, epsilon=epsilon_matched)
    sol = lp.solve_lp(spec)
    incumbent = _round_lp(cases, caps, sink_id, pot, epsilon_matched, spec, sol)
    _local_improve(cases, caps, sink_id, pot, epsilon_matched, incumbent)
    z = _objective_of(incumbent, by_id, sink_id, pot, epsilon_matched)

    # alternate budgeted searches with reduced-cost refiltering: every
    # incumbent improvement tightens the filter, which shrinks the next tree
    budget = 256
    while sol.value > z + BOUND_TOL:
        reduced = _reduced_cost_fix(cases, spec, sol, z)
        best, proved = _branch_and_bound(
            reduced, caps, sink_id, pot, epsilon_matched,
            floor_obj=z, warm_hint=incumbent, max_pops=budget,
        )
        if best is not None:
            incumbent = best
            _local_improve(cases, caps, sink_id, pot, epsilon_matched, incumbent)
            z = max(z, _objective_of(incumbent, by_id, sink_id, pot, epsilon_matched))
        if proved:
            break
        budget *= 4
    return _finish_assignment(cases, incumbent, sink_id, pot, epsilon_matched)


def _solve_single(case, caps, sink_id, potentials, epsilon, tie_break) -> Assignment:
    order = tie_break if tie_break is not None else sorted(case.scores)
    best_aff = sink_id
    best_adj = 0.0
    for aff in order:
        if aff == sink_id or aff not in case.scores:
            continue
        u = case.scores[aff]
        if isinstance(u, Incompatible) or not caps.fits(aff, case.size):
            continue
        adj = u - case.size * potentials.get(aff, 0.0) + epsilon * case.size
        if adj > best_adj:
            best_adj = adj
            best_aff = aff
    placement = {case.id: best_aff}
    return Assignment.from_placement([case], placement, sink_id, objective=best_adj)


def _round_lp(cases, caps, sink_id, potentials, epsilon, spec, sol) -> dict[str, str]:
    """LP-guided rounding to a feasible placement: follow the largest LP
    weight per case where it fits, otherwise the best fitting affiliate."""
    pref: dict[str, tuple[float, str]] = {}
    for j, w in enumerate(sol.x):
        i = spec.col_case[j]
        cid = spec.row_case_ids[i][0]
        if cid not in pref or w > pref[cid][0]:
            pref[cid] = (w, spec.col_aff_id[j])
    remaining = caps.copy()
    placement: dict[str, str] = {}
    order = sorted(cases, key=lambda c: -pref.get(c.id, (0.0, sink_id))[0])
    for case in order:
        chosen = sink_id
        best = 0.0
        w, aff = pref.get(case.id, (0.0, sink_id))
        if aff != sink_id and remaining.fits(aff, case.size):
            chosen = aff
        else:
            for a in sorted(case.scores):
                u = case.scores[a]
                if a == sink_id or isinstance(u, Incompatible) or not remaining.fits(a, case.size):
                    continue
                adj = u - case.size * potentials.get(a, 0.0) + epsilon * case.size
                if adj > best:
                    best = adj
                    chosen = a
        placement[case.id] = chosen
        if chosen != sink_id:
            remaining.consume(chosen, case.size)
    return placement


def _local_improve(cases, caps, sink_id, potentials, epsilon, placement,
                   max_rounds: int = 8) -> None:
    """In-place 1-move / 1-eject improvement of a feasible placement.

    A case may move to an affiliate with room, or displace one occupant to
    that occupant's best remaining alternative (possibly the sink) when the
    net adjusted-score change is positive.  Cheap, and it typically lands on
    the ILP optimum for transportation-like instances, which is what lets
    reduced-cost fixing prune the branch-and-bound tree."""
    by_id = {c.id: c for c in cases}
    remaining = caps.copy()
    occupants: dict[str, list[str]] = {}
    for cid, aff in placement.items():
        if aff != sink_id:
            remaining.consume(aff, by_id[cid].size)
            occupants.setdefault(aff, []).append(cid)

    def adj(cid: str, aff: str) -> float:
        return _adjusted(by_id[cid], aff, sink_id, potentials, epsilon)

    def best_alt(cid: str, banned: str) -> tuple[float, str]:
        case = by_id[cid]
        best_a, best_v = sink_id, 0.0
        for a in sorted(case.scores):
            if a in (sink_id, banned) or isinstance(case.scores[a], Incompatible):
                continue
            if not remaining.fits(a, case.size):
                continue
            v = adj(cid, a)
            if v > best_v:
                best_v, best_a = v, a
        return best_v, best_a

    for _ in range(max_rounds):
        improved = False
        for case in cases:
            cid = case.id
            cur = placement[cid]
            cur_v = adj(cid, cur)
            best_gain = 1e-12
            best_op = None
            for a in sorted(case.scores):
                if a in (sink_id, cur) or isinstance(case.scores[a], Incompatible):
                    continue
                gain0 = adj(cid, a) - cur_v
                if gain0 <= best_gain:
                    continue
                if remaining.fits(a, case.size):
                    best_gain = gain0
                    best_op = (a, None)
                elif remaining[a] != float("inf"):
                    need = case.size - remaining[a]
                    for occ in occupants.get(a, ()):  # eject one occupant
                        if occ == cid or by_id[occ].size < need:
                            continue
                        alt_v, alt_a = best_alt(occ, a)
                        net = gain0 - (adj(occ, a) - alt_v)
                        if net > best_gain:
                            best_gain = net
                            best_op = (a, (occ, alt_a))
            if best_op is None:
                continue
            a, eject = best_op
            if eject is not None:
                occ, alt_a = eject
                occupants[a].remove(occ)
                remaining.remaining[a] = min(
                    caps.remaining[a], remaining[a] + by_id[occ].size
                )
                placement[occ] = alt_a
                if alt_a != sink_id:
                    remaining.consume(alt_a, by_id[occ].size)
                    occupants.setdefault(alt_a, []).append(occ)
            if cur != sink_id:
                occupants[cur].remove(cid)
                remaining.remaining[cur] = min(
                    caps.remaining[cur], remaining[cur] + case.size
                )
            remaining.consume(a, case.size)
            occupants.setdefault(a, []).append(cid)
            placement[cid] = a
            improved = True
        if not improved:
            break


def _reduced_cost_fix(cases: list[Case], spec: lp.MatchLpSpec, sol: lp.LpSolution, z: float):
    """Drop (case, affiliate) pairs that provably cannot appear in any
    placement scoring above the incumbent: a pair nonbasic at zero with
    reduced cost rc can only reach LP bound + rc, so pairs with
    bound + rc <= z are fixed out before branching."""
    from dataclasses import replace as _replace

    y = sol.result.y
    nc = spec.n_case_rows
    keep: dict[str, set[str]] = {c.id: set() for c in cases}
    for j in range(len(spec.col_case)):
        aff = spec.col_aff_id[j]
        if aff == spec.sink_id:
            continue
        i = spec.col_case[j]
        rc = spec.col_u[j] - y[i]
        if spec.col_cap[j] >= 0:
            rc -= spec.sizes[i] * y[nc + spec.col_cap[j]]
        if sol.value + min(rc, 0.0) > z + BOUND_TOL:
            keep[spec.row_case_ids[i][0]].add(aff)
    out = []
    for c in cases:
        kept = keep[c.id]
        if all(a == spec.sink_id or a in kept or isinstance(u, Incompatible)
               for a, u in c.scores.items()):
            out.append(c)
        else:
            scores = {a: (u if a == spec.sink_id or a in kept else Incompatible())
                      for a, u in c.scores.items()}
            out.append(_replace(c, scores=scores))
    return out


def _caps_from(spec: lp.MatchLpSpec, caps: CapacityProfile, b_cap: np.ndarray) -> CapacityProfile:
    out = caps.copy()
    for t, aff in enumerate(spec.cap_ids):
        out.remaining[aff] = float(b_cap[t])
    return out


def _branch_and_bound(
    cases, caps, sink_id, potentials, epsilon,
    floor_obj=0.0, warm_hint=None, max_pops=None,
) -> tuple[dict[str, str] | None, bool]:
    """Best-bound search over the LP relaxation.

    Branches multiway on a fractional case (one child per affiliate it can
    still take, plus the sink), which partitions the node cleanly.  All node
    LPs share one prepared matrix and differ only in the right-hand side
    (fixed case rows zeroed, consumed capacity subtracted); they warm-start
    from the current incumbent.  Children enter the heap with their parent's
    bound and are solved lazily when popped.

    Returns (placement or None when nothing beats `floor_obj`, proved flag);
    proved is False when `max_pops` ran out first."""
    counter = itertools.count()
    by_id = {c.id: c for c in cases}
    spec = lp.build_match_lp(cases, caps, sink_id, potentials=potentials, epsilon=epsilon)
    row_of = {c.id: i for i, c in enumerate(cases)}
    cap_row = {a: t for t, a in enumerate(spec.cap_ids)}
    ones = spec.counts.copy()

    incumbent: dict[str, str] | None = None
    incumbent_obj = floor_obj
    hint: dict[str, str] = dict(warm_hint or {})

    def evaluate(fixed: dict[str, str]):
        b_case = ones.copy()
        b_cap = spec.caps.copy()
        fixed_obj = 0.0
        for cid, aff in fixed.items():
            fixed_obj += _adjusted(by_id[cid], aff, sink_id, potentials, epsilon)
            b_case[row_of[cid]] = 0.0
            t = cap_row.get(aff)
            if t is not None:
                b_cap[t] -= by_id[cid].size
        warm: dict[int, int] = {}
        walk = b_cap.copy()
        for cid, aff in hint.items():
            if cid in fixed or aff == sink_id:
                continue
            i = row_of[cid]
            col = spec.pair_col.get((i, aff))
            if col is None:
                continue
            t = cap_row.get(aff)
            if t is None:
                warm[i] = col
            elif walk[t] >= by_id[cid].size:
                walk[t] -= by_id[cid].size
                warm[i] = col
        sol = lp.solve_lp(spec, warm_cols=warm, b_case=b_case, b_cap=b_cap)
        return fixed_obj, b_cap, sol

    def consider(placement: dict[str, str]) -> None:
        nonlocal incumbent, incumbent_obj, hint
        obj = _objective_of(placement, by_id, sink_id, potentials, epsilon)
        if obj > incumbent_obj + BOUND_TOL:
            incumbent = placement
            incumbent_obj = obj
            hint = dict(placement)

    # heap of (-bound_estimate, depth_key, seq, fixed).  A child fixing case
    # i to affiliate a is bounded by parent_bound + adj_i(a) - y_i - s_i*p_a
    # (the parent duals stay dual-feasible for the child), so most children
    # are fathomed without ever solving their LP.
    heap: list[tuple[float, int, int, dict[str, str]]] = [(-np.inf, 0, next(counter), {})]
    pops = 0

    while heap:
        if max_pops is not None and pops >= max_pops:
            return incumbent, False
        neg_est, _, _, fixed = heapq.heappop(heap)
        if -neg_est <= incumbent_obj + BOUND_TOL:
            continue
        pops += 1
        fixed_obj, b_cap, sol = evaluate(fixed)
        bound = fixed_obj + sol.value
        if bound <= incumbent_obj + BOUND_TOL:
            continue

        frac_col = _most_fractional(sol, spec)
        if frac_col is None:
            placement = dict(fixed)
            for (cid, aff), w in sol.assignment().items():
                if w > 0.5:
                    placement[cid] = aff
            for cid in row_of:
                placement.setdefault(cid, sink_id)
            consider(placement)
            continue

        free = [c for c in cases if c.id not in fixed]
        node_caps = _caps_from(spec, caps, b_cap)
        rounded = _round_lp(free, node_caps, sink_id, potentials, epsilon, spec, sol)
        rounded.update(fixed)
        consider(rounded)
        if bound <= incumbent_obj + BOUND_TOL:
            continue

        cid = _branch_case(sol, spec, by_id)
        case = by_id[cid]
        i = row_of[cid]
        y_case = float(sol.result.y[i])
        children = [(sink_id, None)]
        for aff in sorted(case.scores):
            if aff == sink_id or isinstance(case.scores[aff], Incompatible):
                continue
            if (i, aff) not in spec.pair_col:
                continue  # zero remaining capacity
            t = cap_row.get(aff)
            if t is None or b_cap[t] >= case.size:
                children.append((aff, t))
        for aff, t in children:
            price = float(sol.result.y[spec.n_case_rows + t]) if t is not None else 0.0
            est = bound + _adjusted(case, aff, sink_id, potentials, epsilon) \
                - y_case - case.size * price
            est = min(est, bound)
            if est <= incumbent_obj + BOUND_TOL:
                continue
            child = dict(fixed)
            child[cid] = aff
            heapq.heappush(heap, (-est, -len(child), next(counter), child))

    return incumbent, True


def _branch_case(sol: lp.LpSolution, spec: lp.MatchLpSpec, by_id) -> str:
    """Case to branch on: fractional, largest size first (its knapsack
    footprint moves the bound most), then most fractional."""
    best = None
    best_key = None
    for j, w in enumerate(sol.x):
        frac = w - np.floor(w)
        if frac < INT_TOL or frac > 1.0 - INT_TOL:
            continue
        i = spec.col_case[j]
        cid = spec.row_case_ids[i][0]
        key = (by_id[cid].size, -abs(frac - 0.5))
        if best is None or key > best_key:
            best = cid
            best_key = key
    return best


def _most_fractional(sol: lp.LpSolution, spec: lp.MatchLpSpec) -> int | None:
    """Most fractional non-sink column.  If any case row is fractional, some
    non-sink column of that row is fractional too, so skipping sink columns
    never hides fractionality."""
    best = None
    best_dist = np.inf
    for j, w in enumerate(sol.x):
        if spec.col_aff_id[j] == spec.sink_id:
            continue
        frac = w - np.floor(w)
        if frac < INT_TOL or frac > 1.0 - INT_TOL:
            continue
        dist = abs(frac - 0.5)
        if dist < best_dist - 1e-12:
            best = j
            best_dist = dist
    return best


def _finish_assignment(cases, placement, sink_id, potentials, epsilon) -> Assignment:
    objective = sum(
        _adjusted(c, placement[c.id], sink_id, potentials, epsilon) for c in cases
    )
    return Assignment.from_placement(cases, placement, sink_id, objective=objective)


def opt(cases: list[Case], caps: CapacityProfile, sink_id: str) -> float:
    """Optimal raw employment with full knowledge, integer placements."""
    return solve_ilp(cases, caps, sink_id).value


def hindsight_optimum(instance, caps: CapacityProfile) -> Assignment:
    """Value-optimal assignment, then zero-score cases greedily inserted in
    arrival order wherever they fit so the matched count is not understated."""
    sink_id = instance.sink_id
    base = solve_ilp(list(instance.cases), caps, sink_id)
    placement = dict(base.placement)
    remaining = caps.copy()
    for aff, used in base.consumed.items():
        remaining.consume(aff, used)
    for case in instance.cases:
        if placement[case.id] != sink_id:
            continue
        for aff in sorted(case.scores):
            if aff == sink_id:
                continue
            u = case.scores[aff]
            if isinstance(u, Incompatible) or abs(u) > 1e-12:
                continue
            if remaining.fits(aff, case.size):
                placement[case.id] = aff
                remaining.consume(aff, case.size)
                break
    out = Assignment.from_placement(list(instance.cases), placement, sink_id, objective=base.objective)
    assert abs(out.value - base.value) <= 1e-9 * (1 + abs(base.value))
    return out
