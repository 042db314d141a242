"""Domain types for the dynamic placement problem: affiliates, cases,
capacity profiles, and full problem instances."""

from __future__ import annotations

import datetime
import math
from dataclasses import dataclass, field, replace

INFINITE_CAPACITY = math.inf

UNMATCHED_ID = "unmatched"


class Incompatible:
    """Marker for a case/affiliate pair that must not be matched.

    Kept as a singleton sentinel rather than -inf so that score arithmetic
    never sees non-finite floats.
    """

    _instance: "Incompatible | None" = None

    def __new__(cls) -> "Incompatible":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INCOMPATIBLE"

    def __deepcopy__(self, memo) -> "Incompatible":
        return self

    def __copy__(self) -> "Incompatible":
        return self


INCOMPATIBLE = Incompatible()

Score = float | Incompatible


@dataclass(frozen=True)
class CompatRules:
    """Service restrictions an affiliate imposes on the cases it can host.

    ``None`` means unrestricted for that attribute.
    """

    nationalities: frozenset[str] | None = None
    languages: frozenset[str] | None = None
    max_family_size: int | None = None
    min_family_size: int | None = None
    accepts_single_parents: bool = True

    def accepts(self, case: "Case") -> bool:
        if self.nationalities is not None and case.nationality not in self.nationalities:
            return False
        if self.languages is not None and case.language not in self.languages:
            return False
        if self.max_family_size is not None and case.size > self.max_family_size:
            return False
        if self.min_family_size is not None and case.size < self.min_family_size:
            return False
        if not self.accepts_single_parents and case.single_parent:
            return False
        return True

    def is_unrestricted(self) -> bool:
        return (
            self.nationalities is None
            and self.languages is None
            and self.max_family_size is None
            and self.min_family_size is None
            and self.accepts_single_parents
        )


@dataclass(frozen=True)
class Affiliate:
    id: str
    capacity: float  # non-negative int, or INFINITE_CAPACITY
    is_unmatched_sink: bool = False
    compat: CompatRules = field(default_factory=CompatRules)

    @property
    def finite(self) -> bool:
        return self.capacity != INFINITE_CAPACITY


def unmatched_affiliate() -> Affiliate:
    return Affiliate(id=UNMATCHED_ID, capacity=INFINITE_CAPACITY, is_unmatched_sink=True)


@dataclass(frozen=True)
class Case:
    """An indivisible family of ``size`` people, scored per affiliate.

    ``scores`` maps every affiliate id to a finite expected-employment value
    in [0, size], or to INCOMPATIBLE.  ``estimated_scores`` optionally keeps
    the unmasked model estimate for incompatible pairs, which the review UI
    reports when staff force an override.
    """

    id: str
    size: int
    scores: dict[str, Score]
    nationality: str = ""
    language: str = ""
    single_parent: bool = False
    pool: str = "free"  # "free" | "us_ties"
    arrival_index: int = 0  # 1-based within the year; 0 for history-pool cases
    batch_id: int = 0
    date: datetime.date = datetime.date(2000, 1, 1)
    estimated_scores: dict[str, float] = field(default_factory=dict)

    def score_at(self, affiliate_id: str) -> Score:
        return self.scores[affiliate_id]

    def compatible_with(self, affiliate_id: str) -> bool:
        return not isinstance(self.scores[affiliate_id], Incompatible)

    def compatible_affiliates(self) -> list[str]:
        return [a for a, u in self.scores.items() if not isinstance(u, Incompatible)]

    def characteristics(self) -> tuple:
        """Hashable (size, score-vector) signature used for trajectory draws
        and for merging identical sampled cases in one LP."""
        items = tuple(
            (a, None if isinstance(u, Incompatible) else u) for a, u in sorted(self.scores.items())
        )
        return (self.size, items)


class CapacityError(ValueError):
    """Raised when an operation would drive a finite capacity negative."""


@dataclass
class CapacityProfile:
    """Remaining per-affiliate capacities; the unmatched sink stays infinite."""

    remaining: dict[str, float]

    def __getitem__(self, affiliate_id: str) -> float:
        return self.remaining[affiliate_id]

    def copy(self) -> "CapacityProfile":
        return CapacityProfile(dict(self.remaining))

    def fits(self, affiliate_id: str, size: int) -> bool:
        return self.remaining[affiliate_id] >= size

    def consume(self, affiliate_id: str, size: int) -> None:
        cur = self.remaining[affiliate_id]
        if cur == INFINITE_CAPACITY:
            return
        if cur - size < 0:
            raise CapacityError(
                f"capacity of {affiliate_id!r} would drop below zero ({cur} - {size})"
            )
        self.remaining[affiliate_id] = cur - size

    def total_finite(self) -> float:
        return sum(v for v in self.remaining.values() if v != INFINITE_CAPACITY)

    def affiliate_ids(self) -> list[str]:
        return list(self.remaining)


@dataclass
class Instance:
    """A full year of the matching problem.

    ``cases`` are ordered by arrival; ``revisions`` holds scripted capacity
    announcements as (arrival_index, CapacityProfile) applied before that
    arrival; ``history_pool`` holds earlier arrivals used for trajectory
    sampling.
    """

    affiliates: list[Affiliate]
    cases: list[Case]
    initial_caps: CapacityProfile
    final_caps: CapacityProfile
    revisions: list[tuple[int, CapacityProfile]] = field(default_factory=list)
    history_pool: list[Case] = field(default_factory=list)
    version: int = 1

    def affiliate(self, affiliate_id: str) -> Affiliate:
        for a in self.affiliates:
            if a.id == affiliate_id:
                return a
        raise KeyError(affiliate_id)

    @property
    def sink_id(self) -> str:
        for a in self.affiliates:
            if a.is_unmatched_sink:
                return a.id
        raise ValueError("instance has no unmatched sink affiliate")

    def real_affiliates(self) -> list[Affiliate]:
        return [a for a in self.affiliates if not a.is_unmatched_sink]

    def batches(self) -> list[list[Case]]:
        out: list[list[Case]] = []
        for case in self.cases:
            if out and out[-1][0].batch_id == case.batch_id:
                out[-1].append(case)
            else:
                out.append([case])
        return out

    def total_refugees(self) -> int:
        return sum(c.size for c in self.cases)


@dataclass(frozen=True)
class Violation:
    entity: str
    rule: str
    detail: str = ""

    def __str__(self) -> str:
        msg = f"{self.entity}: {self.rule}"
        return f"{msg} ({self.detail})" if self.detail else msg


def validate(instance: Instance) -> list[Violation]:
    """Check every type invariant; violations are data, not exceptions."""
    out: list[Violation] = []
    sinks = [a for a in instance.affiliates if a.is_unmatched_sink]
    if len(sinks) != 1:
        out.append(Violation("instance", "no unmatched sink" if not sinks else "multiple unmatched sinks"))
        sink_id = None
    else:
        sink = sinks[0]
        sink_id = sink.id
        if sink.capacity != INFINITE_CAPACITY:
            out.append(Violation(sink.id, "unmatched sink must have infinite capacity"))
        if not sink.compat.is_unrestricted():
            out.append(Violation(sink.id, "unmatched sink must accept every case"))

    aff_ids = [a.id for a in instance.affiliates]
    if len(set(aff_ids)) != len(aff_ids):
        out.append(Violation("instance", "duplicate affiliate ids"))
    aff_by_id = {a.id: a for a in instance.affiliates}

    for a in instance.affiliates:
        if a.capacity != INFINITE_CAPACITY:
            if a.capacity < 0 or int(a.capacity) != a.capacity:
                out.append(Violation(a.id, "finite capacity must be a non-negative integer", f"capacity={a.capacity}"))

    for profile_name, profile in (("initial_caps", instance.initial_caps), ("final_caps", instance.final_caps)):
        if sink_id is not None:
            if profile.remaining.get(sink_id) != INFINITE_CAPACITY:
                out.append(Violation(profile_name, "sink capacity must be infinite"))
        missing = set(aff_ids) - set(profile.remaining)
        if missing:
            out.append(Violation(profile_name, "profile missing affiliates", ", ".join(sorted(missing))))

    seen_batches: list[int] = []
    for pos, case in enumerate(instance.cases, start=1):
        if case.arrival_index != pos:
            out.append(Violation(case.id, "arrival_index must match position", f"{case.arrival_index} != {pos}"))
        if seen_batches and case.batch_id < seen_batches[-1]:
            out.append(Violation(case.id, "batch ids must be non-decreasing in arrival order"))
        if not seen_batches or case.batch_id != seen_batches[-1]:
            seen_batches.append(case.batch_id)
    for prev, nxt in zip(seen_batches, seen_batches[1:]):
        if nxt != prev + 1:
            out.append(Violation("instance", "batch ids must be contiguous", f"{prev} -> {nxt}"))

    for case in list(instance.cases) + list(instance.history_pool):
        out.extend(_validate_case(case, aff_by_id, sink_id))
    return out


def _validate_case(case: Case, aff_by_id: dict[str, Affiliate], sink_id: str | None) -> list[Violation]:
    out: list[Violation] = []
    if case.size < 1 or int(case.size) != case.size:
        out.append(Violation(case.id, "size must be a positive integer", f"size={case.size}"))
    missing = set(aff_by_id) - set(case.scores)
    extra = set(case.scores) - set(aff_by_id)
    if missing:
        out.append(Violation(case.id, "score map must cover every affiliate", ", ".join(sorted(missing))))
    if extra:
        out.append(Violation(case.id, "score map names unknown affiliates", ", ".join(sorted(extra))))
    for aff_id, u in case.scores.items():
        if isinstance(u, Incompatible):
            if aff_id == sink_id:
                out.append(Violation(case.id, "case cannot be incompatible with the unmatched sink"))
            continue
        if isinstance(u, bool) or not isinstance(u, (int, float)) or not math.isfinite(u):
            out.append(Violation(case.id, "stored scores must be finite numbers", f"{aff_id}: {u!r}"))
            continue
        if aff_id == sink_id and u != 0:
            out.append(Violation(case.id, "score at the unmatched sink must be 0", f"u={u}"))
        elif not (0 <= u <= case.size):
            out.append(Violation(case.id, "score must lie in [0, size]", f"{aff_id}: u={u}"))
    if case.pool == "us_ties":
        real_compat = [
            a for a, u in case.scores.items()
            if a != sink_id and not isinstance(u, Incompatible)
        ]
        if len(real_compat) != 1:
            out.append(Violation(case.id, "us_ties case must have exactly one compatible real affiliate",
                                 f"found {len(real_compat)}"))
    elif case.pool != "free":
        out.append(Violation(case.id, "pool must be 'free' or 'us_ties'", case.pool))
    return out


def split_unit(instance: Instance) -> Instance:
    """Split every case of size s into s single-person cases with 1/s of the
    scores, keeping siblings adjacent and batch membership intact."""
    new_cases: list[Case] = []
    first_new_index: dict[int, int] = {}  # original arrival index -> first sibling's new index
    for case in instance.cases:
        first_new_index[case.arrival_index] = len(new_cases) + 1
        new_cases.extend(_split_case(case))
    for idx, case in enumerate(new_cases, start=1):
        new_cases[idx - 1] = replace(case, arrival_index=idx)
    new_history = [h for case in instance.history_pool for h in _split_case(case)]
    last = len(new_cases) + 1
    return Instance(
        affiliates=list(instance.affiliates),
        cases=new_cases,
        initial_caps=instance.initial_caps.copy(),
        final_caps=instance.final_caps.copy(),
        revisions=[(first_new_index.get(i, last), p.copy()) for i, p in instance.revisions],
        history_pool=new_history,
        version=instance.version,
    )


def _split_case(case: Case) -> list[Case]:
    if case.size == 1:
        return [case]
    scores: dict[str, Score] = {
        a: u if isinstance(u, Incompatible) else u / case.size for a, u in case.scores.items()
    }
    estimates = {a: u / case.size for a, u in case.estimated_scores.items()}
    return [
        replace(case, id=f"{case.id}#{j}", size=1, scores=dict(scores), estimated_scores=dict(estimates))
        for j in range(1, case.size + 1)
    ]
