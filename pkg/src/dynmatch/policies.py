"""Online allocation policies: potential match (single and batched), the
greedy baseline, the arrival-number estimator, and capacity revisions."""

from __future__ import annotations

import datetime
from dataclasses import dataclass, field

import numpy as np

from . import matching, potentials
from .model import CapacityProfile, Case, Incompatible
from .potentials import PotentialVector, TrajectoryConfig

DEFAULT_AVG_CASE_SIZE = 2.5  # observed long-run average size of arriving cases


@dataclass
class PolicyConfig:
    potential_method: str = "pot1"  # "pot1" | "pot2" | "zero" (greedy)
    k: int = 5
    tie_break: list[str] | None = None  # explicit affiliate order; sorted ids when None
    epsilon_matched: float | None = None  # None: 1e-6 / (1 + total refugees in batch + future)
    arrival_mode: str = "known_n"  # "known_n" | "capacity_fraction" | "manual_override"
    capacity_fraction: float = 0.91
    manual_total_refugees: float | None = None
    lookback_days: int = 183
    min_window_cases: int = 30
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not (0 < self.capacity_fraction <= 1):
            raise ValueError("capacity_fraction must be in (0, 1]")
        if self.potential_method not in ("pot1", "pot2", "zero"):
            raise ValueError(f"unknown potential method {self.potential_method!r}")
        if self.arrival_mode not in ("known_n", "capacity_fraction", "manual_override"):
            raise ValueError(f"unknown arrival mode {self.arrival_mode!r}")


@dataclass
class Decision:
    case_id: str
    affiliate: str
    batch_id: int
    raw_score: float
    adjusted_score: float


@dataclass
class EngineState:
    """Mutable single-writer state of one allocation run."""

    remaining: CapacityProfile
    announced: CapacityProfile  # capacities currently in force (91% rule base)
    sink_id: str
    history: list[Case]
    now: datetime.date
    n_total_cases: int | None = None
    arrived_cases: int = 0
    arrived_refugees: int = 0
    used: dict[str, int] = field(default_factory=dict)
    log: list[Decision] = field(default_factory=list)
    _seed_root: np.random.SeedSequence | None = None
    _batch_counter: int = 0

    @classmethod
    def start(cls, instance, caps: CapacityProfile, config: PolicyConfig) -> "EngineState":
        return cls(
            remaining=caps.copy(),
            announced=caps.copy(),
            sink_id=instance.sink_id,
            history=list(instance.history_pool),
            now=instance.cases[0].date if instance.cases else datetime.date.today(),
            n_total_cases=len(instance.cases),
            _seed_root=np.random.SeedSequence(config.rng_seed),
        )

    def observe_batch(self, batch: list[Case]) -> None:
        """Register the batch as arrived before it is allocated; estimators
        then count only arrivals beyond it."""
        self.arrived_cases += len(batch)
        self.arrived_refugees += sum(c.size for c in batch)
        self.now = max(c.date for c in batch)

    def absorb_batch(self, batch: list[Case]) -> None:
        self.history.extend(batch)

    def next_seed(self) -> np.random.SeedSequence:
        seq = np.random.SeedSequence(
            entropy=self._seed_root.entropy if self._seed_root is not None else 0,
            spawn_key=(self._batch_counter,),
        )
        self._batch_counter += 1
        return seq


def recent_average_case_size(state: EngineState, config: PolicyConfig) -> float:
    window = potentials.lookback_window(
        state.history, state.now, config.lookback_days, config.min_window_cases
    )
    if window:
        return float(np.mean([c.size for c in window]))
    if state.history:
        return float(np.mean([c.size for c in state.history]))
    return DEFAULT_AVG_CASE_SIZE


def expected_remaining_cases(state: EngineState, config: PolicyConfig) -> float:
    """Expected number of cases still to arrive after everything observed.

    known_n: exact count.  capacity_fraction: assume arriving refugees total
    91% of announced capacity, converted to cases via the recent average
    size, clamped at zero once arrivals pass the target.  manual_override:
    same conversion from a staff-entered refugee total.
    """
    if config.arrival_mode == "known_n":
        if state.n_total_cases is None:
            raise ValueError("known_n mode requires n_total_cases")
        return max(0, state.n_total_cases - state.arrived_cases)
    if config.arrival_mode == "capacity_fraction":
        target = config.capacity_fraction * state.announced.total_finite()
    else:
        if config.manual_total_refugees is None:
            raise ValueError("manual_override mode requires manual_total_refugees")
        target = config.manual_total_refugees
    remaining_refugees = max(0.0, target - state.arrived_refugees)
    if remaining_refugees == 0.0:
        return 0.0
    return remaining_refugees / recent_average_case_size(state, config)


def compute_potentials(
    state: EngineState, batch: list[Case], config: PolicyConfig
) -> PotentialVector:
    """One potential computation per batch, never within."""
    if config.potential_method == "zero":
        return PotentialVector({a: 0.0 for a in state.remaining.remaining}, "zero", 0)
    tconf = TrajectoryConfig(
        k=config.k,
        lookback_days=config.lookback_days,
        min_window_cases=config.min_window_cases,
        rng_seed=config.rng_seed,
    )
    n_future = int(round(expected_remaining_cases(state, config)))
    seed = state.next_seed()
    if config.potential_method == "pot1":
        return potentials.pot1(
            state.remaining, state.sink_id, state.history, state.now, tconf,
            n_future=n_future, seed_seq=seed,
        )
    return potentials.pot2(
        state.remaining, state.sink_id, batch, state.history, state.now, tconf,
        n_future=n_future, seed_seq=seed,
    )


def epsilon_for(batch: list[Case], config: PolicyConfig, state: EngineState) -> float:
    if config.epsilon_matched is not None:
        return config.epsilon_matched
    total = state.arrived_refugees + sum(c.size for c in batch)
    return 1e-6 / (1.0 + total)


def pmb_step(
    state: EngineState, batch: list[Case], config: PolicyConfig,
    potential_vector: PotentialVector | None = None,
) -> matching.Assignment:
    """Allocate one batch: observe, price, solve the batch ILP on adjusted
    scores, and commit the placements to the engine state."""
    if not batch:
        raise ValueError("batch must be nonempty")
    state.observe_batch(batch)
    pvec = potential_vector if potential_vector is not None else compute_potentials(state, batch, config)
    eps = epsilon_for(batch, config, state)
    assignment = matching.solve_ilp(
        batch,
        state.remaining,
        state.sink_id,
        potentials=pvec.p,
        epsilon_matched=eps,
        tie_break=config.tie_break,
    )
    apply_assignment(state, batch, assignment, pvec)
    return assignment


def pm_step(
    state: EngineState, case: Case, config: PolicyConfig,
    potential_vector: PotentialVector | None = None,
) -> str:
    """Single-case step: argmax of u - s*p over fitting affiliates, the sink
    always eligible.  Identical to pmb_step on a singleton batch."""
    assignment = pmb_step(state, [case], config, potential_vector)
    return assignment.placement[case.id]


def greedy_choice(
    case: Case, remaining: CapacityProfile, sink_id: str,
    tie_break: list[str] | None, epsilon: float,
) -> str:
    """Direct greedy argmax of raw score among fitting affiliates, with the
    same matched-bonus preference and tie order the batch ILP uses."""
    order = tie_break if tie_break is not None else sorted(case.scores)
    best_aff = sink_id
    best = 0.0
    for aff in order:
        if aff == sink_id:
            continue
        u = case.scores.get(aff)
        if u is None or isinstance(u, Incompatible) or not remaining.fits(aff, case.size):
            continue
        score = u + epsilon * case.size
        if score > best:
            best = score
            best_aff = aff
    return best_aff


def apply_assignment(
    state: EngineState, batch: list[Case], assignment: matching.Assignment,
    pvec: PotentialVector,
) -> None:
    for case in batch:
        aff = assignment.placement[case.id]
        if aff != state.sink_id:
            state.remaining.consume(aff, case.size)
            state.used[aff] = state.used.get(aff, 0) + case.size
        u = case.scores[aff]
        raw = 0.0 if isinstance(u, Incompatible) else float(u)
        state.log.append(
            Decision(case.id, aff, case.batch_id, raw, raw - case.size * pvec.get(aff))
        )
    state.absorb_batch(batch)


def apply_revision(state: EngineState, new_caps: CapacityProfile) -> None:
    """Adopt revised capacities: remaining becomes max(0, new - used), so an
    affiliate already over the revised figure is frozen at its occupancy."""
    revised = {}
    for aff, cap in new_caps.remaining.items():
        if cap == float("inf"):
            revised[aff] = cap
            continue
        revised[aff] = max(0, cap - state.used.get(aff, 0))
    state.remaining = CapacityProfile(revised)
    state.announced = new_caps.copy()
