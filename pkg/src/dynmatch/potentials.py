"""Affiliate potentials: opportunity-cost prices estimated by averaging
extremal LP duals over sampled trajectories of future arrivals."""

from __future__ import annotations

import datetime
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import lp
from .model import CapacityProfile, Case


class EmptyHistoryError(RuntimeError):
    """Raised when a trajectory is requested but no past arrivals exist."""


@dataclass
class TrajectoryConfig:
    """Controls one potential computation.

    `expected_remaining_cases` is bound by the policy layer to the engine
    state; it returns the expected number of cases still to arrive after the
    current batch.
    """

    k: int = 5
    lookback_days: int = 183
    min_window_cases: int = 30
    rng_seed: int = 0
    expected_remaining_cases: Callable[[], float] | None = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.lookback_days <= 0:
            raise ValueError("lookback must be positive")


@dataclass
class PotentialVector:
    p: dict[str, float]
    method: str
    k_used: int

    def get(self, affiliate_id: str) -> float:
        return self.p.get(affiliate_id, 0.0)


def lookback_window(
    history_pool: Sequence[Case],
    now: datetime.date,
    lookback_days: int,
    min_window_cases: int = 30,
) -> list[Case]:
    """Arrivals within the lookback window, widening twice on cold starts:
    first to double the window, then to the whole pool."""
    def within(days: int) -> list[Case]:
        cutoff = now - datetime.timedelta(days=days)
        return [c for c in history_pool if cutoff <= c.date <= now]

    window = within(lookback_days)
    if len(window) < min_window_cases:
        window = within(2 * lookback_days)
    if len(window) < min_window_cases:
        window = list(history_pool)
    return window


def sample_trajectory(
    history_pool: Sequence[Case],
    now: datetime.date,
    m: int,
    rng: np.random.Generator,
    *,
    lookback_days: int = 183,
    min_window_cases: int = 30,
) -> list[Case]:
    """Draw m case characteristics i.i.d. with replacement from the recent
    arrival window."""
    if m <= 0:
        return []
    window = lookback_window(history_pool, now, lookback_days, min_window_cases)
    if not window:
        raise EmptyHistoryError("no past arrivals to sample trajectories from")
    idx = rng.integers(0, len(window), size=m)
    return [window[i] for i in idx]


def _zero_vector(caps: CapacityProfile, method: str, k: int) -> PotentialVector:
    return PotentialVector({a: 0.0 for a in caps.remaining}, method, k)


def _averaged_duals(
    caps: CapacityProfile,
    sink_id: str,
    history_pool: Sequence[Case],
    now: datetime.date,
    n_future: int,
    config: TrajectoryConfig,
    *,
    method: str,
    sense: str,
    batch: Sequence[Case] = (),
    seed_seq: np.random.SeedSequence | None = None,
) -> PotentialVector:
    if n_future <= 0:
        return _zero_vector(caps, method, config.k)

    root = seed_seq if seed_seq is not None else np.random.SeedSequence(config.rng_seed)
    children = root.spawn(config.k)
    affiliates = sorted(caps.remaining)
    acc = np.zeros(len(affiliates))
    for child in children:
        rng = np.random.Generator(np.random.PCG64(child))
        prices = _one_trajectory(
            caps, sink_id, history_pool, now, n_future, config, sense, batch, rng
        )
        acc += np.asarray([prices[a] for a in affiliates])
    acc /= config.k
    return PotentialVector(dict(zip(affiliates, acc.tolist())), method, config.k)


def _one_trajectory(caps, sink_id, history_pool, now, n_future, config, sense, batch, rng):
    """One sampled LP; a solver failure is retried once with a fresh sample."""
    for attempt in (0, 1):
        sampled = sample_trajectory(
            history_pool, now, n_future, rng,
            lookback_days=config.lookback_days,
            min_window_cases=config.min_window_cases,
        )
        spec = lp.build_match_lp(list(batch) + sampled, caps, sink_id, dedupe=True)
        try:
            return lp.extremal_duals(spec, sense).prices
        except lp.LpError:
            if attempt == 1:
                raise


def pot1(
    caps: CapacityProfile,
    sink_id: str,
    history_pool: Sequence[Case],
    now: datetime.date,
    config: TrajectoryConfig,
    *,
    n_future: int | None = None,
    seed_seq: np.random.SeedSequence | None = None,
) -> PotentialVector:
    """Average of element-wise maximal shadow prices over k trajectory LPs,
    each covering only the sampled future arrivals."""
    m = _future_length(n_future, config)
    return _averaged_duals(
        caps, sink_id, history_pool, now, m, config,
        method="pot1", sense="maximal", seed_seq=seed_seq,
    )


def pot2(
    caps: CapacityProfile,
    sink_id: str,
    batch: Sequence[Case],
    history_pool: Sequence[Case],
    now: datetime.date,
    config: TrajectoryConfig,
    *,
    n_future: int | None = None,
    seed_seq: np.random.SeedSequence | None = None,
) -> PotentialVector:
    """Like pot1 but the LP also contains the observed current batch and the
    element-wise minimal shadow prices are extracted."""
    m = _future_length(n_future, config)
    return _averaged_duals(
        caps, sink_id, history_pool, now, m, config,
        method="pot2", sense="minimal", batch=batch, seed_seq=seed_seq,
    )


def _future_length(n_future: int | None, config: TrajectoryConfig) -> int:
    if n_future is not None:
        return int(n_future)
    if config.expected_remaining_cases is None:
        raise ValueError("either n_future or config.expected_remaining_cases is required")
    return int(round(config.expected_remaining_cases()))
