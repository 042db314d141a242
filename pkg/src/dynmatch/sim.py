"""Fiscal-year replay harness and the metric suite used to compare policies:
per-arrival match scores, priced remaining capacity, and totals."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import lp, matching, policies
from .model import CapacityProfile, Instance, validate
from .policies import EngineState, PolicyConfig

CAPACITY_MODES = ("final", "initial", "initial_with_revision")
POLICIES = ("pmb", "pm", "greedy", "hindsight")


@dataclass
class ArrivalRecord:
    arrival_index: int
    case_id: str
    affiliate: str
    size: int
    refugees_so_far: int
    match_score: float
    match_score_per_refugee: float


@dataclass
class ReplayResult:
    policy: str
    capacity_mode: str
    seed: int
    sink_id: str
    config: dict
    records: list[ArrivalRecord]
    priced_capacity: list[float]  # len(records)+1 points, normalized to start at 1
    total_employment: float
    optimum_value: float
    optimum_ratio: float
    matched_fraction: float

    def employment_curve(self) -> np.ndarray:
        return np.cumsum([r.match_score for r in self.records])


def reference_caps(instance: Instance, capacity_mode: str) -> CapacityProfile:
    """Capacities the hindsight benchmark is computed against.  The revision
    regime is benchmarked against the final (most revised) capacities."""
    if capacity_mode == "initial":
        return instance.initial_caps.copy()
    return instance.final_caps.copy()


def replay(
    instance: Instance,
    config: PolicyConfig,
    capacity_mode: str = "final",
    policy: str = "pmb",
    seed: int | None = None,
    *,
    check: bool = True,
    benchmark: matching.Assignment | None = None,
    price_vector: dict[str, float] | None = None,
) -> ReplayResult:
    """Run one policy over the year's batches under a capacity regime.

    `policy="greedy"` is the batched zero-potential variant; `"pm"` feeds
    cases one by one regardless of batching; `"hindsight"` applies the
    full-knowledge optimum in arrival order.  Precomputed `benchmark` (the
    hindsight assignment for this capacity regime) and `price_vector` (year
    prices) can be passed in when replaying the same instance many times.
    """
    if capacity_mode not in CAPACITY_MODES:
        raise ValueError(f"capacity_mode must be one of {CAPACITY_MODES}")
    if policy not in POLICIES:
        raise ValueError(f"policy must be one of {POLICIES}")
    if check:
        violations = validate(instance)
        if violations:
            raise ValueError(f"invalid instance: {violations[:3]}")

    if seed is not None:
        config = replace(config, rng_seed=seed)
    else:
        seed = config.rng_seed
    if policy == "greedy":
        config = replace(config, potential_method="zero")

    start_caps = (
        instance.final_caps.copy() if capacity_mode == "final" else instance.initial_caps.copy()
    )
    revisions = list(instance.revisions) if capacity_mode == "initial_with_revision" else []

    if benchmark is None:
        benchmark = matching.hindsight_optimum(instance, reference_caps(instance, capacity_mode))

    if policy == "hindsight":
        records = _records_from_placement(instance, benchmark.placement)
        remaining_series = _capacity_series(instance, start_caps, benchmark.placement)
    else:
        placement, remaining_series = _run_policy(instance, config, start_caps, revisions, policy)
        records = _records_from_placement(instance, placement)

    total = sum(r.match_score for r in records)
    sizes = sum(r.size for r in records)
    matched = sum(r.size for r in records if r.affiliate != instance.sink_id)
    curve = priced_capacity_series(instance, remaining_series, prices=price_vector)
    return ReplayResult(
        policy=policy,
        capacity_mode=capacity_mode,
        seed=seed,
        sink_id=instance.sink_id,
        config=asdict(config),
        records=records,
        priced_capacity=curve,
        total_employment=total,
        optimum_value=benchmark.value,
        optimum_ratio=(total / benchmark.value) if benchmark.value > 0 else 1.0,
        matched_fraction=(matched / sizes) if sizes else 0.0,
    )


def _run_policy(instance, config, start_caps, revisions, policy):
    state = EngineState.start(instance, start_caps, config)
    pending = sorted(revisions, key=lambda r: r[0])
    placement: dict[str, str] = {}
    remaining_series = [state.remaining.copy()]
    for batch in instance.batches():
        while pending and batch[0].arrival_index >= pending[0][0]:
            policies.apply_revision(state, pending.pop(0)[1])
        units = [[c] for c in batch] if policy == "pm" else [batch]
        for unit in units:
            walk = state.remaining.copy() if len(unit) > 1 else None
            assignment = policies.pmb_step(state, unit, config)
            placement.update(assignment.placement)
            if walk is None:
                remaining_series.append(state.remaining.copy())
            else:
                # within a batch the placements are simultaneous; unroll them
                # in arrival order so per-arrival diagnostics stay smooth
                for case in unit:
                    aff = assignment.placement[case.id]
                    if aff != instance.sink_id:
                        walk.consume(aff, case.size)
                    remaining_series.append(walk.copy())
    return placement, remaining_series


def _records_from_placement(instance, placement) -> list[ArrivalRecord]:
    records = []
    so_far = 0
    for case in instance.cases:
        aff = placement[case.id]
        u = case.scores[aff]
        score = 0.0 if aff == instance.sink_id else float(u)
        so_far += case.size
        records.append(
            ArrivalRecord(
                arrival_index=case.arrival_index,
                case_id=case.id,
                affiliate=aff,
                size=case.size,
                refugees_so_far=so_far,
                match_score=score,
                match_score_per_refugee=score / case.size,
            )
        )
    return records


def _capacity_series(instance, start_caps, placement) -> list[CapacityProfile]:
    remaining = start_caps.copy()
    series = [remaining.copy()]
    for case in instance.cases:
        aff = placement[case.id]
        if aff != instance.sink_id:
            remaining.consume(aff, case.size)
        series.append(remaining.copy())
    return series


def year_prices(instance: Instance) -> dict[str, float]:
    """Element-wise maximal duals of the full-year LP on final capacities;
    one price vector per instance, shared by every replay's diagnostics."""
    spec = lp.build_match_lp(
        list(instance.cases), instance.final_caps, instance.sink_id, dedupe=True
    )
    return lp.extremal_duals(spec, "maximal").prices


def priced_capacity_series(
    instance: Instance,
    remaining_series: list[CapacityProfile],
    prices: dict[str, float] | None = None,
) -> list[float]:
    """Remaining capacity weighted by the year prices after each arrival,
    normalized so the pre-year value is 1."""
    if prices is None:
        prices = year_prices(instance)
    raw = [
        sum(prices[a] * c for a, c in prof.remaining.items() if c != float("inf"))
        for prof in remaining_series
    ]
    base = raw[0]
    if base <= 0:
        return [1.0] * len(raw)
    return [v / base for v in raw]


def priced_capacity_curve(instance: Instance, result: ReplayResult) -> list[float]:
    """Re-derive the priced-capacity series from a replay's placements."""
    start = (
        instance.final_caps if result.capacity_mode == "final" else instance.initial_caps
    )
    placement = {r.case_id: r.affiliate for r in result.records}
    return priced_capacity_series(instance, _capacity_series(instance, start.copy(), placement))


def triangle_smooth(series, width: int = 500) -> np.ndarray:
    """Moving average with triangular weights peaking at the center; the
    window is truncated and renormalized at the boundaries."""
    arr = np.asarray(series, dtype=float)
    if arr.size == 0 or width <= 0:
        return arr.copy()
    kernel = np.concatenate([np.arange(1, width + 2), np.arange(width, 0, -1)]).astype(float)
    # slice the centered window out of the full convolution; np.convolve's
    # "same" mode returns max(len(arr), len(kernel)) points, which is wrong
    # whenever the window is wider than the series
    num = np.convolve(arr, kernel, mode="full")[width:width + arr.size]
    den = np.convolve(np.ones_like(arr), kernel, mode="full")[width:width + arr.size]
    return num / den


def match_fraction(result: ReplayResult) -> float:
    sizes = sum(r.size for r in result.records)
    if sizes == 0:
        return 0.0
    return sum(r.size for r in result.records if r.affiliate != result.sink_id) / sizes


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------


def write_csv(result: ReplayResult, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "arrival_index", "case_id", "affiliate", "size", "refugees_so_far",
                "match_score", "match_score_per_refugee", "priced_capacity",
            ]
        )
        for i, r in enumerate(result.records):
            writer.writerow(
                [
                    r.arrival_index, r.case_id, r.affiliate, r.size, r.refugees_so_far,
                    repr(r.match_score), repr(r.match_score_per_refugee),
                    repr(result.priced_capacity[i + 1]),
                ]
            )


def summary(result: ReplayResult) -> dict:
    return {
        "policy": result.policy,
        "capacity_mode": result.capacity_mode,
        "seed": result.seed,
        "config": result.config,
        "total_employment": result.total_employment,
        "optimum_value": result.optimum_value,
        "optimum_ratio": result.optimum_ratio,
        "matched_fraction": result.matched_fraction,
        "arrivals": len(result.records),
        "refugees": sum(r.size for r in result.records),
    }


def write_summary(result: ReplayResult, path: str | Path) -> None:
    Path(path).write_text(json.dumps(summary(result), indent=2) + "\n")


def plot_results(results: list[ReplayResult], outdir: str | Path, smooth_width: int = 500) -> list[Path]:
    """Render the standard diagnostic figures (SVG): total-employment bars,
    smoothed per-refugee match score, and priced remaining capacity."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    fig, ax = plt.subplots(figsize=(8, 4.5))
    labels = [f"{r.policy}\n{r.capacity_mode}" for r in results]
    ratios = [r.optimum_ratio for r in results]
    bars = ax.bar(range(len(results)), ratios, color="tab:blue")
    for rect, r in zip(bars, results):
        ax.text(rect.get_x() + rect.get_width() / 2, rect.get_height() / 2,
                f"{r.total_employment:.0f}", ha="center", color="white", fontsize=8)
    ax.set_xticks(range(len(results)), labels, fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("share of hindsight optimum")
    fig.tight_layout()
    p = outdir / "employment_bars.svg"
    fig.savefig(p)
    plt.close(fig)
    written.append(p)

    fig, ax = plt.subplots(figsize=(8, 4.5))
    for r in results:
        xs = [rec.refugees_so_far for rec in r.records]
        ys = triangle_smooth([rec.match_score_per_refugee for rec in r.records], smooth_width)
        ax.plot(xs, ys, label=r.policy)
    ax.set_xlabel("refugees arrived")
    ax.set_ylabel("match score per refugee (smoothed)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    p = outdir / "match_score.svg"
    fig.savefig(p)
    plt.close(fig)
    written.append(p)

    fig, ax = plt.subplots(figsize=(8, 4.5))
    for r in results:
        xs = [0] + [rec.refugees_so_far for rec in r.records]
        ax.plot(xs, r.priced_capacity, label=r.policy)
    ax.set_xlabel("refugees arrived")
    ax.set_ylabel("priced capacity remaining")
    ax.legend(fontsize=8)
    fig.tight_layout()
    p = outdir / "priced_capacity.svg"
    fig.savefig(p)
    plt.close(fig)
    written.append(p)
    return written
