"""Synthetic instance generation (stand-in for confidential arrival data)
and lossless JSON serialization of instances."""

from __future__ import annotations

import datetime
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import (
    INCOMPATIBLE,
    INFINITE_CAPACITY,
    UNMATCHED_ID,
    Affiliate,
    CapacityProfile,
    Case,
    CompatRules,
    Incompatible,
    Instance,
    unmatched_affiliate,
    validate,
)

FORMAT_NAME = "dynmatch-instance"
FORMAT_VERSION = 1

# sizes 1..10 with mean ~2.5, mirroring the observed 2.4-2.6 band
CASE_SIZE_WEIGHTS = (0.40, 0.23, 0.14, 0.08, 0.05, 0.04, 0.025, 0.017, 0.01, 0.008)

NATIONALITIES = tuple(f"N{i}" for i in range(1, 7))
LANGUAGES = tuple(f"L{i}" for i in range(1, 6))


class InstanceFormatError(ValueError):
    pass


class InvalidConfigError(ValueError):
    pass


@dataclass
class GeneratorConfig:
    """Knobs of the synthetic cohort.

    `tightness` is the ratio of arriving refugees to total capacity; the
    star affiliate gets a base-quality boost so that many cases share their
    best affiliate, which is what makes myopic allocation lose employment
    when capacity is tight.
    """

    seed: int = 0
    num_affiliates: int = 18
    total_refugees: int = 3000
    tightness: float = 0.95
    mean_batch_cases: float = 7.0
    case_size_weights: tuple = CASE_SIZE_WEIGHTS
    frac_us_ties: float = 0.2
    frac_zero_score: float = 0.03
    frac_single_parent: float = 0.12
    nationality_restriction_rate: float = 0.25
    language_restriction_rate: float = 0.25
    family_size_cap_rate: float = 0.2
    single_parent_exclusion_rate: float = 0.15
    star_quality_boost: float = 0.6
    star_capacity_share: float = 4.3  # capacity weight vs an average affiliate
    base_quality_sd: float = 0.4
    skill_mean: float = -0.3
    skill_sd: float = 0.8
    noise_sd: float = 0.5
    history_months: int = 6
    history_cases: int | None = None  # default: pro-rated from the year volume
    year_start: datetime.date = datetime.date(2018, 10, 1)
    revision: tuple[float, float] | None = None  # (arrival fraction, capacity scale)

    def check(self) -> None:
        if self.num_affiliates < 1:
            raise InvalidConfigError("need at least one real affiliate")
        if self.total_refugees < 1:
            raise InvalidConfigError("total_refugees must be positive")
        if not (0 < self.tightness):
            raise InvalidConfigError("tightness must be positive")
        for name in ("frac_us_ties", "frac_zero_score", "frac_single_parent",
                     "nationality_restriction_rate", "language_restriction_rate",
                     "family_size_cap_rate", "single_parent_exclusion_rate"):
            v = getattr(self, name)
            if not (0 <= v <= 1):
                raise InvalidConfigError(f"{name} must be within [0, 1], got {v}")
        if abs(sum(self.case_size_weights) - 1.0) > 1e-9:
            raise InvalidConfigError("case_size_weights must sum to 1")
        if self.revision is not None:
            frac, scale = self.revision
            if not (0 < frac < 1) or scale <= 0:
                raise InvalidConfigError("revision must be (fraction in (0,1), positive scale)")


def generate(config: GeneratorConfig) -> Instance:
    config.check()
    rng = np.random.default_rng(config.seed)

    affiliates = _make_affiliates(config, rng)
    real = [a for a in affiliates if not a.is_unmatched_sink]
    base_quality = {a.id: rng.normal(0.0, config.base_quality_sd) for a in real}
    star = real[0].id
    base_quality[star] += config.star_quality_boost

    cases, history = _make_cases(config, rng, affiliates, base_quality)

    initial = CapacityProfile(
        {**{a.id: float(a.capacity) for a in real}, UNMATCHED_ID: INFINITE_CAPACITY}
    )
    revisions: list[tuple[int, CapacityProfile]] = []
    final = initial.copy()
    if config.revision is not None:
        frac, scale = config.revision
        at = max(1, int(math.ceil(frac * len(cases))))
        revised = CapacityProfile(
            {
                a: (INFINITE_CAPACITY if c == INFINITE_CAPACITY else float(int(round(c * scale))))
                for a, c in initial.remaining.items()
            }
        )
        revisions = [(at, revised)]
        final = revised.copy()

    instance = Instance(
        affiliates=affiliates,
        cases=cases,
        initial_caps=initial,
        final_caps=final,
        revisions=revisions,
        history_pool=history,
    )
    violations = validate(instance)
    if violations:  # generator bug, not user error
        raise AssertionError(f"generated instance is invalid: {violations[:3]}")
    return instance


def _make_affiliates(config, rng) -> list[Affiliate]:
    n = config.num_affiliates
    weights = rng.lognormal(0.0, 0.3, size=n)
    weights[0] = config.star_capacity_share  # the hub's size is structural, not sampled
    total_cap = config.total_refugees / config.tightness
    caps = np.maximum(1, np.round(total_cap * weights / weights.sum())).astype(int)

    affs: list[Affiliate] = []
    for i in range(n):
        nat = lang = None
        max_fs = None
        single_ok = True
        if i > 0:  # the star affiliate stays unrestricted
            if rng.random() < config.nationality_restriction_rate:
                k = int(rng.integers(3, len(NATIONALITIES)))
                nat = frozenset(rng.choice(NATIONALITIES, size=k, replace=False).tolist())
            if rng.random() < config.language_restriction_rate:
                k = int(rng.integers(2, len(LANGUAGES)))
                lang = frozenset(rng.choice(LANGUAGES, size=k, replace=False).tolist())
            if rng.random() < config.family_size_cap_rate:
                max_fs = int(rng.integers(4, 9))
            if rng.random() < config.single_parent_exclusion_rate:
                single_ok = False
        affs.append(
            Affiliate(
                id=f"A{i + 1:02d}",
                capacity=float(caps[i]),
                compat=CompatRules(
                    nationalities=nat,
                    languages=lang,
                    max_family_size=max_fs,
                    accepts_single_parents=single_ok,
                ),
            )
        )
    affs.append(unmatched_affiliate())
    return affs


def _draw_case(config, rng, affiliates, base_quality, case_id, date) -> Case:
    sizes = np.arange(1, len(config.case_size_weights) + 1)
    size = int(rng.choice(sizes, p=config.case_size_weights))
    nationality = str(rng.choice(NATIONALITIES))
    language = str(rng.choice(LANGUAGES))
    single_parent = bool(rng.random() < config.frac_single_parent)
    zero_score = rng.random() < config.frac_zero_score
    skill = rng.normal(config.skill_mean, config.skill_sd)

    probe = Case(
        id=case_id, size=size, scores={}, nationality=nationality,
        language=language, single_parent=single_parent,
    )
    real = [a for a in affiliates if not a.is_unmatched_sink]
    rule_ok = {a.id: a.compat.accepts(probe) for a in real}

    pool = "free"
    tie_aff = None
    if rng.random() < config.frac_us_ties:
        allowed = [a for a in real if rule_ok[a.id]]
        if allowed:
            pool = "us_ties"
            # existing ties concentrate where communities are larger
            w = np.asarray([a.capacity for a in allowed], dtype=float)
            tie_aff = allowed[int(rng.choice(len(allowed), p=w / w.sum()))].id

    scores: dict[str, float | Incompatible] = {UNMATCHED_ID: 0.0}
    estimates: dict[str, float] = {}
    for a in real:
        if zero_score:
            u = 0.0
        else:
            logit = base_quality[a.id] + skill + rng.normal(0.0, config.noise_sd)
            u = round(size / (1.0 + math.exp(-logit)), 9)
        compatible = rule_ok[a.id] if pool == "free" else a.id == tie_aff
        if compatible:
            scores[a.id] = u
        else:
            scores[a.id] = INCOMPATIBLE
            estimates[a.id] = u
    return Case(
        id=case_id,
        size=size,
        scores=scores,
        nationality=nationality,
        language=language,
        single_parent=single_parent,
        pool=pool,
        date=date,
        estimated_scores=estimates,
    )


def _make_cases(config, rng, affiliates, base_quality) -> tuple[list[Case], list[Case]]:
    cases: list[Case] = []
    refugees = 0
    while refugees < config.total_refugees:
        case = _draw_case(config, rng, affiliates, base_quality,
                          f"C{len(cases) + 1:05d}", config.year_start)
        cases.append(case)
        refugees += case.size
    n = len(cases)

    # batch sizes roughly uniform around the configured mean
    lo = max(1, int(round(config.mean_batch_cases)) - 3)
    hi = int(round(config.mean_batch_cases)) + 3
    batch_of: list[int] = []
    bid = 1
    while len(batch_of) < n:
        b = int(rng.integers(lo, hi + 1))
        batch_of.extend([bid] * b)
        bid += 1
    batch_of = batch_of[:n]

    out: list[Case] = []
    from dataclasses import replace as _replace

    for i, case in enumerate(cases):
        day = int((364 * i) / max(1, n - 1))
        out.append(
            _replace(
                case,
                arrival_index=i + 1,
                batch_id=batch_of[i],
                date=config.year_start + datetime.timedelta(days=day),
            )
        )

    n_hist = config.history_cases
    if n_hist is None:
        n_hist = int(round(n * config.history_months / 12.0))
    span_days = int(config.history_months * 30.4)
    history: list[Case] = []
    for j in range(n_hist):
        day = -span_days + int(span_days * j / max(1, n_hist - 1)) if n_hist > 1 else -span_days // 2
        day = min(day, -1)
        history.append(
            _draw_case(
                config, rng, affiliates, base_quality,
                f"H{j + 1:05d}", config.year_start + datetime.timedelta(days=day),
            )
        )
    return out, history


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _compat_to_json(c: CompatRules) -> dict:
    return {
        "nationalities": sorted(c.nationalities) if c.nationalities is not None else None,
        "languages": sorted(c.languages) if c.languages is not None else None,
        "max_family_size": c.max_family_size,
        "min_family_size": c.min_family_size,
        "accepts_single_parents": c.accepts_single_parents,
    }


def _cap_to_json(v: float):
    return "inf" if v == INFINITE_CAPACITY else int(v)


def _case_to_json(case: Case) -> dict:
    return {
        "id": case.id,
        "size": case.size,
        "scores": {
            a: (None if isinstance(u, Incompatible) else repr(float(u)))
            for a, u in case.scores.items()
        },
        "estimated_scores": {a: repr(float(u)) for a, u in case.estimated_scores.items()},
        "nationality": case.nationality,
        "language": case.language,
        "single_parent": case.single_parent,
        "pool": case.pool,
        "arrival_index": case.arrival_index,
        "batch_id": case.batch_id,
        "date": case.date.isoformat(),
    }


def write_instance(instance: Instance, path: str | Path) -> None:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "affiliates": [
            {
                "id": a.id,
                "capacity": _cap_to_json(a.capacity),
                "is_unmatched_sink": a.is_unmatched_sink,
                "compat": _compat_to_json(a.compat),
            }
            for a in instance.affiliates
        ],
        "cases": [_case_to_json(c) for c in instance.cases],
        "history_pool": [_case_to_json(c) for c in instance.history_pool],
        "initial_caps": {a: _cap_to_json(v) for a, v in instance.initial_caps.remaining.items()},
        "final_caps": {a: _cap_to_json(v) for a, v in instance.final_caps.remaining.items()},
        "revisions": [
            [idx, {a: _cap_to_json(v) for a, v in prof.remaining.items()}]
            for idx, prof in instance.revisions
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def _ctx_get(doc: dict, key: str, ctx: str):
    if key not in doc:
        raise InstanceFormatError(f"{ctx}: missing field {key!r}")
    return doc[key]


def _parse_cap(v, ctx: str) -> float:
    if v == "inf":
        return INFINITE_CAPACITY
    if isinstance(v, bool) or not isinstance(v, int):
        raise InstanceFormatError(f"{ctx}: capacity must be an integer or 'inf', got {v!r}")
    if v < 0:
        raise InstanceFormatError(f"{ctx}: capacity must be non-negative, got {v}")
    return float(v)


def _parse_compat(doc: dict, ctx: str) -> CompatRules:
    nat = _ctx_get(doc, "nationalities", ctx)
    lang = _ctx_get(doc, "languages", ctx)
    return CompatRules(
        nationalities=frozenset(nat) if nat is not None else None,
        languages=frozenset(lang) if lang is not None else None,
        max_family_size=_ctx_get(doc, "max_family_size", ctx),
        min_family_size=_ctx_get(doc, "min_family_size", ctx),
        accepts_single_parents=_ctx_get(doc, "accepts_single_parents", ctx),
    )


def _parse_case(doc: dict, ctx: str) -> Case:
    scores: dict[str, float | Incompatible] = {}
    for a, v in _ctx_get(doc, "scores", ctx).items():
        if v is None:
            scores[a] = INCOMPATIBLE
        else:
            try:
                scores[a] = float(v)
            except (TypeError, ValueError):
                raise InstanceFormatError(f"{ctx}.scores.{a}: not a decimal string: {v!r}") from None
    try:
        date = datetime.date.fromisoformat(_ctx_get(doc, "date", ctx))
    except ValueError:
        raise InstanceFormatError(f"{ctx}.date: not an ISO date") from None
    return Case(
        id=_ctx_get(doc, "id", ctx),
        size=_ctx_get(doc, "size", ctx),
        scores=scores,
        estimated_scores={a: float(v) for a, v in doc.get("estimated_scores", {}).items()},
        nationality=_ctx_get(doc, "nationality", ctx),
        language=_ctx_get(doc, "language", ctx),
        single_parent=_ctx_get(doc, "single_parent", ctx),
        pool=_ctx_get(doc, "pool", ctx),
        arrival_index=_ctx_get(doc, "arrival_index", ctx),
        batch_id=_ctx_get(doc, "batch_id", ctx),
        date=date,
    )


def _parse_profile(doc: dict, ctx: str) -> CapacityProfile:
    return CapacityProfile({a: _parse_cap(v, f"{ctx}.{a}") for a, v in doc.items()})


def read_instance(path: str | Path) -> Instance:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"{path}: not valid JSON at line {exc.lineno}: {exc.msg}") from None
    if doc.get("format") != FORMAT_NAME:
        raise InstanceFormatError(f"{path}: unrecognized format {doc.get('format')!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise InstanceFormatError(
            f"{path}: version {doc.get('version')!r} not supported (expected {FORMAT_VERSION})"
        )
    affiliates = [
        Affiliate(
            id=_ctx_get(a, "id", f"affiliates[{i}]"),
            capacity=_parse_cap(_ctx_get(a, "capacity", f"affiliates[{i}]"), f"affiliates[{i}].capacity"),
            is_unmatched_sink=_ctx_get(a, "is_unmatched_sink", f"affiliates[{i}]"),
            compat=_parse_compat(_ctx_get(a, "compat", f"affiliates[{i}]"), f"affiliates[{i}].compat"),
        )
        for i, a in enumerate(_ctx_get(doc, "affiliates", "instance"))
    ]
    cases = [_parse_case(c, f"cases[{i}]") for i, c in enumerate(_ctx_get(doc, "cases", "instance"))]
    history = [
        _parse_case(c, f"history_pool[{i}]")
        for i, c in enumerate(_ctx_get(doc, "history_pool", "instance"))
    ]
    revisions = [
        (idx, _parse_profile(prof, f"revisions[{i}]"))
        for i, (idx, prof) in enumerate(_ctx_get(doc, "revisions", "instance"))
    ]
    return Instance(
        affiliates=affiliates,
        cases=cases,
        initial_caps=_parse_profile(_ctx_get(doc, "initial_caps", "instance"), "initial_caps"),
        final_caps=_parse_profile(_ctx_get(doc, "final_caps", "instance"), "final_caps"),
        revisions=revisions,
        history_pool=history,
        version=FORMAT_VERSION,
    )
