from __future__ import annotations

import datetime

import hypothesis
import numpy as np
import pytest

from dynmatch.model import (
    INCOMPATIBLE,
    INFINITE_CAPACITY,
    UNMATCHED_ID,
    Affiliate,
    CapacityProfile,
    Case,
    Instance,
    unmatched_affiliate,
)

hypothesis.settings.register_profile(
    "ci", max_examples=60, deadline=None, derandomize=True
)
hypothesis.settings.load_profile("ci")

D0 = datetime.date(2018, 10, 1)


def make_case(cid, size, scores, *, index=0, batch=0, date=D0, pool="free", **kw):
    full = {UNMATCHED_ID: 0.0, **scores}
    return Case(
        id=cid, size=size, scores=full, arrival_index=index, batch_id=batch,
        date=date, pool=pool, **kw,
    )


def make_instance(affiliate_caps: dict[str, float], cases, history=None, revisions=None):
    """Instance from a {affiliate: capacity} map and pre-built cases."""
    affs = [Affiliate(id=a, capacity=float(c)) for a, c in affiliate_caps.items()]
    affs.append(unmatched_affiliate())
    caps = CapacityProfile(
        {**{a: float(c) for a, c in affiliate_caps.items()}, UNMATCHED_ID: INFINITE_CAPACITY}
    )
    return Instance(
        affiliates=affs,
        cases=list(cases),
        initial_caps=caps.copy(),
        final_caps=caps.copy(),
        revisions=list(revisions or []),
        history_pool=list(history or []),
    )


def random_cases(rng, n_cases, affiliates, *, max_size=1, incompat_rate=0.1, start_index=1):
    """Random unit- or multi-size cases over the given affiliate ids."""
    cases = []
    for i in range(n_cases):
        size = int(rng.integers(1, max_size + 1))
        scores = {}
        for a in affiliates:
            if rng.random() < incompat_rate:
                scores[a] = INCOMPATIBLE
            else:
                scores[a] = float(np.round(rng.random() * size, 6))
        cases.append(
            make_case(f"c{i}", size, scores, index=start_index + i, batch=start_index + i, date=D0)
        )
    return cases


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
