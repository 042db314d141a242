"""Long-running allocation service: batch intake, recommendations, what-if
queries, override commits with audit, and arrival-prediction entry.

The session wraps one engine run; every recommendation carries a snapshot
token and commits are rejected when the snapshot went stale.  State changes
append to a JSON-lines event log that can be replayed for crash recovery.
"""

from __future__ import annotations

import datetime
import json
import threading
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import matching, policies
from .model import Case, Incompatible, Instance
from .policies import EngineState, PolicyConfig
from .potentials import PotentialVector


class ServiceError(Exception):
    status_code = 400

    def __init__(self, code: str, message: str, **details: Any) -> None:
        super().__init__(message)
        self.code = code
        self.message = message
        self.details = details

    def payload(self) -> dict:
        return {"error": {"code": self.code, "message": self.message, **self.details}}


class ValidationFailed(ServiceError):
    status_code = 422


class CapacityExceeded(ServiceError):
    status_code = 409


class IncompatiblePlacement(ServiceError):
    status_code = 409


class StaleSnapshot(ServiceError):
    status_code = 409


class UnknownEntity(ServiceError):
    status_code = 404


@dataclass
class Recommendation:
    token: int
    batch_ids: list[str]
    placements: dict[str, str]
    adjusted_scores: dict[str, dict[str, float]]  # case -> affiliate -> u - s*p
    raw_scores: dict[str, dict[str, float]]
    compatible: dict[str, dict[str, bool]]
    fits: dict[str, dict[str, bool]]
    potentials: dict[str, float]
    objective: float


@dataclass
class AuditEntry:
    when: str
    token: int
    placements: dict[str, str]
    forced: list[str]
    committed_adjusted_total: float
    recommended_adjusted_total: float
    delta: float


class AllocationSession:
    """Single-writer allocation session over one instance's affiliates.

    Reads (what-if, state) hit immutable snapshots; commits and prediction
    changes serialize on a lock.
    """

    def __init__(
        self,
        instance: Instance,
        config: PolicyConfig,
        event_log: str | Path | None = None,
        _replaying: bool = False,
    ) -> None:
        self.instance = instance
        self.config = config
        self.state = EngineState.start(
            instance,
            instance.initial_caps,
            config,
        )
        if not instance.cases:
            self.state.n_total_cases = None
        self.pending: list[Case] = []
        self.recommendation: Recommendation | None = None
        self.current_potentials: PotentialVector | None = None
        self.audit_log: list[AuditEntry] = []
        self.token = 0
        self.committed_value = 0.0
        self.committed_matched = 0
        self.committed_refugees = 0
        self.commits = 0
        self._lock = threading.Lock()
        self._log_path = Path(event_log) if event_log else None
        if self._log_path and self._log_path.exists() and not _replaying:
            self._replay_log()

    # -- event log ---------------------------------------------------------

    def _append_event(self, kind: str, payload: dict) -> None:
        if self._log_path is None:
            return
        with self._log_path.open("a") as fh:
            fh.write(json.dumps({"event": kind, **payload}) + "\n")

    def _replay_log(self) -> None:
        events = [
            json.loads(line)
            for line in self._log_path.read_text().splitlines()
            if line.strip()
        ]
        path, self._log_path = self._log_path, None  # no re-append while replaying
        try:
            for ev in events:
                kind = ev.pop("event")
                if kind == "batch":
                    self.submit_batch(ev["cases"])
                elif kind == "commit":
                    self.commit(ev["placements"], set(ev["forced"]), ev["token"])
                elif kind == "prediction":
                    self.set_arrival_prediction(
                        total_refugees=ev.get("total_refugees"), mode=ev.get("mode")
                    )
        finally:
            self._log_path = path

    # -- intake ------------------------------------------------------------

    def submit_batch(self, cases_payload: list[dict]) -> Recommendation:
        """Validate and price a batch; recommend placements without
        committing anything."""
        with self._lock:
            batch = [self._parse_case(doc, i) for i, doc in enumerate(cases_payload)]
            if not batch:
                raise ValidationFailed("empty_batch", "batch must contain at least one case")
            seen = set()
            for case in batch:
                if case.id in seen:
                    raise ValidationFailed("duplicate_case", f"case {case.id!r} appears twice")
                seen.add(case.id)
            self._append_event("batch", {"cases": cases_payload})
            self.state.observe_batch(batch)
            pvec = policies.compute_potentials(self.state, batch, self.config)
            assignment = matching.solve_ilp(
                batch,
                self.state.remaining,
                self.state.sink_id,
                potentials=pvec.p,
                epsilon_matched=policies.epsilon_for(batch, self.config, self.state),
                tie_break=self.config.tie_break,
            )
            self.pending = batch
            self.current_potentials = pvec
            self.token += 1
            self.recommendation = self._build_recommendation(assignment, pvec)
            return self.recommendation

    def _parse_case(self, doc: dict, idx: int) -> Case:
        try:
            scores: dict[str, float | Incompatible] = {}
            for aff, v in doc["scores"].items():
                scores[aff] = Incompatible() if v is None else float(v)
            case = Case(
                id=str(doc["id"]),
                size=int(doc["size"]),
                scores=scores,
                nationality=doc.get("nationality", ""),
                language=doc.get("language", ""),
                single_parent=bool(doc.get("single_parent", False)),
                pool=doc.get("pool", "free"),
                date=datetime.date.fromisoformat(doc["date"]) if "date" in doc else self.state.now,
                estimated_scores={a: float(v) for a, v in doc.get("estimated_scores", {}).items()},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationFailed("bad_case", f"cases[{idx}]: {exc}") from None
        known = set(self.state.remaining.remaining)
        if set(case.scores) != known:
            raise ValidationFailed(
                "bad_case", f"cases[{idx}]: scores must cover exactly the known affiliates"
            )
        if case.size < 1:
            raise ValidationFailed("bad_case", f"cases[{idx}]: size must be positive")
        sink = self.state.sink_id
        if isinstance(case.scores[sink], Incompatible) or case.scores[sink] != 0.0:
            raise ValidationFailed("bad_case", f"cases[{idx}]: score at {sink!r} must be 0")
        return case

    def _build_recommendation(self, assignment: matching.Assignment, pvec: PotentialVector) -> Recommendation:
        adjusted: dict[str, dict[str, float]] = {}
        raw: dict[str, dict[str, float]] = {}
        compat: dict[str, dict[str, bool]] = {}
        fits: dict[str, dict[str, bool]] = {}
        for case in self.pending:
            adjusted[case.id] = {}
            raw[case.id] = {}
            compat[case.id] = {}
            fits[case.id] = {}
            for aff in sorted(case.scores):
                u = case.scores[aff]
                if isinstance(u, Incompatible):
                    est = case.estimated_scores.get(aff, 0.0)
                    compat[case.id][aff] = False
                    raw[case.id][aff] = est
                    adjusted[case.id][aff] = est - case.size * pvec.get(aff)
                else:
                    compat[case.id][aff] = True
                    raw[case.id][aff] = float(u)
                    adjusted[case.id][aff] = float(u) - case.size * pvec.get(aff)
                fits[case.id][aff] = self.state.remaining.fits(aff, case.size)
        return Recommendation(
            token=self.token,
            batch_ids=[c.id for c in self.pending],
            placements=dict(assignment.placement),
            adjusted_scores=adjusted,
            raw_scores=raw,
            compatible=compat,
            fits=fits,
            potentials=dict(pvec.p),
            objective=assignment.objective,
        )

    # -- queries -----------------------------------------------------------

    def whatif(self, case_id: str, affiliate_id: str) -> dict:
        rec = self.recommendation
        if rec is None or case_id not in rec.raw_scores:
            raise UnknownEntity("unknown_case", f"case {case_id!r} is not in the pending batch")
        if affiliate_id not in rec.raw_scores[case_id]:
            raise UnknownEntity("unknown_affiliate", f"unknown affiliate {affiliate_id!r}")
        return {
            "token": rec.token,
            "case_id": case_id,
            "affiliate_id": affiliate_id,
            "raw_score": rec.raw_scores[case_id][affiliate_id],
            "adjusted_score": rec.adjusted_scores[case_id][affiliate_id],
            "compatible": rec.compatible[case_id][affiliate_id],
            "fits": rec.fits[case_id][affiliate_id],
        }

    def state_view(self) -> dict:
        rem = {
            a: ("inf" if v == float("inf") else v)
            for a, v in self.state.remaining.remaining.items()
        }
        return {
            "token": self.token,
            "remaining": rem,
            "arrived_cases": self.state.arrived_cases,
            "arrived_refugees": self.state.arrived_refugees,
            "arrival_mode": self.config.arrival_mode,
            "manual_total_refugees": self.config.manual_total_refugees,
            "expected_remaining_cases": policies.expected_remaining_cases(self.state, self.config)
            if self._estimator_ready()
            else None,
            "potentials": dict(self.current_potentials.p) if self.current_potentials else {},
            "pending_cases": [c.id for c in self.pending],
        }

    def _estimator_ready(self) -> bool:
        if self.config.arrival_mode == "known_n":
            return self.state.n_total_cases is not None
        if self.config.arrival_mode == "manual_override":
            return self.config.manual_total_refugees is not None
        return True

    def metrics(self) -> dict:
        return {
            "commits": self.commits,
            "total_employment": self.committed_value,
            "matched_refugees": self.committed_matched,
            "arrived_refugees": self.committed_refugees,
            "matched_fraction": (
                self.committed_matched / self.committed_refugees
                if self.committed_refugees
                else 0.0
            ),
            "used": dict(self.state.used),
            "audit_entries": len(self.audit_log),
        }

    # -- mutations ---------------------------------------------------------

    def commit(self, placements: dict[str, str], forced: set[str], token: int) -> dict:
        """Apply placements for the pending batch.

        Capacity violations are rejected outright; incompatible placements
        require the case id to be listed in `forced`.
        """
        with self._lock:
            rec = self.recommendation
            if rec is None:
                raise ValidationFailed("no_pending_batch", "no batch awaiting commitment")
            if token != rec.token:
                raise StaleSnapshot(
                    "stale_snapshot",
                    f"recommendation token {rec.token} expected, got {token}",
                    expected=rec.token,
                )
            by_id = {c.id: c for c in self.pending}
            if set(placements) != set(by_id):
                raise ValidationFailed(
                    "placement_mismatch", "placements must cover exactly the pending batch"
                )
            usage: dict[str, int] = {}
            for cid, aff in placements.items():
                case = by_id[cid]
                if aff not in case.scores:
                    raise UnknownEntity("unknown_affiliate", f"unknown affiliate {aff!r}")
                if isinstance(case.scores[aff], Incompatible) and cid not in forced:
                    raise IncompatiblePlacement(
                        "incompatible_without_force",
                        f"case {cid!r} is incompatible with {aff!r}; set force to override",
                        case_id=cid,
                        affiliate_id=aff,
                    )
                if aff != self.state.sink_id:
                    usage[aff] = usage.get(aff, 0) + case.size
            for aff, units in usage.items():
                if not self.state.remaining.fits(aff, units):
                    raise CapacityExceeded(
                        "capacity_exceeded",
                        f"affiliate {aff!r} has {self.state.remaining[aff]} remaining, needs {units}",
                        affiliate_id=aff,
                    )

            committed_total = 0.0
            for cid, aff in placements.items():
                case = by_id[cid]
                if aff != self.state.sink_id:
                    self.state.remaining.consume(aff, case.size)
                    self.state.used[aff] = self.state.used.get(aff, 0) + case.size
                    self.committed_matched += case.size
                u = case.scores[aff]
                raw = case.estimated_scores.get(aff, 0.0) if isinstance(u, Incompatible) else float(u)
                self.committed_value += raw
                committed_total += rec.adjusted_scores[cid][aff]
                self.committed_refugees += case.size
            self.state.absorb_batch(self.pending)
            self.commits += 1

            recommended_total = sum(
                rec.adjusted_scores[cid][aff] for cid, aff in rec.placements.items()
            )
            entry = AuditEntry(
                when=datetime.datetime.now(datetime.timezone.utc).isoformat(),
                token=token,
                placements=dict(placements),
                forced=sorted(forced),
                committed_adjusted_total=committed_total,
                recommended_adjusted_total=recommended_total,
                delta=committed_total - recommended_total,
            )
            self.audit_log.append(entry)
            self._append_event(
                "commit", {"placements": placements, "forced": sorted(forced), "token": token}
            )
            self.pending = []
            self.recommendation = None
            return {"committed": len(placements), "delta": entry.delta, "token": token}

    def set_arrival_prediction(self, total_refugees: float | None = None, mode: str | None = None) -> dict:
        """Switch the arrival estimator; takes effect at the next batch."""
        with self._lock:
            if total_refugees is not None:
                if total_refugees <= 0:
                    raise ValidationFailed("bad_prediction", "prediction must be positive")
                self.config = replace(
                    self.config, arrival_mode="manual_override",
                    manual_total_refugees=float(total_refugees),
                )
            elif mode == "known_n" and self.state.n_total_cases is None:
                raise ValidationFailed("bad_prediction", "known_n requires a case schedule")
            elif mode in ("capacity_fraction", "known_n"):
                self.config = replace(self.config, arrival_mode=mode)
            else:
                raise ValidationFailed(
                    "bad_prediction", "provide total_refugees or a valid mode"
                )
            # a new prediction invalidates the current recommendation
            if self.recommendation is not None:
                self.token += 1
                pvec = policies.compute_potentials(self.state, self.pending, self.config)
                assignment = matching.solve_ilp(
                    self.pending,
                    self.state.remaining,
                    self.state.sink_id,
                    potentials=pvec.p,
                    epsilon_matched=policies.epsilon_for(self.pending, self.config, self.state),
                    tie_break=self.config.tie_break,
                )
                self.current_potentials = pvec
                self.recommendation = self._build_recommendation(assignment, pvec)
            self._append_event(
                "prediction", {"total_refugees": total_refugees, "mode": mode}
            )
            return {
                "arrival_mode": self.config.arrival_mode,
                "manual_total_refugees": self.config.manual_total_refugees,
                "token": self.token,
            }


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------


class BatchPayload(BaseModel):
    cases: list[dict]


class WhatifPayload(BaseModel):
    case_id: str
    affiliate_id: str


class CommitPayload(BaseModel):
    token: int
    placements: dict[str, str]
    force: list[str] = Field(default_factory=list)


class PredictionPayload(BaseModel):
    total_refugees: float | None = None
    mode: str | None = None


def create_app(session: AllocationSession) -> FastAPI:
    app = FastAPI(title="dynmatch allocation service")

    @app.exception_handler(ServiceError)
    async def _service_error(_, exc: ServiceError):
        return JSONResponse(status_code=exc.status_code, content=exc.payload())

    @app.post("/batch")
    def post_batch(payload: BatchPayload):
        return asdict(session.submit_batch(payload.cases))

    @app.get("/recommendation")
    def get_recommendation():
        if session.recommendation is None:
            raise UnknownEntity("no_pending_batch", "no batch awaiting commitment")
        return asdict(session.recommendation)

    @app.post("/whatif")
    def post_whatif(payload: WhatifPayload):
        return session.whatif(payload.case_id, payload.affiliate_id)

    @app.post("/commit")
    def post_commit(payload: CommitPayload):
        return session.commit(payload.placements, set(payload.force), payload.token)

    @app.post("/prediction")
    def post_prediction(payload: PredictionPayload):
        return session.set_arrival_prediction(payload.total_refugees, payload.mode)

    @app.get("/state")
    def get_state():
        return session.state_view()

    @app.get("/metrics")
    def get_metrics():
        return session.metrics()

    return app
