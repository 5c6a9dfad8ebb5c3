"""Job-control HTTP API under /v1: status polling, timeline projection,
candidate review, regeneration, and approval.

Readers are served straight from the replayed event log. Mutations are
validated synchronously (unknown target, duplicate token, active conflict)
and then handed to a single background worker, so requests return at once
and mutations against the same job never interleave. Clients poll /v1/status
for progress; the documented interval is 1 second.
"""

from __future__ import annotations

import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from typing import Any

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .analysis import context_to_dict, load_context
from .assembler import load_manifest, manifest_to_dict
from .evaluation import CRITERION_CODES, aggregate, present
from .generation import build_dependency_graph
from .pipeline import Pipeline, PipelineState, SubclipView
from .planner import load_plan, plan_to_dict
from .timegrid import SongMetadata

POLL_INTERVAL_S = 1.0


class RegenerateBody(BaseModel):
    token: str | None = None


class ApproveBody(BaseModel):
    candidate_id: str
    token: str | None = None


class RunBody(BaseModel):
    token: str | None = None


@dataclass
class _Registry:
    """In-process mutation bookkeeping: per-subclip serialization + tokens."""

    lock: threading.Lock = field(default_factory=threading.Lock)
    inflight: dict[str, str] = field(default_factory=dict)
    tokens: dict[str, dict[str, Any]] = field(default_factory=dict)

    RUN_KEY = "__run__"


def _duplicate_response(token: str, record: dict[str, Any]) -> JSONResponse:
    # completed records embed the mutation's own result, which carries its
    # original duplicate=False; the replay marker has to win
    body = dict(record)
    body.update(token=token, duplicate=True)
    return JSONResponse(status_code=200, content=body)


def _candidate_payload(view: SubclipView) -> dict[str, Any]:
    """Candidates in history order with their verdicts merged in."""
    verdicts: dict[str, dict[str, Any]] = {}
    if view.clip_outcome:
        for verdict in view.clip_outcome.get("history", []):
            verdicts.setdefault(verdict["candidate_id"], verdict)
    candidates = []
    for rec in view.clip_candidates:
        entry = dict(rec)
        entry["verdict"] = verdicts.get(rec["candidate_id"])
        entry["selected"] = rec["candidate_id"] == view.selected_candidate
        candidates.append(entry)
    key_verdicts: dict[str, dict[str, Any]] = {}
    if view.keyframe_outcome:
        for verdict in view.keyframe_outcome.get("history", []):
            key_verdicts.setdefault(verdict["candidate_id"], verdict)
    keyframes = []
    for rec in view.keyframe_candidates:
        entry = dict(rec)
        entry["verdict"] = key_verdicts.get(rec["candidate_id"])
        keyframes.append(entry)
    return {
        "subclip_id": view.subclip_id,
        "state": view.state,
        "backend": view.backend,
        "selected_candidate": view.selected_candidate,
        "fallback_accepted": view.fallback_accepted,
        "human_override": view.human_override,
        "error": view.error,
        "candidates": candidates,
        "keyframes": keyframes,
    }


def create_app(
    pipeline: Pipeline,
    metadata: SongMetadata | None = None,
    workers: int = 1,
) -> FastAPI:
    """Wire one pipeline instance into the versioned HTTP surface.

    `metadata` seeds the very first /v1/run when no context exists yet;
    after analysis has run once the server no longer needs it.
    """
    registry = _Registry()
    executor = ThreadPoolExecutor(max_workers=workers)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        executor.shutdown(wait=True)

    app = FastAPI(title="music video pipeline", lifespan=lifespan)

    def _state(required: bool = False) -> PipelineState:
        state = pipeline.state()
        if required and not pipeline.plan_path.exists():
            raise HTTPException(status_code=409, detail="no plan yet; run the pipeline first")
        return state

    def _check_token(token: str, state: PipelineState) -> dict[str, Any] | None:
        if token in registry.tokens:
            return registry.tokens[token]
        if token in state.tokens:
            return state.tokens[token]
        return None

    def _claim(targets: list[str], token: str, record: dict[str, Any]) -> None:
        if _Registry.RUN_KEY in registry.inflight:
            raise HTTPException(status_code=409, detail="pipeline run in progress; retry later")
        busy = [t for t in targets if t in registry.inflight]
        if busy:
            raise HTTPException(
                status_code=409, detail=f"generation active for {busy[0]}; retry later"
            )
        for target in targets:
            registry.inflight[target] = token
        registry.tokens[token] = record

    def _release(targets: list[str], token: str) -> None:
        with registry.lock:
            for target in targets:
                if registry.inflight.get(target) == token:
                    del registry.inflight[target]

    def _submit(targets: list[str], token: str, work) -> None:
        def job() -> None:
            try:
                result = work()
                registry.tokens[token].update(status="done", **result)
            except Exception as err:  # surfaced on the token record, not lost
                registry.tokens[token].update(status="failed", error=str(err))
            finally:
                _release(targets, token)

        executor.submit(job)

    # -- readers ------------------------------------------------------------

    @app.get("/v1/status")
    def get_status() -> dict[str, Any]:
        status = pipeline.status().to_dict()
        status["poll_interval_s"] = POLL_INTERVAL_S
        status["active_mutations"] = sorted(
            t for t in pipeline_inflight() if t != _Registry.RUN_KEY
        )
        return status

    def pipeline_inflight() -> list[str]:
        with registry.lock:
            return list(registry.inflight)

    @app.get("/v1/shots")
    def get_shots() -> dict[str, Any]:
        if not pipeline.plan_path.exists() or not pipeline.context_path.exists():
            raise HTTPException(status_code=404, detail="no plan yet")
        plan = pipeline_plan()
        ctx = load_context(pipeline.context_path)
        state = pipeline.state()
        plan_dict = plan_to_dict(plan)
        ctx_dict = context_to_dict(ctx)
        state_by_subclip = {
            s: {
                "state": v.state,
                "selected_candidate": v.selected_candidate,
                "fallback_accepted": v.fallback_accepted,
                "human_override": v.human_override,
                "error": v.error,
            }
            for s, v in state.subclips.items()
        }
        for sub in plan_dict["subclips"]:
            sub.update(
                state_by_subclip.get(
                    sub["subclip_id"],
                    {
                        "state": "pending",
                        "selected_candidate": None,
                        "fallback_accepted": False,
                        "human_override": False,
                        "error": None,
                    },
                )
            )
        return {
            "song_id": plan.song_id,
            "fps": ctx_dict["fps"],
            "total_frames": ctx_dict["metadata"]["duration_frames"],
            "structure": ctx_dict["structure"],
            "lyrics": ctx_dict["lyrics"],
            "shots": plan_dict["shots"],
            "subclips": plan_dict["subclips"],
        }

    def pipeline_plan():
        return load_plan(pipeline.plan_path)

    @app.get("/v1/subclips/{subclip_id}/candidates")
    def get_candidates(subclip_id: str) -> dict[str, Any]:
        state = _state()
        view = state.subclips.get(subclip_id)
        if view is None:
            if not _known_subclip(subclip_id):
                raise HTTPException(status_code=404, detail=f"unknown subclip {subclip_id}")
            view = SubclipView(subclip_id=subclip_id)
        return _candidate_payload(view)

    def _known_subclip(subclip_id: str) -> bool:
        if not pipeline.plan_path.exists():
            return False
        return any(s.subclip_id == subclip_id for s in pipeline_plan().subclips)

    @app.get("/v1/scores")
    def get_scores() -> dict[str, Any]:
        cards = pipeline.scores()
        out = []
        for card in cards:
            cats = aggregate(card)
            out.append(
                {
                    "video_id": card.video_id,
                    "rater": card.rater,
                    "scores": {k: card.scores[k] for k in CRITERION_CODES},
                    "categories": {
                        "Technical": present(cats.technical),
                        "PostProduction": present(cats.post_production),
                        "Content": present(cats.content),
                        "Art": present(cats.art),
                        "Total": present(cats.weighted_total),
                    },
                }
            )
        return {"cards": out}

    @app.get("/v1/manifest")
    def get_manifest() -> dict[str, Any]:
        if not pipeline.manifest_path.exists():
            raise HTTPException(status_code=404, detail="no manifest yet")
        return manifest_to_dict(load_manifest(pipeline.manifest_path))

    # -- mutations ----------------------------------------------------------

    @app.post("/v1/run", status_code=202)
    def post_run(body: RunBody | None = None):
        token = (body.token if body else None) or uuid.uuid4().hex
        with registry.lock:
            existing = _check_token(token, pipeline.state())
            if existing is not None:
                return _duplicate_response(token, existing)
            _claim([_Registry.RUN_KEY], token, {"action": "run", "status": "accepted"})
        _submit([_Registry.RUN_KEY], token, lambda: _run_result())
        return {"token": token, "duplicate": False, "status": "accepted"}

    def _run_result() -> dict[str, Any]:
        manifest = pipeline.run(metadata)
        return {"gaps": len(manifest.gaps)}

    @app.post("/v1/subclips/{subclip_id}/regenerate", status_code=202)
    def post_regenerate(subclip_id: str, body: RegenerateBody | None = None):
        token = (body.token if body else None) or uuid.uuid4().hex
        with registry.lock:
            state = _state(required=True)
            existing = _check_token(token, state)
            if existing is not None:
                return _duplicate_response(token, existing)
            if not _known_subclip(subclip_id):
                raise HTTPException(status_code=404, detail=f"unknown subclip {subclip_id}")
            targets = [subclip_id] + _downstream(subclip_id)
            _claim(
                targets,
                token,
                {"action": "regenerate", "subclip_id": subclip_id, "status": "accepted"},
            )
        _submit(targets, token, lambda: pipeline.regenerate(subclip_id, token))
        return {"token": token, "duplicate": False, "status": "accepted", "subclip_id": subclip_id}

    @app.post("/v1/subclips/{subclip_id}/approve", status_code=202)
    def post_approve(subclip_id: str, body: ApproveBody):
        token = body.token or uuid.uuid4().hex
        with registry.lock:
            state = _state(required=True)
            existing = _check_token(token, state)
            if existing is not None:
                return _duplicate_response(token, existing)
            view = state.subclips.get(subclip_id)
            if view is None or not _known_subclip(subclip_id):
                raise HTTPException(status_code=404, detail=f"unknown subclip {subclip_id}")
            if view.candidate_dict(body.candidate_id) is None:
                raise HTTPException(
                    status_code=404,
                    detail=f"subclip {subclip_id} has no candidate {body.candidate_id}",
                )
            targets = [subclip_id] + _downstream(subclip_id)
            _claim(
                targets,
                token,
                {
                    "action": "approve",
                    "subclip_id": subclip_id,
                    "candidate_id": body.candidate_id,
                    "status": "accepted",
                },
            )
        _submit(targets, token, lambda: pipeline.approve(subclip_id, body.candidate_id, token))
        return {
            "token": token,
            "duplicate": False,
            "status": "accepted",
            "subclip_id": subclip_id,
            "candidate_id": body.candidate_id,
        }

    def _downstream(subclip_id: str) -> list[str]:
        return build_dependency_graph(pipeline_plan()).transitive_downstream(subclip_id)

    @app.get("/v1/tokens/{token}")
    def get_token(token: str) -> dict[str, Any]:
        record = _check_token(token, pipeline.state())
        if record is None:
            raise HTTPException(status_code=404, detail="unknown token")
        return {"token": token, **record}

    return app
