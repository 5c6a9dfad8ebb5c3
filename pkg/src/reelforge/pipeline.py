"""Staged pipeline runner: analysis, planning, generation, verification,
assembly, with event-log persistence and crash-resume.

Each stage writes its artifact file and a stage_done event; a rerun replays
the log, skips finished stages, and restores per-subclip selections, so an
interrupted run finishes with the same manifest an uninterrupted one
produces. Targeted regeneration and human approval re-open exactly the
affected subclips and everything chained downstream of them.
"""

from __future__ import annotations

import logging
import time
import uuid
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping

from .analysis import (
    AnalyzerClient,
    AnalyzerRole,
    fetch_analysis,
    fixture_clients,
    load_context,
    normalize_bundle,
    save_context,
)
from .assembler import (
    AssemblyManifest,
    assemble,
    export_concat_list,
    load_manifest,
    save_manifest,
)
from .characters import CharacterBank, build_bank, load_bank, save_bank
from .config import PipelineConfig
from .evaluation import (
    EvalJudgeClient,
    HashEvalJudge,
    ScoreCard,
    judge_video,
    load_cards,
    load_rubric,
    save_cards,
)
from .generation import (
    BackendClients,
    BackendKind,
    ClipCandidate,
    GenerationRun,
    SelectedClip,
    build_dependency_graph,
    clip_candidate_from_dict,
    clip_candidate_to_dict,
    keyframe_candidate_to_dict,
    mock_clients,
    mux_plan,
    run_generation,
)
from .jobstore import JobStore
from .planner import (
    ShotPlan,
    apply_continuity,
    assign_lipsync_flags,
    load_plan,
    save_plan,
    segment_song,
    validate_plan,
)
from .script import MockScriptClient, ScriptClient, ScriptResult
from .timegrid import MusicContext, SongMetadata, validate_context
from .verifier import (
    JudgeClient,
    JudgeModality,
    ScriptedJudge,
    SelectionOutcome,
    VerifierPolicy,
    accept_first,
    outcome_from_dict,
    outcome_to_dict,
    regeneration_loop,
)

log = logging.getLogger(__name__)


class Stage(str, Enum):
    ANALYSIS = "analysis"
    PLANNING = "planning"
    GENERATION = "generation"
    VERIFICATION = "verification"
    ASSEMBLY = "assembly"
    EVALUATION = "evaluation"
    DONE = "done"
    FAILED = "failed"


RUN_STAGES = (Stage.ANALYSIS, Stage.PLANNING, Stage.GENERATION, Stage.VERIFICATION, Stage.ASSEMBLY)


class PipelineError(Exception):
    """A stage-fatal failure; subclip-level failures never raise this."""


class ConflictError(PipelineError):
    """Mutation rejected: the target subclip is actively generating."""


class NotFoundError(PipelineError):
    """Unknown subclip or candidate."""


@dataclass
class Components:
    """Every external client the pipeline talks to."""

    analyzers: dict[AnalyzerRole, AnalyzerClient]
    script: ScriptClient
    backends: BackendClients
    image_judge: JudgeClient
    video_judge: JudgeClient
    eval_judge: EvalJudgeClient | None = None


def mock_components(workdir: str | Path, config: PipelineConfig, fixture_dir: str | Path) -> Components:
    """Fully deterministic component set: fixtures in, stub artifacts out."""
    return Components(
        analyzers=fixture_clients(fixture_dir),
        script=MockScriptClient(config.seed),
        backends=mock_clients(workdir),
        image_judge=ScriptedJudge(JudgeModality.IMAGE, salt=f"{config.seed}:image", pass_rate=0.9),
        video_judge=ScriptedJudge(JudgeModality.VIDEO, salt=f"{config.seed}:video", pass_rate=0.9),
        eval_judge=HashEvalJudge(salt=str(config.seed)),
    )


# ---------------------------------------------------------------------------
# Replayed state
# ---------------------------------------------------------------------------


@dataclass
class SubclipView:
    """One subclip's state as reconstructed from the event log."""

    subclip_id: str
    state: str = "pending"
    backend: str | None = None
    prompt: str = ""
    keyframe_candidates: list[dict[str, Any]] = field(default_factory=list)
    clip_candidates: list[dict[str, Any]] = field(default_factory=list)
    keyframe_outcome: dict[str, Any] | None = None
    clip_outcome: dict[str, Any] | None = None
    selected_candidate: str | None = None
    fallback_accepted: bool = False
    human_override: bool = False
    error: str | None = None
    batches: int = 0
    key_batches: int = 0

    @property
    def batch_offset(self) -> int:
        """Next safe batch index for BOTH candidate kinds.

        Keyframe and clip rounds can finish at different counts; regenerated
        batches start past whichever ran longer so candidate ids never
        collide with (and shadow) stale ones.
        """
        return max(self.batches, self.key_batches)

    def candidate_dict(self, candidate_id: str) -> dict[str, Any] | None:
        for rec in self.clip_candidates:
            if rec["candidate_id"] == candidate_id:
                return rec
        return None


@dataclass
class PipelineState:
    stages_done: set[str] = field(default_factory=set)
    stage: str = "analysis"
    error: str | None = None
    subclips: dict[str, SubclipView] = field(default_factory=dict)
    tokens: dict[str, dict[str, Any]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    stage_history: list[dict[str, Any]] = field(default_factory=list)

    def view(self, subclip_id: str) -> SubclipView:
        if subclip_id not in self.subclips:
            self.subclips[subclip_id] = SubclipView(subclip_id=subclip_id)
        return self.subclips[subclip_id]

    def selections(self) -> dict[str, SelectedClip]:
        out: dict[str, SelectedClip] = {}
        for subclip_id, view in self.subclips.items():
            if view.selected_candidate is None or view.state != "done":
                continue
            rec = view.candidate_dict(view.selected_candidate)
            if rec is None:
                continue
            out[subclip_id] = SelectedClip(
                subclip_id=subclip_id,
                candidate=clip_candidate_from_dict(rec),
                backend=BackendKind(view.backend or BackendKind.GENERAL_RENDER.value),
                fallback_accepted=view.fallback_accepted,
                human_override=view.human_override,
            )
        return out

    def failures(self) -> dict[str, str]:
        return {
            s: v.error or "failed" for s, v in self.subclips.items() if v.state == "failed"
        }


def _dedupe_extend(target: list[dict[str, Any]], items: list[dict[str, Any]]) -> None:
    seen = {rec["candidate_id"] for rec in target}
    for rec in items:
        if rec["candidate_id"] not in seen:
            target.append(rec)
            seen.add(rec["candidate_id"])


def rebuild_state(store: JobStore) -> PipelineState:
    state = PipelineState()
    for event in store.events():
        kind, p = event.kind, event.payload
        if kind == "stage_started":
            state.stage = p["stage"]
            state.stage_history.append({"stage": p["stage"], "status": "started", "ts": event.ts})
        elif kind == "stage_done":
            state.stages_done.add(p["stage"])
            state.stage = p["stage"]
            state.stage_history.append({"stage": p["stage"], "status": "done", "ts": event.ts})
        elif kind == "stage_failed":
            state.error = p.get("error")
            state.stage = "failed"
            state.stage_history.append(
                {"stage": p["stage"], "status": "failed", "ts": event.ts, "error": p.get("error")}
            )
        elif kind == "warning":
            state.warnings.append(p["text"])
        elif kind == "keyframe_batch":
            view = state.view(p["subclip_id"])
            _dedupe_extend(view.keyframe_candidates, p["candidates"])
            view.key_batches = max(view.key_batches, int(p["batch"]) + 1)
            view.prompt = p.get("prompt", view.prompt)
            view.state = "running"
        elif kind == "keyframe_selected":
            state.view(p["subclip_id"]).keyframe_outcome = p["outcome"]
        elif kind == "clip_batch":
            view = state.view(p["subclip_id"])
            _dedupe_extend(view.clip_candidates, p["candidates"])
            view.batches = max(view.batches, int(p["batch"]) + 1)
            view.backend = p.get("backend", view.backend)
            view.prompt = p.get("prompt", view.prompt)
            view.state = "running"
        elif kind == "clip_selected":
            view = state.view(p["subclip_id"])
            view.clip_outcome = p["outcome"]
            view.selected_candidate = p["outcome"].get("selected")
            view.fallback_accepted = bool(p["outcome"].get("fallback_accepted", False))
            view.human_override = False
            view.state = "done"
            view.error = None
        elif kind == "subclip_failed":
            view = state.view(p["subclip_id"])
            view.state = "failed"
            view.error = p.get("error")
        elif kind == "selection_invalidated":
            for subclip_id in p["subclip_ids"]:
                view = state.view(subclip_id)
                view.selected_candidate = None
                view.clip_outcome = None
                view.fallback_accepted = False
                view.human_override = False
                view.state = "blocked"
        elif kind == "regenerate_requested":
            state.tokens[p["token"]] = {"action": "regenerate", "subclip_id": p["subclip_id"]}
            state.view(p["subclip_id"]).state = "blocked"
        elif kind == "approved":
            state.tokens[p["token"]] = {
                "action": "approve",
                "subclip_id": p["subclip_id"],
                "candidate_id": p["candidate_id"],
            }
            view = state.view(p["subclip_id"])
            view.selected_candidate = p["candidate_id"]
            view.human_override = True
            view.fallback_accepted = False
            view.state = "done"
            view.error = None
    return state


# ---------------------------------------------------------------------------
# Job status projection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JobStatus:
    song_id: str
    stage: str
    subclip_states: dict[str, str]
    warnings: tuple[str, ...]
    error: str | None
    stage_history: tuple[dict[str, Any], ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "song_id": self.song_id,
            "stage": self.stage,
            "subclip_states": dict(self.subclip_states),
            "warnings": list(self.warnings),
            "error": self.error,
            "stage_history": [dict(h) for h in self.stage_history],
        }


# ---------------------------------------------------------------------------
# The pipeline
# ---------------------------------------------------------------------------


class Pipeline:
    """One song's run directory plus everything needed to advance it."""

    def __init__(
        self,
        workdir: str | Path,
        config: PipelineConfig,
        components: Components,
        clock: Callable[[], float] = time.time,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.workdir = Path(workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.components = components
        self.sleep = sleep
        self.store = JobStore(self.workdir / "events.ndjson", clock)

    # -- paths --------------------------------------------------------------

    @property
    def context_path(self) -> Path:
        return self.workdir / "context.json"

    @property
    def plan_path(self) -> Path:
        return self.workdir / "plan.json"

    @property
    def bank_path(self) -> Path:
        return self.workdir / "bank.json"

    @property
    def manifest_path(self) -> Path:
        return self.workdir / "manifest.json"

    @property
    def scorecards_path(self) -> Path:
        return self.workdir / "scorecards.ndjson"

    # -- state --------------------------------------------------------------

    def state(self) -> PipelineState:
        return rebuild_state(self.store)

    def status(self) -> JobStatus:
        state = self.state()
        song_id = "unknown"
        if self.context_path.exists():
            song_id = load_context(self.context_path).metadata.song_id
        subclip_states: dict[str, str] = {}
        if self.plan_path.exists():
            plan = load_plan(self.plan_path)
            for sub in plan.subclips:
                view = state.subclips.get(sub.subclip_id)
                subclip_states[sub.subclip_id] = view.state if view else "pending"
        stage = state.stage
        if Stage.ASSEMBLY.value in state.stages_done and stage not in ("failed",):
            stage = Stage.DONE.value
        return JobStatus(
            song_id=song_id,
            stage=stage,
            subclip_states=subclip_states,
            warnings=tuple(state.warnings),
            error=state.error,
            stage_history=tuple(state.stage_history),
        )

    # -- stage helpers ------------------------------------------------------

    def _stage(self, stage: Stage) -> "_StageGuard":
        return _StageGuard(self, stage)

    def run(
        self, metadata: SongMetadata | None = None, until: Stage | None = None
    ) -> AssemblyManifest | None:
        """Execute every unfinished stage up to `until` (default: all).

        Returns the manifest once assembly has run, otherwise None. Already
        completed stages are skipped, which is the whole crash-resume story:
        rerunning after an interruption replays the log and picks up where
        the last finished stage left off.
        """
        state = self.state()

        if Stage.ANALYSIS.value not in state.stages_done:
            with self._stage(Stage.ANALYSIS):
                ctx = self._run_analysis(metadata)
        else:
            ctx = load_context(self.context_path)
        if until is Stage.ANALYSIS:
            return None

        if Stage.PLANNING.value not in state.stages_done:
            with self._stage(Stage.PLANNING):
                plan, bank = self._run_planning(ctx)
        else:
            plan = load_plan(self.plan_path)
            bank = load_bank(self.bank_path) if self.bank_path.exists() else None
        if until is Stage.PLANNING:
            return None

        if Stage.GENERATION.value not in state.stages_done:
            with self._stage(Stage.GENERATION):
                self._run_generation(ctx, plan, bank, state)
        if until is Stage.GENERATION:
            return None

        state = self.state()
        if Stage.VERIFICATION.value not in state.stages_done:
            with self._stage(Stage.VERIFICATION):
                self._run_verification(state)
        if until is Stage.VERIFICATION:
            return None

        state = self.state()
        if Stage.ASSEMBLY.value not in state.stages_done:
            with self._stage(Stage.ASSEMBLY):
                manifest = self._run_assembly(ctx, plan, state)
        else:
            manifest = load_manifest(self.manifest_path)
        return manifest

    # -- analysis -----------------------------------------------------------

    def _run_analysis(self, metadata: SongMetadata | None) -> MusicContext:
        if metadata is None:
            raise PipelineError("analysis needs song metadata on the first run")
        bundle = fetch_analysis(
            metadata, self.components.analyzers, retries=self.config.retries, sleep=self.sleep
        )
        for role, error in bundle.errors.items():
            self.store.append("warning", {"text": f"analyzer {role}: {error}"})
        ctx = normalize_bundle(bundle, metadata)
        if not self.config.use_lyrics:
            ctx = replace(ctx, lyrics=())
        violations = validate_context(ctx)
        if violations:
            raise PipelineError(f"normalized context invalid: {[str(v) for v in violations]}")
        save_context(ctx, self.context_path)
        return ctx

    # -- planning -----------------------------------------------------------

    def _run_planning(self, ctx: MusicContext) -> tuple[ShotPlan, CharacterBank | None]:
        plan = segment_song(ctx, self.config.constraints)
        plan = assign_lipsync_flags(plan, ctx)
        script = self.components.script.write(ctx, plan)

        shots = tuple(
            replace(shot, description_slot=script.shot_descriptions.get(shot.shot_id))
            for shot in plan.shots
        )
        plan = replace(plan, shots=shots)

        bank: CharacterBank | None = None
        if self.config.use_character_bank:
            bank = build_bank(ctx.metadata.song_id, script.cast)
            save_bank(bank, self.bank_path)

        casts = _casts_from_script(script, plan)
        plan = apply_continuity(plan, casts)

        violations = validate_plan(plan, ctx.metadata.duration)
        if violations:
            raise PipelineError(f"plan invalid: {[str(v) for v in violations]}")
        save_plan(plan, self.plan_path)
        return plan, bank

    # -- generation ---------------------------------------------------------

    def _selectors(self, batch_offsets: Mapping[str, int] | None = None):
        offsets = dict(batch_offsets or {})
        policy = VerifierPolicy(
            video_scoring=self.config.video_scoring,
            alignment_weight=self.config.alignment_weight,
            identity_weight=self.config.identity_weight,
            max_rounds=self.config.max_rounds,
        )

        def select_keyframe(subclip, produce) -> SelectionOutcome:
            offset = offsets.get(subclip.subclip_id, 0)
            captured: list[list[dict[str, Any]]] = []

            def wrapped(batch: int):
                candidates = produce(batch + offset)
                captured.append([keyframe_candidate_to_dict(c) for c in candidates])
                self.store.append(
                    "keyframe_batch",
                    {
                        "subclip_id": subclip.subclip_id,
                        "batch": batch + offset,
                        "candidates": captured[-1],
                    },
                )
                return candidates

            if self.config.use_verifier:
                outcome = regeneration_loop(wrapped, self.components.image_judge, policy)
            else:
                outcome = accept_first(wrapped)
            self.store.append(
                "keyframe_selected",
                {"subclip_id": subclip.subclip_id, "outcome": outcome_to_dict(outcome)},
            )
            return outcome

        def select_clip(subclip, produce) -> SelectionOutcome:
            offset = offsets.get(subclip.subclip_id, 0)

            def wrapped(batch: int):
                candidates = produce(batch + offset)
                self.store.append(
                    "clip_batch",
                    {
                        "subclip_id": subclip.subclip_id,
                        "batch": batch + offset,
                        "backend": candidates[0].provenance.get("backend") if candidates else None,
                        "candidates": [clip_candidate_to_dict(c) for c in candidates],
                    },
                )
                return candidates

            if self.config.use_verifier:
                outcome = regeneration_loop(wrapped, self.components.video_judge, policy)
            else:
                outcome = accept_first(wrapped)
            self.store.append(
                "clip_selected",
                {"subclip_id": subclip.subclip_id, "outcome": outcome_to_dict(outcome)},
            )
            return outcome

        return select_keyframe, select_clip

    def _observer(self, kind: str, payload: dict[str, Any]) -> None:
        if kind in ("subclip_failed", "subclip_restored"):
            self.store.append(kind, payload)

    def _run_generation(
        self,
        ctx: MusicContext,
        plan: ShotPlan,
        bank: CharacterBank | None,
        state: PipelineState,
        batch_offsets: Mapping[str, int] | None = None,
        only: set[str] | None = None,
    ) -> GenerationRun:
        preselected = state.selections()
        if only is not None:
            # Re-run the listed subclips; keep every other resolved selection.
            preselected = {s: sel for s, sel in preselected.items() if s not in only}
        select_keyframe, select_clip = self._selectors(batch_offsets)
        run = run_generation(
            plan,
            bank,
            self.components.backends,
            self.config,
            vocal_stem_ref=ctx.metadata.vocal_stem_ref,
            select_keyframe=select_keyframe,
            select_clip=select_clip,
            preselected=preselected,
            sleep=self.sleep,
            observer=self._observer,
        )
        for warning in run.warnings:
            self.store.append("warning", {"text": warning})
        return run

    # -- verification -------------------------------------------------------

    def _run_verification(self, state: PipelineState) -> None:
        """Audit pass over stored outcomes: gate soundness plus counts."""
        selected = fallback = failed = 0
        for view in state.subclips.values():
            if view.state == "failed":
                failed += 1
                continue
            if view.selected_candidate is None:
                continue
            if view.fallback_accepted:
                fallback += 1
                continue
            selected += 1
            if self.config.use_verifier and view.clip_outcome and not view.human_override:
                outcome = outcome_from_dict(view.clip_outcome)
                verdict = outcome.verdict_for(view.selected_candidate)
                if verdict is not None and not getattr(verdict, "feasibility_pass", True):
                    raise PipelineError(
                        f"gate violation: {view.subclip_id} selected a failed candidate"
                    )
        self.store.append(
            "verification_summary",
            {"selected": selected, "fallback": fallback, "failed": failed},
        )

    # -- assembly -----------------------------------------------------------

    def _run_assembly(
        self, ctx: MusicContext, plan: ShotPlan, state: PipelineState
    ) -> AssemblyManifest:
        selections = state.selections()
        audio = mux_plan(
            selections,
            ctx.metadata.song_id,
            ctx.metadata.mix_audio_ref,
            ctx.metadata.duration,
            ctx.metadata.vocal_stem_ref,
        )
        manifest = assemble(plan, selections, audio, state.failures())
        save_manifest(manifest, self.manifest_path)
        if not manifest.gaps:
            (self.workdir / "concat.txt").write_text(
                export_concat_list(manifest), encoding="utf-8"
            )
        self.store.append("manifest_written", {"gaps": len(manifest.gaps)})
        return manifest

    # -- targeted mutations (review loop) ------------------------------------

    def active_subclips(self) -> set[str]:
        state = self.state()
        return {s for s, v in state.subclips.items() if v.state == "running"}

    def regenerate(self, subclip_id: str, token: str | None = None) -> dict[str, Any]:
        """Fresh candidates for one subclip; downstream chain re-opens too."""
        token = token or uuid.uuid4().hex
        ctx, plan, bank = self._load_artifacts()
        if all(s.subclip_id != subclip_id for s in plan.subclips):
            raise NotFoundError(f"unknown subclip {subclip_id!r}")
        state = self.state()
        if token in state.tokens:
            return {"token": token, "duplicate": True, **state.tokens[token]}
        if state.subclips.get(subclip_id) and state.subclips[subclip_id].state == "running":
            raise ConflictError(f"subclip {subclip_id} is generating right now")

        graph = build_dependency_graph(plan)
        downstream = graph.transitive_downstream(subclip_id)
        targets = [subclip_id] + downstream
        offsets = {
            target: state.subclips[target].batch_offset
            for target in targets
            if target in state.subclips
        }
        self.store.append("regenerate_requested", {"subclip_id": subclip_id, "token": token})
        if downstream:
            self.store.append(
                "selection_invalidated",
                {"subclip_ids": downstream, "cause_subclip": subclip_id},
            )
        state = self.state()
        self._run_generation(ctx, plan, bank, state, batch_offsets=offsets, only=set(targets))
        self._reassemble(ctx, plan)
        return {"token": token, "duplicate": False, "subclip_id": subclip_id, "downstream": downstream}

    def approve(self, subclip_id: str, candidate_id: str, token: str | None = None) -> dict[str, Any]:
        """Human override: force a candidate, then re-chain downstream."""
        token = token or uuid.uuid4().hex
        ctx, plan, bank = self._load_artifacts()
        state = self.state()
        if token in state.tokens:
            return {"token": token, "duplicate": True, **state.tokens[token]}
        view = state.subclips.get(subclip_id)
        if view is None:
            raise NotFoundError(f"unknown subclip {subclip_id!r}")
        if view.state == "running":
            raise ConflictError(f"subclip {subclip_id} is generating right now")
        if view.candidate_dict(candidate_id) is None:
            raise NotFoundError(f"subclip {subclip_id} has no candidate {candidate_id!r}")

        self.store.append(
            "approved", {"subclip_id": subclip_id, "candidate_id": candidate_id, "token": token}
        )
        graph = build_dependency_graph(plan)
        downstream = graph.transitive_downstream(subclip_id)
        if downstream:
            self.store.append(
                "selection_invalidated",
                {"subclip_ids": downstream, "cause_subclip": subclip_id},
            )
            state = self.state()
            offsets = {
                target: state.subclips[target].batch_offset
                for target in downstream
                if target in state.subclips
            }
            self._run_generation(ctx, plan, bank, state, batch_offsets=offsets, only=set(downstream))
        self._reassemble(ctx, plan)
        return {"token": token, "duplicate": False, "subclip_id": subclip_id, "downstream": downstream}

    def _reassemble(self, ctx: MusicContext, plan: ShotPlan) -> None:
        state = self.state()
        self._run_verification(state)
        manifest = self._run_assembly(ctx, plan, state)
        log.info("reassembled manifest for %s, %d gaps", plan.song_id, len(manifest.gaps))

    def _load_artifacts(self) -> tuple[MusicContext, ShotPlan, CharacterBank | None]:
        if not self.context_path.exists() or not self.plan_path.exists():
            raise PipelineError("run the pipeline before mutating subclips")
        ctx = load_context(self.context_path)
        plan = load_plan(self.plan_path)
        bank = load_bank(self.bank_path) if self.bank_path.exists() else None
        return ctx, plan, bank

    # -- evaluation ---------------------------------------------------------

    def evaluate(self) -> ScoreCard:
        """Score the assembled output with the configured judge client."""
        if self.components.eval_judge is None:
            raise PipelineError("no evaluation judge configured")
        if not self.manifest_path.exists():
            raise PipelineError("assemble before evaluating")
        ctx = load_context(self.context_path)
        with self._stage(Stage.EVALUATION):
            card = judge_video(
                video_ref=str(self.manifest_path),
                audio_ref=ctx.metadata.mix_audio_ref,
                rubric=load_rubric(),
                judge=self.components.eval_judge,
                video_id=ctx.metadata.song_id,
            )
            existing = load_cards(self.scorecards_path) if self.scorecards_path.exists() else []
            existing = [c for c in existing if (c.video_id, c.rater) != (card.video_id, card.rater)]
            save_cards(existing + [card], self.scorecards_path)
        return card

    def scores(self) -> list[ScoreCard]:
        if not self.scorecards_path.exists():
            return []
        return load_cards(self.scorecards_path)


class _StageGuard:
    """Context manager writing stage_started/stage_done/stage_failed events."""

    def __init__(self, pipeline: Pipeline, stage: Stage):
        self.pipeline = pipeline
        self.stage = stage

    def __enter__(self) -> "_StageGuard":
        self.pipeline.store.append("stage_started", {"stage": self.stage.value})
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc_type is None:
            self.pipeline.store.append("stage_done", {"stage": self.stage.value})
        else:
            self.pipeline.store.append(
                "stage_failed", {"stage": self.stage.value, "error": str(exc)}
            )
        return False


def _casts_from_script(script: ScriptResult, plan: ShotPlan) -> dict[str, frozenset[str]]:
    """Which cast names each shot's description mentions (marker scan)."""
    names = {str(rec["name"]) for rec in script.cast}
    casts: dict[str, frozenset[str]] = {}
    for shot in plan.shots:
        text = script.shot_descriptions.get(shot.shot_id, "")
        mentioned = {name for name in names if f"{{{{{name}}}}}" in text or name in text}
        casts[shot.shot_id] = frozenset(mentioned)
    return casts
