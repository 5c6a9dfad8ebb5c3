"""Generation orchestration: backends, routing, keyframe chaining, retries.

The plan's subclips form dependency chains (a chained subclip seeds from the
previous one's last frame), so execution follows the chain topology:
independent chains run in parallel, members of a chain run in order. Each
subclip gets a batch of candidates, a selector picks one (the verifier in
normal runs, first-candidate in the ablation), and the winner's last frame
unblocks the next subclip. Real backends sit behind a small wire contract;
deterministic mocks implement it with JSON stub artifacts.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

from .characters import CharacterBank, inject, referenced_profiles
from .config import PipelineConfig
from .planner import KeyframeSource, Shot, ShotPlan, SubClip
from .script import strip_markers
from .timegrid import FrameTime
from .verifier import SelectionOutcome, accept_first

log = logging.getLogger(__name__)


class BackendKind(str, Enum):
    GENERAL_RENDER = "general_render"
    LIP_SYNC = "lip_sync"


class JobState(str, Enum):
    PENDING = "pending"
    BLOCKED = "blocked"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


class BackendError(Exception):
    """Backend rejected the request or returned a broken response."""


class RetriableBackendError(BackendError):
    """Transient backend failure; the orchestrator may retry."""


class GenerationFailed(Exception):
    """A subclip exhausted its retries; carries the terminal cause."""

    def __init__(self, subclip_id: str, cause: str):
        super().__init__(f"{subclip_id}: {cause}")
        self.subclip_id = subclip_id
        self.cause = cause


@dataclass(frozen=True)
class BackendCapability:
    min_frames: int
    max_frames: int
    accepts_audio: bool


@dataclass(frozen=True)
class BackendRequest:
    prompt: str
    duration_frames: int
    seed: int
    keyframe: str | None = None
    audio_ref: str | None = None


@dataclass(frozen=True)
class BackendResponse:
    artifact: str
    last_frame: str
    duration_frames: int | None = None


class ImageBackendClient(Protocol):
    def capability(self) -> BackendCapability: ...

    def generate(self, request: BackendRequest) -> BackendResponse: ...


class VideoBackendClient(Protocol):
    def capability(self) -> BackendCapability: ...

    def render(self, request: BackendRequest) -> BackendResponse: ...


@dataclass(frozen=True)
class KeyframeCandidate:
    candidate_id: str
    subclip_id: str
    artifact: str
    provenance: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ClipCandidate:
    candidate_id: str
    subclip_id: str
    artifact: str
    last_frame: str
    duration: FrameTime
    provenance: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class SelectedClip:
    """One resolved subclip: the winning candidate plus provenance flags."""

    subclip_id: str
    candidate: ClipCandidate
    backend: BackendKind
    fallback_accepted: bool = False
    human_override: bool = False


# ---------------------------------------------------------------------------
# Mock backends (JSON stub artifacts, no media codecs anywhere)
# ---------------------------------------------------------------------------


def _digest(*parts: Any) -> str:
    joined = "\x1f".join(str(p) for p in parts)
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()[:16]


def derive_seed(*parts: Any) -> int:
    joined = "\x1f".join(str(p) for p in parts)
    raw = hashlib.sha256(joined.encode("utf-8")).digest()
    return int.from_bytes(raw[:4], "big")


class MockImageBackend:
    """Writes a JSON stub per keyframe; pure function of the request."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def capability(self) -> BackendCapability:
        return BackendCapability(min_frames=1, max_frames=1, accepts_audio=False)

    def generate(self, request: BackendRequest) -> BackendResponse:
        if request.audio_ref is not None:
            raise BackendError("image backend accepts no audio")
        token = _digest("image", request.prompt, request.keyframe, request.seed)
        locator = f"artifacts/key_{token}.json"
        _write_stub(
            self.root / locator,
            {
                "kind": "keyframe",
                "prompt": request.prompt,
                "seed": request.seed,
                "token": token,
            },
        )
        return BackendResponse(artifact=locator, last_frame=f"frame:{token}")


class MockVideoBackend:
    """Deterministic clip renderer stub for one backend kind."""

    def __init__(self, root: str | Path, kind: BackendKind):
        self.root = Path(root)
        self.kind = kind

    def capability(self) -> BackendCapability:
        return BackendCapability(
            min_frames=24,
            max_frames=480,
            accepts_audio=self.kind is BackendKind.LIP_SYNC,
        )

    def render(self, request: BackendRequest) -> BackendResponse:
        cap = self.capability()
        if not cap.min_frames <= request.duration_frames <= cap.max_frames:
            raise BackendError(
                f"duration {request.duration_frames} outside backend range "
                f"[{cap.min_frames}, {cap.max_frames}]"
            )
        if self.kind is BackendKind.LIP_SYNC and not request.audio_ref:
            raise BackendError("lip_sync render requires an audio stem")
        if self.kind is BackendKind.GENERAL_RENDER and request.audio_ref:
            raise BackendError("general_render accepts no audio")
        token = _digest(
            self.kind.value,
            request.prompt,
            request.keyframe,
            request.audio_ref,
            request.duration_frames,
            request.seed,
        )
        locator = f"artifacts/clip_{token}.json"
        _write_stub(
            self.root / locator,
            {
                "kind": "clip",
                "backend": self.kind.value,
                "prompt": request.prompt,
                "keyframe": request.keyframe,
                "audio_ref": request.audio_ref,
                "duration_frames": request.duration_frames,
                "seed": request.seed,
                "token": token,
            },
        )
        return BackendResponse(
            artifact=locator,
            last_frame=f"frame:{token}",
            duration_frames=request.duration_frames,
        )


def _write_stub(path: Path, payload: dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass
class BackendClients:
    image: ImageBackendClient
    general: VideoBackendClient
    lip_sync: VideoBackendClient

    def video_for(self, kind: BackendKind) -> VideoBackendClient:
        return self.lip_sync if kind is BackendKind.LIP_SYNC else self.general


def mock_clients(root: str | Path) -> BackendClients:
    return BackendClients(
        image=MockImageBackend(root),
        general=MockVideoBackend(root, BackendKind.GENERAL_RENDER),
        lip_sync=MockVideoBackend(root, BackendKind.LIP_SYNC),
    )


# ---------------------------------------------------------------------------
# Routing and dependency structure
# ---------------------------------------------------------------------------


def route_backend(
    shot: Shot, config: PipelineConfig, vocal_stem_ref: str | None
) -> tuple[BackendKind, str | None]:
    """Pick the backend for a shot; returns (kind, warning-or-None).

    Lip-sync needs the shot flag, the config switch, and a vocal stem. A
    flagged shot without a stem downgrades to general_render with a warning
    instead of failing.
    """
    if not shot.lipsync or not config.lipsync_enabled:
        return BackendKind.GENERAL_RENDER, None
    if vocal_stem_ref is None:
        warning = f"shot {shot.shot_id}: lipsync requested but no vocal stem; using general_render"
        log.warning(warning)
        return BackendKind.GENERAL_RENDER, warning
    return BackendKind.LIP_SYNC, None


@dataclass(frozen=True)
class DependencyGraph:
    """Chain structure over subclips, in plan (temporal) order."""

    order: tuple[str, ...]
    upstream: dict[str, str | None]
    downstream: dict[str, tuple[str, ...]]

    @property
    def roots(self) -> tuple[str, ...]:
        return tuple(s for s in self.order if self.upstream[s] is None)

    def transitive_downstream(self, subclip_id: str) -> list[str]:
        out: list[str] = []
        frontier = list(self.downstream.get(subclip_id, ()))
        while frontier:
            current = frontier.pop(0)
            out.append(current)
            frontier.extend(self.downstream.get(current, ()))
        return out

    def chains(self) -> list[list[str]]:
        """Maximal dependency chains; every subclip is in exactly one."""
        result = []
        for root in self.roots:
            chain = [root]
            while self.downstream.get(chain[-1]):
                chain.append(self.downstream[chain[-1]][0])
            result.append(chain)
        return result


def build_dependency_graph(plan: ShotPlan) -> DependencyGraph:
    order = tuple(s.subclip_id for s in plan.subclips)
    upstream: dict[str, str | None] = {}
    downstream: dict[str, tuple[str, ...]] = {}
    for i, sub in enumerate(plan.subclips):
        if sub.keyframe_source is KeyframeSource.PREVIOUS_LAST_FRAME:
            if i == 0:
                raise BackendError(f"first subclip {sub.subclip_id} cannot chain from a previous frame")
            prev = plan.subclips[i - 1].subclip_id
            upstream[sub.subclip_id] = prev
            downstream[prev] = (sub.subclip_id,)
        else:
            upstream[sub.subclip_id] = None
        downstream.setdefault(sub.subclip_id, ())
    return DependencyGraph(order=order, upstream=upstream, downstream=downstream)


# ---------------------------------------------------------------------------
# Prompt enrichment
# ---------------------------------------------------------------------------


def build_prompt(
    shot: Shot,
    subclip: SubClip,
    part_index: int,
    part_count: int,
    bank: CharacterBank | None,
    use_bank: bool,
) -> str:
    """Enrich the shot description into this subclip's render prompt.

    With the bank enabled, {{Name}} markers expand to full descriptor
    blocks; disabled, markers collapse to bare names so the prompt text
    stays grammatical but carries no appearance constraints.
    """
    base = shot.description_slot or f"{shot.section_label.value} scene, no script line"
    if use_bank and bank is not None and bank.profiles:
        profiles = referenced_profiles(base, bank)
        enriched = inject(base, profiles)
    else:
        enriched = strip_markers(base)
    if part_count > 1:
        enriched += f" [part {part_index + 1} of {part_count}, continuous motion]"
    return enriched


# ---------------------------------------------------------------------------
# Candidate production with retries
# ---------------------------------------------------------------------------


def _call_with_retry(
    call: Callable[[], BackendResponse],
    retries: int,
    sleep: Callable[[float], None],
) -> BackendResponse:
    attempt = 0
    while True:
        try:
            return call()
        except RetriableBackendError:
            if attempt >= retries:
                raise
            sleep(0.25 * 2**attempt)
            attempt += 1


def generate_keyframes(
    subclip: SubClip,
    prompt: str,
    backend: ImageBackendClient,
    count: int,
    seed: int,
    batch: int,
    retries: int = 2,
    sleep: Callable[[float], None] = time.sleep,
) -> list[KeyframeCandidate]:
    candidates = []
    for i in range(count):
        request = BackendRequest(
            prompt=prompt,
            duration_frames=1,
            seed=derive_seed(seed, subclip.subclip_id, "keyframe", batch, i),
        )
        try:
            response = _call_with_retry(lambda: backend.generate(request), retries, sleep)
        except BackendError as err:
            raise GenerationFailed(subclip.subclip_id, f"keyframe backend: {err}") from err
        candidates.append(
            KeyframeCandidate(
                candidate_id=f"{subclip.subclip_id}-key-b{batch}-c{i}",
                subclip_id=subclip.subclip_id,
                artifact=response.artifact,
                provenance={"backend": "image", "batch": batch, "attempt": i + 1},
            )
        )
    return candidates


def generate_clips(
    subclip: SubClip,
    prompt: str,
    keyframe: str,
    backend: VideoBackendClient,
    kind: BackendKind,
    audio_ref: str | None,
    count: int,
    seed: int,
    batch: int,
    retries: int = 2,
    sleep: Callable[[float], None] = time.sleep,
) -> list[ClipCandidate]:
    duration = subclip.span.duration_frames
    candidates = []
    for i in range(count):
        request = BackendRequest(
            prompt=prompt,
            duration_frames=duration,
            seed=derive_seed(seed, subclip.subclip_id, "clip", batch, i),
            keyframe=keyframe,
            audio_ref=audio_ref,
        )
        try:
            response = _call_with_retry(lambda: backend.render(request), retries, sleep)
        except BackendError as err:
            raise GenerationFailed(subclip.subclip_id, f"{kind.value} backend: {err}") from err
        if response.duration_frames is not None and response.duration_frames != duration:
            raise GenerationFailed(
                subclip.subclip_id,
                f"backend returned {response.duration_frames} frames, planned {duration}",
            )
        candidates.append(
            ClipCandidate(
                candidate_id=f"{subclip.subclip_id}-clip-b{batch}-c{i}",
                subclip_id=subclip.subclip_id,
                artifact=response.artifact,
                last_frame=response.last_frame,
                duration=FrameTime(duration),
                provenance={"backend": kind.value, "batch": batch, "attempt": i + 1},
            )
        )
    return candidates


# ---------------------------------------------------------------------------
# Orchestrated run
# ---------------------------------------------------------------------------

KeyframeSelector = Callable[[SubClip, Callable[[int], list[KeyframeCandidate]]], SelectionOutcome]
ClipSelector = Callable[[SubClip, Callable[[int], list[ClipCandidate]]], SelectionOutcome]


def first_keyframe_selector(
    subclip: SubClip, produce: Callable[[int], list[KeyframeCandidate]]
) -> SelectionOutcome:
    return accept_first(produce)


def first_clip_selector(
    subclip: SubClip, produce: Callable[[int], list[ClipCandidate]]
) -> SelectionOutcome:
    return accept_first(produce)


@dataclass
class SubclipRecord:
    """Everything generation learned about one subclip."""

    subclip_id: str
    state: JobState = JobState.PENDING
    backend: BackendKind = BackendKind.GENERAL_RENDER
    prompt: str = ""
    keyframe_candidates: list[KeyframeCandidate] = field(default_factory=list)
    keyframe_outcome: SelectionOutcome | None = None
    keyframe: str | None = None
    clip_candidates: list[ClipCandidate] = field(default_factory=list)
    clip_outcome: SelectionOutcome | None = None
    selection: SelectedClip | None = None
    error: str | None = None
    batches: int = 0

    def candidate_by_id(self, candidate_id: str) -> ClipCandidate | None:
        for candidate in self.clip_candidates:
            if candidate.candidate_id == candidate_id:
                return candidate
        return None


@dataclass
class GenerationRun:
    records: dict[str, SubclipRecord]
    warnings: list[str] = field(default_factory=list)

    @property
    def selections(self) -> dict[str, SelectedClip]:
        return {
            s: r.selection for s, r in self.records.items() if r.selection is not None
        }

    @property
    def failures(self) -> dict[str, str]:
        return {s: r.error or "failed" for s, r in self.records.items() if r.state is JobState.FAILED}

    @property
    def candidates(self) -> dict[str, list[ClipCandidate]]:
        return {s: list(r.clip_candidates) for s, r in self.records.items()}


def run_generation(
    plan: ShotPlan,
    bank: CharacterBank | None,
    clients: BackendClients,
    config: PipelineConfig,
    vocal_stem_ref: str | None = None,
    select_keyframe: KeyframeSelector = first_keyframe_selector,
    select_clip: ClipSelector = first_clip_selector,
    preselected: Mapping[str, SelectedClip] | None = None,
    sleep: Callable[[float], None] = time.sleep,
    observer: Callable[[str, dict[str, Any]], None] | None = None,
) -> GenerationRun:
    """Render every subclip in dependency order, isolating failures.

    `preselected` short-circuits subclips already resolved by an earlier
    run (crash-resume) or by a human approval; their last frames still feed
    downstream chaining. The observer callback, when given, receives
    (event_kind, payload) for every state change, in execution order.
    """
    preselected = dict(preselected or {})
    shots = {s.shot_id: s for s in plan.shots}
    graph = build_dependency_graph(plan)
    records = {s.subclip_id: SubclipRecord(subclip_id=s.subclip_id) for s in plan.subclips}
    subclips = {s.subclip_id: s for s in plan.subclips}
    run = GenerationRun(records=records)

    routes: dict[str, tuple[BackendKind, str | None]] = {}
    for shot in plan.shots:
        routes[shot.shot_id] = route_backend(shot, config, vocal_stem_ref)
        if routes[shot.shot_id][1]:
            run.warnings.append(routes[shot.shot_id][1])  # type: ignore[arg-type]

    part_counts = {
        shot.shot_id: len(plan.subclips_of(shot.shot_id)) for shot in plan.shots
    }

    def emit(kind: str, payload: dict[str, Any]) -> None:
        if observer is not None:
            observer(kind, payload)

    def process_chain(chain: list[str]) -> None:
        upstream_frame: str | None = None
        upstream_failed: str | None = None
        for subclip_id in chain:
            record = records[subclip_id]
            subclip = subclips[subclip_id]
            shot = shots[subclip.parent_shot]
            kind, _ = routes[shot.shot_id]
            record.backend = kind
            part_index = int(subclip_id.rsplit("clip", 1)[-1])
            record.prompt = build_prompt(
                shot, subclip, part_index, part_counts[shot.shot_id], bank, config.use_character_bank
            )
            if upstream_failed is not None:
                record.state = JobState.FAILED
                record.error = f"upstream {upstream_failed} failed"
                emit("subclip_failed", {"subclip_id": subclip_id, "error": record.error})
                continue

            if subclip_id in preselected:
                record.selection = preselected[subclip_id]
                record.state = JobState.DONE
                record.clip_candidates = [preselected[subclip_id].candidate]
                upstream_frame = preselected[subclip_id].candidate.last_frame
                emit("subclip_restored", {"subclip_id": subclip_id})
                continue

            record.state = JobState.RUNNING
            try:
                if subclip.keyframe_source is KeyframeSource.GENERATED_IMAGE:
                    def produce_keys(batch: int) -> list[KeyframeCandidate]:
                        batch_candidates = generate_keyframes(
                            subclip,
                            record.prompt,
                            clients.image,
                            config.candidates_per_item,
                            config.seed,
                            batch,
                            config.retries,
                            sleep,
                        )
                        record.keyframe_candidates.extend(batch_candidates)
                        emit(
                            "keyframe_batch",
                            {
                                "subclip_id": subclip_id,
                                "batch": batch,
                                "candidate_ids": [c.candidate_id for c in batch_candidates],
                            },
                        )
                        return batch_candidates

                    record.keyframe_outcome = select_keyframe(subclip, produce_keys)
                    chosen_key = None
                    for c in record.keyframe_candidates:
                        if c.candidate_id == record.keyframe_outcome.selected:
                            chosen_key = c
                            break
                    if chosen_key is None:
                        raise GenerationFailed(subclip_id, "keyframe selection refers to unknown candidate")
                    record.keyframe = chosen_key.artifact
                else:
                    if upstream_frame is None:
                        raise GenerationFailed(subclip_id, "chained subclip has no upstream frame")
                    record.keyframe = upstream_frame

                audio_ref = vocal_stem_ref if kind is BackendKind.LIP_SYNC else None

                def produce_clips(batch: int) -> list[ClipCandidate]:
                    record.batches = max(record.batches, batch + 1)
                    batch_candidates = generate_clips(
                        subclip,
                        record.prompt,
                        record.keyframe or "",
                        clients.video_for(kind),
                        kind,
                        audio_ref,
                        config.candidates_per_item,
                        config.seed,
                        batch,
                        config.retries,
                        sleep,
                    )
                    record.clip_candidates.extend(batch_candidates)
                    emit(
                        "clip_batch",
                        {
                            "subclip_id": subclip_id,
                            "batch": batch,
                            "candidate_ids": [c.candidate_id for c in batch_candidates],
                        },
                    )
                    return batch_candidates

                record.clip_outcome = select_clip(subclip, produce_clips)
                winner = record.candidate_by_id(record.clip_outcome.selected or "")
                if winner is None:
                    raise GenerationFailed(subclip_id, "selection refers to unknown candidate")
                record.selection = SelectedClip(
                    subclip_id=subclip_id,
                    candidate=winner,
                    backend=kind,
                    fallback_accepted=record.clip_outcome.fallback_accepted,
                )
                record.state = JobState.DONE
                upstream_frame = winner.last_frame
                emit(
                    "subclip_done",
                    {"subclip_id": subclip_id, "candidate_id": winner.candidate_id},
                )
            except GenerationFailed as err:
                record.state = JobState.FAILED
                record.error = err.cause
                upstream_failed = subclip_id
                emit("subclip_failed", {"subclip_id": subclip_id, "error": err.cause})

    chains = graph.chains()
    if config.parallelism <= 1 or len(chains) <= 1:
        for chain in chains:
            process_chain(chain)
    else:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            list(pool.map(process_chain, chains))
    return run


# ---------------------------------------------------------------------------
# Audio routing record
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AudioMuxPlan:
    """Final audio routing: the original mix spans the whole timeline.

    Vocal stems are generation-time inputs for lip-sync only; they never
    reach the final mux. stem_driven lists the subclips that consumed one.
    """

    song_id: str
    audio_ref: str
    total: FrameTime
    stem_driven: tuple[str, ...] = ()
    stem_ref: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "song_id": self.song_id,
            "audio_ref": self.audio_ref,
            "total_frames": self.total.frames,
            "stem_driven": list(self.stem_driven),
            "stem_ref": self.stem_ref,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AudioMuxPlan":
        return cls(
            song_id=data["song_id"],
            audio_ref=data["audio_ref"],
            total=FrameTime(int(data["total_frames"])),
            stem_driven=tuple(data.get("stem_driven", [])),
            stem_ref=data.get("stem_ref"),
        )


def mux_plan(
    selections: Mapping[str, SelectedClip],
    song_id: str,
    mix_audio_ref: str,
    total: FrameTime,
    vocal_stem_ref: str | None = None,
) -> AudioMuxPlan:
    stem_driven = tuple(
        sorted(s for s, sel in selections.items() if sel.backend is BackendKind.LIP_SYNC)
    )
    return AudioMuxPlan(
        song_id=song_id,
        audio_ref=mix_audio_ref,
        total=total,
        stem_driven=stem_driven,
        stem_ref=vocal_stem_ref if stem_driven else None,
    )


# ---------------------------------------------------------------------------
# Candidate serialization (event log and API payloads)
# ---------------------------------------------------------------------------


def clip_candidate_to_dict(candidate: ClipCandidate) -> dict[str, Any]:
    return {
        "candidate_id": candidate.candidate_id,
        "subclip_id": candidate.subclip_id,
        "artifact": candidate.artifact,
        "last_frame": candidate.last_frame,
        "duration_frames": candidate.duration.frames,
        "provenance": dict(candidate.provenance),
    }


def clip_candidate_from_dict(data: Mapping[str, Any]) -> ClipCandidate:
    return ClipCandidate(
        candidate_id=data["candidate_id"],
        subclip_id=data["subclip_id"],
        artifact=data["artifact"],
        last_frame=data["last_frame"],
        duration=FrameTime(int(data["duration_frames"])),
        provenance=dict(data.get("provenance", {})),
    )


def keyframe_candidate_to_dict(candidate: KeyframeCandidate) -> dict[str, Any]:
    return {
        "candidate_id": candidate.candidate_id,
        "subclip_id": candidate.subclip_id,
        "artifact": candidate.artifact,
        "provenance": dict(candidate.provenance),
    }


def keyframe_candidate_from_dict(data: Mapping[str, Any]) -> KeyframeCandidate:
    return KeyframeCandidate(
        candidate_id=data["candidate_id"],
        subclip_id=data["subclip_id"],
        artifact=data["artifact"],
        provenance=dict(data.get("provenance", {})),
    )
