"""Two-stage candidate verification: a hard gate, then ranked selection.

Keyframe images are gated on physical realism and ranked by instruction
adherence; video clips are gated on physical feasibility and ranked by
alignment plus identity continuity. Selection is deterministic: argmax of
the combined score over gate-passing candidates, ties to the earliest
candidate. A bounded regeneration loop requests fresh candidates when a
round selects nothing, and falls back to the best-seen candidate rather
than aborting the song.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Mapping, Protocol, Sequence

log = logging.getLogger(__name__)

DEFAULT_MAX_ROUNDS = 2
JUDGE_RETRIES = 1


class VerifierError(Exception):
    """Verification could not produce an outcome."""


class JudgeError(Exception):
    """The judge client failed on one candidate."""


class JudgeModality(str, Enum):
    IMAGE = "image"
    VIDEO = "video"


@dataclass(frozen=True)
class ImageVerdict:
    candidate_id: str
    realism_pass: bool
    adherence_score: int
    rationale: str = ""

    def __post_init__(self) -> None:
        if not 1 <= self.adherence_score <= 5:
            raise VerifierError(f"adherence_score {self.adherence_score} outside [1, 5]")


@dataclass(frozen=True)
class VideoVerdict:
    candidate_id: str
    feasibility_pass: bool
    alignment_score: int
    identity_score: int
    rationale: str = ""

    def __post_init__(self) -> None:
        for name in ("alignment_score", "identity_score"):
            value = getattr(self, name)
            if not 1 <= value <= 5:
                raise VerifierError(f"{name} {value} outside [1, 5]")


Verdict = ImageVerdict | VideoVerdict


@dataclass(frozen=True)
class VerifierPolicy:
    """Scoring weights and the video-scoring mode switch.

    video_scoring="full" ranks passing clips by alignment + identity;
    "feasibility_only" treats the gate as the whole verdict, so ranking
    degenerates to the earliest passing candidate.
    """

    video_scoring: str = "full"
    alignment_weight: int = 1
    identity_weight: int = 1
    max_rounds: int = DEFAULT_MAX_ROUNDS

    def __post_init__(self) -> None:
        if self.video_scoring not in ("full", "feasibility_only"):
            raise VerifierError(f"unknown video_scoring {self.video_scoring!r}")
        if self.max_rounds < 1:
            raise VerifierError("max_rounds must be >= 1")

    def gate(self, verdict: Verdict) -> bool:
        if isinstance(verdict, ImageVerdict):
            return verdict.realism_pass
        return verdict.feasibility_pass

    def combined_score(self, verdict: Verdict) -> int:
        if isinstance(verdict, ImageVerdict):
            return verdict.adherence_score
        if self.video_scoring == "feasibility_only":
            return 0
        return (
            self.alignment_weight * verdict.alignment_score
            + self.identity_weight * verdict.identity_score
        )


@dataclass(frozen=True)
class SelectionOutcome:
    selected: str | None
    round: int
    exhausted: bool
    history: tuple[Verdict, ...]
    fallback_accepted: bool = False

    def verdict_for(self, candidate_id: str) -> Verdict | None:
        for verdict in self.history:
            if verdict.candidate_id == candidate_id:
                return verdict
        return None


class Judged(Protocol):
    """Anything with a candidate_id can be judged."""

    candidate_id: str


@dataclass(frozen=True)
class JudgeRequest:
    candidate_id: str
    artifact: str
    prompt: str
    descriptors: tuple[str, ...] = ()


class JudgeClient(Protocol):
    modality: JudgeModality

    def judge(self, request: JudgeRequest) -> Verdict: ...


class ScriptedJudge:
    """Table-driven judge with a deterministic hash fallback.

    Exact verdicts come from the scenario table (candidate_id keyed).
    Unlisted candidates get a verdict derived from a salted hash of the
    candidate_id, so full mock runs are judged without enumerating every
    candidate up front. Both paths are pure functions of their inputs.
    """

    def __init__(
        self,
        modality: JudgeModality,
        table: Mapping[str, Mapping[str, Any]] | None = None,
        salt: str = "",
        pass_rate: float = 0.8,
        fail_ids: Sequence[str] = (),
    ):
        self.modality = modality
        self.table = {k: dict(v) for k, v in (table or {}).items()}
        self.salt = salt
        self.pass_rate = pass_rate
        self.fail_ids = set(fail_ids)

    def _hash_fields(self, candidate_id: str) -> tuple[bool, int, int]:
        digest = hashlib.sha256(f"{self.salt}:{candidate_id}".encode("utf-8")).digest()
        passes = (digest[0] / 255.0) < self.pass_rate and candidate_id not in self.fail_ids
        score_a = 1 + digest[1] % 5
        score_b = 1 + digest[2] % 5
        return passes, score_a, score_b

    def judge(self, request: JudgeRequest) -> Verdict:
        rec = self.table.get(request.candidate_id)
        if rec is None:
            passes, score_a, score_b = self._hash_fields(request.candidate_id)
            rationale = "hash-derived verdict"
        else:
            passes = bool(rec["pass"])
            score_a = int(rec.get("adherence", rec.get("alignment", 3)))
            score_b = int(rec.get("identity", 3))
            rationale = str(rec.get("rationale", "scripted verdict"))
        if self.modality is JudgeModality.IMAGE:
            return ImageVerdict(
                candidate_id=request.candidate_id,
                realism_pass=passes,
                adherence_score=score_a,
                rationale=rationale,
            )
        return VideoVerdict(
            candidate_id=request.candidate_id,
            feasibility_pass=passes,
            alignment_score=score_a,
            identity_score=score_b,
            rationale=rationale,
        )


class FlakyJudge:
    """Wrapper that fails the first `failures` calls per candidate."""

    def __init__(self, inner: JudgeClient, failures: int = 1, permanent_ids: Sequence[str] = ()):
        self.inner = inner
        self.modality = inner.modality
        self.failures = failures
        self.permanent_ids = set(permanent_ids)
        self.calls: dict[str, int] = {}

    def judge(self, request: JudgeRequest) -> Verdict:
        count = self.calls.get(request.candidate_id, 0)
        self.calls[request.candidate_id] = count + 1
        if request.candidate_id in self.permanent_ids:
            raise JudgeError(f"permanent judge failure for {request.candidate_id}")
        if count < self.failures:
            raise JudgeError(f"transient judge failure for {request.candidate_id}")
        return self.inner.judge(request)


def _error_verdict(modality: JudgeModality, candidate_id: str, error: Exception) -> Verdict:
    rationale = f"judge error: {error}"
    if modality is JudgeModality.IMAGE:
        return ImageVerdict(candidate_id=candidate_id, realism_pass=False, adherence_score=1, rationale=rationale)
    return VideoVerdict(
        candidate_id=candidate_id,
        feasibility_pass=False,
        alignment_score=1,
        identity_score=1,
        rationale=rationale,
    )


def _judge_one(judge: JudgeClient, request: JudgeRequest, retries: int = JUDGE_RETRIES) -> Verdict:
    last: Exception | None = None
    for _ in range(retries + 1):
        try:
            return judge.judge(request)
        except JudgeError as err:
            last = err
    log.warning("judge failed on %s after retry: %s", request.candidate_id, last)
    return _error_verdict(judge.modality, request.candidate_id, last)  # type: ignore[arg-type]


def request_for(candidate: Any, prompt: str, descriptors: Sequence[str] = ()) -> JudgeRequest:
    return JudgeRequest(
        candidate_id=candidate.candidate_id,
        artifact=getattr(candidate, "artifact", ""),
        prompt=prompt,
        descriptors=tuple(descriptors),
    )


def verify_and_select(
    candidates: Sequence[Any],
    judge: JudgeClient,
    policy: VerifierPolicy,
    prompt: str = "",
    descriptors: Sequence[str] = (),
) -> SelectionOutcome:
    """Judge every candidate, then pick the best gate-passer.

    A judge failure (after one retry) demotes that candidate to a gate-fail
    with an error rationale instead of aborting the round. Ties break by the
    lowest candidate index, i.e. input order.
    """
    if not candidates:
        raise VerifierError("verify_and_select needs at least one candidate")
    verdicts = tuple(
        _judge_one(judge, request_for(c, prompt, descriptors)) for c in candidates
    )
    best_id: str | None = None
    best_score = -1
    for verdict in verdicts:
        if not policy.gate(verdict):
            continue
        score = policy.combined_score(verdict)
        if score > best_score:  # strict: earlier candidate wins ties
            best_score = score
            best_id = verdict.candidate_id
    return SelectionOutcome(selected=best_id, round=1, exhausted=False, history=verdicts)


def regeneration_loop(
    produce: Callable[[int], Sequence[Any]],
    judge: JudgeClient,
    policy: VerifierPolicy,
    prompt: str = "",
    descriptors: Sequence[str] = (),
) -> SelectionOutcome:
    """Round-based select-or-regenerate, bounded by policy.max_rounds.

    produce(round_index) must return a fresh candidate batch (round_index
    starts at 0). If no round yields a gate-passing candidate, the best
    scorer among everything seen is accepted and marked fallback_accepted.
    """
    history: list[Verdict] = []
    for round_index in range(policy.max_rounds):
        batch = list(produce(round_index))
        if not batch:
            raise VerifierError(f"round {round_index + 1} produced no candidates")
        outcome = verify_and_select(batch, judge, policy, prompt, descriptors)
        history.extend(outcome.history)
        if outcome.selected is not None:
            return SelectionOutcome(
                selected=outcome.selected,
                round=round_index + 1,
                exhausted=False,
                history=tuple(history),
            )
    best_id: str | None = None
    best_score = -1
    for verdict in history:
        score = policy.combined_score(verdict)
        if score > best_score:
            best_score = score
            best_id = verdict.candidate_id
    if best_id is None:
        raise VerifierError("no candidates were ever judged")
    return SelectionOutcome(
        selected=best_id,
        round=policy.max_rounds,
        exhausted=True,
        history=tuple(history),
        fallback_accepted=True,
    )


def accept_first(produce: Callable[[int], Sequence[Any]]) -> SelectionOutcome:
    """The no-verifier policy: take the first candidate of the first batch."""
    batch = list(produce(0))
    if not batch:
        raise VerifierError("no candidates produced")
    return SelectionOutcome(
        selected=batch[0].candidate_id, round=1, exhausted=False, history=()
    )


# ---------------------------------------------------------------------------
# Verdict serialization (for the event log and the review API)
# ---------------------------------------------------------------------------


def verdict_to_dict(verdict: Verdict) -> dict[str, Any]:
    if isinstance(verdict, ImageVerdict):
        return {
            "kind": "image",
            "candidate_id": verdict.candidate_id,
            "realism_pass": verdict.realism_pass,
            "adherence_score": verdict.adherence_score,
            "rationale": verdict.rationale,
        }
    return {
        "kind": "video",
        "candidate_id": verdict.candidate_id,
        "feasibility_pass": verdict.feasibility_pass,
        "alignment_score": verdict.alignment_score,
        "identity_score": verdict.identity_score,
        "rationale": verdict.rationale,
    }


def verdict_from_dict(data: Mapping[str, Any]) -> Verdict:
    if data["kind"] == "image":
        return ImageVerdict(
            candidate_id=data["candidate_id"],
            realism_pass=bool(data["realism_pass"]),
            adherence_score=int(data["adherence_score"]),
            rationale=str(data.get("rationale", "")),
        )
    return VideoVerdict(
        candidate_id=data["candidate_id"],
        feasibility_pass=bool(data["feasibility_pass"]),
        alignment_score=int(data["alignment_score"]),
        identity_score=int(data["identity_score"]),
        rationale=str(data.get("rationale", "")),
    )


def outcome_to_dict(outcome: SelectionOutcome) -> dict[str, Any]:
    return {
        "selected": outcome.selected,
        "round": outcome.round,
        "exhausted": outcome.exhausted,
        "fallback_accepted": outcome.fallback_accepted,
        "history": [verdict_to_dict(v) for v in outcome.history],
    }


def outcome_from_dict(data: Mapping[str, Any]) -> SelectionOutcome:
    return SelectionOutcome(
        selected=data.get("selected"),
        round=int(data["round"]),
        exhausted=bool(data["exhausted"]),
        history=tuple(verdict_from_dict(v) for v in data.get("history", [])),
        fallback_accepted=bool(data.get("fallback_accepted", False)),
    )
