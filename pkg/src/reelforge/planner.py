"""Shot planning: partition a song into shots and split shots into subclips.

Shots are the screenwriter's basic units. Boundaries come from section
transitions and lyric line edges; a dynamic program picks the tiling that
keeps shots near an 8 s soft target while respecting hard 3..15 s bounds.
Subclips are the renderable slices (3..8 s, at most 3 per shot) chained by
last-frame keyframes, so the whole plan tiles the song with zero drift.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from .timegrid import (
    FrameSpan,
    FrameTime,
    LyricLine,
    MusicContext,
    SectionLabel,
    Violation,
)

SOFT_TARGET_FRAMES = 192
"""Preferred shot length (8 s). Shots longer than this pay the primary cost."""

UNDERSIZED_FLAG = "undersized"


class PlannerError(Exception):
    """Planning failed for this song."""


class PlanConfigurationError(PlannerError):
    """The constraint set itself is unsatisfiable."""


@dataclass(frozen=True)
class PlannerConstraints:
    """Hard duration bounds for shots and subclips, in frames."""

    min_shot: FrameTime = FrameTime(72)
    max_shot: FrameTime = FrameTime(360)
    min_subclip: FrameTime = FrameTime(72)
    max_subclip: FrameTime = FrameTime(192)
    max_subclips_per_shot: int = 3

    def __post_init__(self) -> None:
        for name in ("min_shot", "max_shot", "min_subclip", "max_subclip"):
            value = getattr(self, name)
            if isinstance(value, int) and not isinstance(value, bool):
                object.__setattr__(self, name, FrameTime(value))
        if not (0 < self.min_shot.frames <= self.max_shot.frames):
            raise PlanConfigurationError("need 0 < min_shot <= max_shot")
        if not (0 < self.min_subclip.frames <= self.max_subclip.frames):
            raise PlanConfigurationError("need 0 < min_subclip <= max_subclip")
        if self.max_subclips_per_shot < 1:
            raise PlanConfigurationError("max_subclips_per_shot must be >= 1")
        if self.max_subclip.frames * self.max_subclips_per_shot < self.max_shot.frames:
            raise PlanConfigurationError(
                "max_subclip * max_subclips_per_shot < max_shot leaves some legal shot unsplittable"
            )


class KeyframeSource(str, Enum):
    GENERATED_IMAGE = "generated_image"
    PREVIOUS_LAST_FRAME = "previous_last_frame"


@dataclass(frozen=True)
class Shot:
    shot_id: str
    span: FrameSpan
    section_label: SectionLabel
    lyric_lines: tuple[LyricLine, ...] = ()
    description_slot: str | None = None
    lipsync: bool = False
    continuity_from_previous: bool = False


@dataclass(frozen=True)
class SubClip:
    subclip_id: str
    parent_shot: str
    span: FrameSpan
    keyframe_source: KeyframeSource


@dataclass(frozen=True)
class ShotPlan:
    song_id: str
    shots: tuple[Shot, ...]
    subclips: tuple[SubClip, ...]
    constraints: PlannerConstraints
    flags: tuple[str, ...] = ()

    @property
    def undersized(self) -> bool:
        return UNDERSIZED_FLAG in self.flags

    def shot_by_id(self, shot_id: str) -> Shot:
        for shot in self.shots:
            if shot.shot_id == shot_id:
                return shot
        raise KeyError(shot_id)

    def subclips_of(self, shot_id: str) -> tuple[SubClip, ...]:
        return tuple(s for s in self.subclips if s.parent_shot == shot_id)


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------

Cost = tuple[int, int, int]
# (shots over soft target, total squared deviation, -section-start boundaries)


def candidate_boundaries(ctx: MusicContext) -> list[int]:
    """Sorted candidate shot boundaries: ends, section starts, lyric edges."""
    total = ctx.metadata.duration.frames
    points = {0, total}
    for seg in ctx.structure:
        points.add(seg.span.start.frames)
    for line in ctx.lyrics:
        points.add(line.span.start.frames)
        points.add(line.span.end.frames)
    return sorted(p for p in points if 0 <= p <= total)


def _shot_cost(duration: int) -> tuple[int, int]:
    over = 1 if duration > SOFT_TARGET_FRAMES else 0
    return over, (duration - SOFT_TARGET_FRAMES) ** 2


def solve_boundaries(
    candidates: list[int], section_starts: set[int], constraints: PlannerConstraints
) -> list[int] | None:
    """Pick the minimal-cost subset of candidates tiling [first, last].

    Cost is lexicographic: fewest shots past the soft target, then least
    squared deviation from it, then the most interior boundaries that are
    section starts. Durations outside [min_shot, max_shot] are infeasible.
    Returns None when no legal tiling exists over these candidates.
    """
    lo = constraints.min_shot.frames
    hi = constraints.max_shot.frames
    n = len(candidates)
    best: list[Cost | None] = [None] * n
    prev: list[int] = [-1] * n
    best[0] = (0, 0, 0)
    for i in range(1, n):
        for j in range(i - 1, -1, -1):
            d = candidates[i] - candidates[j]
            if d < lo:
                continue
            if d > hi:
                break  # j is descending, so d only grows from here
            if best[j] is None:
                continue
            over, sq = _shot_cost(d)
            bonus = -1 if (j > 0 and candidates[j] in section_starts) else 0
            cost = (best[j][0] + over, best[j][1] + sq, best[j][2] + bonus)
            if best[i] is None or cost < best[i]:
                best[i] = cost
                prev[i] = j
    if best[n - 1] is None:
        return None
    chain = []
    i = n - 1
    while i >= 0:
        chain.append(candidates[i])
        if i == 0:
            break
        i = prev[i]
    return list(reversed(chain))


def _balanced_points(start: int, end: int, parts: int) -> list[int]:
    """Interior boundaries splitting [start, end) into balanced integer parts."""
    span = end - start
    base, rem = divmod(span, parts)
    points = []
    cursor = start
    for i in range(parts - 1):
        cursor += base + (1 if i < rem else 0)
        points.append(cursor)
    return points


def _augment_oversized_gaps(candidates: list[int], constraints: PlannerConstraints) -> list[int]:
    hi = constraints.max_shot.frames
    extra: list[int] = []
    for a, b in zip(candidates, candidates[1:]):
        gap = b - a
        if gap > hi:
            extra.extend(_balanced_points(a, b, math.ceil(gap / hi)))
    if not extra:
        return candidates
    return sorted(set(candidates) | set(extra))


def _global_fallback(total: int, constraints: PlannerConstraints) -> list[int]:
    lo = constraints.min_shot.frames
    hi = constraints.max_shot.frames
    for k in range(max(1, math.ceil(total / hi)), total + 1):
        if k * lo <= total <= k * hi:
            return [0] + _balanced_points(0, total, k) + [total]
    raise PlanConfigurationError(
        f"no shot count k satisfies k*{lo} <= {total} <= k*{hi}; constraints leave a dead zone"
    )


def _majority_label(span: FrameSpan, ctx: MusicContext) -> SectionLabel:
    best_label = SectionLabel.INSTRUMENTAL
    best_overlap = -1
    for seg in ctx.structure:
        overlap = min(span.end.frames, seg.span.end.frames) - max(
            span.start.frames, seg.span.start.frames
        )
        if overlap > best_overlap:  # strict: ties keep the earlier section
            best_overlap = overlap
            best_label = seg.label
    return best_label


def _intersecting_lyrics(span: FrameSpan, ctx: MusicContext) -> tuple[LyricLine, ...]:
    return tuple(line for line in ctx.lyrics if span.overlaps(line.span))


def segment_song(ctx: MusicContext, constraints: PlannerConstraints | None = None) -> ShotPlan:
    """Partition the song into shots and subclips tiling [0, duration) exactly.

    Songs shorter than min_shot degrade to a single-shot plan flagged
    `undersized`. When section and lyric boundaries are too sparse to admit
    any legal tiling, synthetic boundaries are inserted by splitting each
    oversized inter-candidate gap into balanced parts; if that still fails,
    the whole song is split into balanced equal shots. Truly unsatisfiable
    constraints raise PlanConfigurationError.
    """
    constraints = constraints or PlannerConstraints()
    total = ctx.metadata.duration.frames
    song_id = ctx.metadata.song_id

    if total < constraints.min_shot.frames:
        span = FrameSpan(FrameTime(0), FrameTime(total))
        shot = Shot(
            shot_id="shot_000",
            span=span,
            section_label=_majority_label(span, ctx),
            lyric_lines=_intersecting_lyrics(span, ctx),
        )
        sub = SubClip(
            subclip_id="shot_000_clip0",
            parent_shot="shot_000",
            span=span,
            keyframe_source=KeyframeSource.GENERATED_IMAGE,
        )
        return ShotPlan(song_id, (shot,), (sub,), constraints, flags=(UNDERSIZED_FLAG,))

    section_starts = {seg.span.start.frames for seg in ctx.structure}
    candidates = candidate_boundaries(ctx)
    boundaries = solve_boundaries(candidates, section_starts, constraints)
    if boundaries is None:
        augmented = _augment_oversized_gaps(candidates, constraints)
        boundaries = solve_boundaries(augmented, section_starts, constraints)
    if boundaries is None:
        boundaries = _global_fallback(total, constraints)

    shots: list[Shot] = []
    for idx, (a, b) in enumerate(zip(boundaries, boundaries[1:])):
        span = FrameSpan(FrameTime(a), FrameTime(b))
        label = _majority_label(span, ctx)
        shots.append(
            Shot(
                shot_id=f"shot_{idx:03d}",
                span=span,
                section_label=label,
                lyric_lines=_intersecting_lyrics(span, ctx),
                continuity_from_previous=bool(shots) and shots[-1].section_label is label,
            )
        )

    subclips = tuple(s for shot in shots for s in split_shot(shot, constraints))
    return ShotPlan(song_id, tuple(shots), subclips, constraints)


def split_shot(shot: Shot, constraints: PlannerConstraints) -> list[SubClip]:
    """Cut a shot into the minimal number of balanced subclips.

    k = ceil(duration / max_subclip); slice lengths differ by at most one
    frame, larger slices first. The first subclip seeds from a generated
    image unless the shot continues the previous one.
    """
    duration = shot.span.duration_frames
    k = max(1, math.ceil(duration / constraints.max_subclip.frames))
    if k > constraints.max_subclips_per_shot:
        raise PlannerError(
            f"shot {shot.shot_id}: duration {duration} needs {k} subclips, "
            f"limit is {constraints.max_subclips_per_shot}"
        )
    base, rem = divmod(duration, k)
    sizes = [base + 1] * rem + [base] * (k - rem)
    bad = [s for s in sizes if not constraints.min_subclip.frames <= s <= constraints.max_subclip.frames]
    if bad:
        raise PlannerError(
            f"shot {shot.shot_id}: no balanced {k}-way split of {duration} frames "
            f"fits [{constraints.min_subclip.frames}, {constraints.max_subclip.frames}]"
        )
    subclips = []
    cursor = shot.span.start.frames
    for i, size in enumerate(sizes):
        if i == 0:
            source = (
                KeyframeSource.PREVIOUS_LAST_FRAME
                if shot.continuity_from_previous
                else KeyframeSource.GENERATED_IMAGE
            )
        else:
            source = KeyframeSource.PREVIOUS_LAST_FRAME
        subclips.append(
            SubClip(
                subclip_id=f"{shot.shot_id}_clip{i}",
                parent_shot=shot.shot_id,
                span=FrameSpan(FrameTime(cursor), FrameTime(cursor + size)),
                keyframe_source=source,
            )
        )
        cursor += size
    return subclips


def rebuild_subclips(plan: ShotPlan) -> ShotPlan:
    """Re-derive subclips after shot fields changed (continuity overrides)."""
    if plan.undersized:
        return plan
    subclips = tuple(s for shot in plan.shots for s in split_shot(shot, plan.constraints))
    return replace(plan, subclips=subclips)


def apply_continuity(plan: ShotPlan, casts: Mapping[str, frozenset[str]]) -> ShotPlan:
    """Recompute continuity once per-shot character casts are known.

    A shot continues the previous one when both share a section label and
    an identical cast. The first shot never continues.
    """
    shots = []
    for i, shot in enumerate(plan.shots):
        if i == 0:
            cont = False
        else:
            prev = plan.shots[i - 1]
            cont = (
                shot.section_label is prev.section_label
                and casts.get(shot.shot_id, frozenset()) == casts.get(prev.shot_id, frozenset())
            )
        shots.append(replace(shot, continuity_from_previous=cont))
    return rebuild_subclips(replace(plan, shots=tuple(shots)))


# ---------------------------------------------------------------------------
# Lip-sync routing flags
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LipsyncPolicy:
    """Named pure predicate deciding which shots get mouth articulation."""

    name: str
    predicate: Callable[[Shot, MusicContext], bool] = field(compare=False)


def _default_lipsync(shot: Shot, ctx: MusicContext) -> bool:
    # Trigger 1: the shot contains a chorus onset.
    for seg in ctx.structure:
        if seg.label is SectionLabel.CHORUS and shot.span.contains(seg.span.start):
            return True
    # Trigger 2: the shot contains the first vocal onset of any section.
    for seg in ctx.structure:
        onsets = [
            max(line.span.start.frames, seg.span.start.frames)
            for line in ctx.lyrics
            if seg.span.overlaps(line.span)
        ]
        if onsets and shot.span.contains(FrameTime(min(onsets))):
            return True
    return False


DEFAULT_LIPSYNC = LipsyncPolicy("default", _default_lipsync)
NEVER_LIPSYNC = LipsyncPolicy("never", lambda shot, ctx: False)
ALWAYS_LIPSYNC = LipsyncPolicy("always", lambda shot, ctx: True)


def assign_lipsync_flags(
    plan: ShotPlan, ctx: MusicContext, policy: LipsyncPolicy = DEFAULT_LIPSYNC
) -> ShotPlan:
    shots = tuple(replace(s, lipsync=policy.predicate(s, ctx)) for s in plan.shots)
    return replace(plan, shots=shots)


# ---------------------------------------------------------------------------
# Validation and serialization
# ---------------------------------------------------------------------------


def validate_plan(plan: ShotPlan, total: FrameTime) -> list[Violation]:
    """Check tiling, bounds, and subclip closure; [] means clean."""
    out: list[Violation] = []
    lo = plan.constraints.min_shot.frames
    hi = plan.constraints.max_shot.frames
    cursor = 0
    for shot in plan.shots:
        if shot.span.start.frames != cursor:
            out.append(Violation("shots", "tiling", f"{shot.shot_id} starts at {shot.span.start.frames}, expected {cursor}"))
        d = shot.span.duration_frames
        if not plan.undersized and not lo <= d <= hi:
            out.append(Violation("shots", "duration_bounds", f"{shot.shot_id} duration {d} outside [{lo}, {hi}]"))
        cursor = shot.span.end.frames
    if cursor != total.frames:
        out.append(Violation("shots", "tiling", f"plan ends at {cursor}, song has {total.frames} frames"))

    by_shot: dict[str, list[SubClip]] = {}
    for sub in plan.subclips:
        by_shot.setdefault(sub.parent_shot, []).append(sub)
    for shot in plan.shots:
        subs = by_shot.pop(shot.shot_id, [])
        if not subs:
            out.append(Violation("subclips", "closure", f"{shot.shot_id} has no subclips"))
            continue
        cursor = shot.span.start.frames
        for sub in subs:
            if sub.span.start.frames != cursor:
                out.append(Violation("subclips", "closure", f"{sub.subclip_id} starts at {sub.span.start.frames}, expected {cursor}"))
            cursor = sub.span.end.frames
        if cursor != shot.span.end.frames:
            out.append(Violation("subclips", "closure", f"{shot.shot_id} subclips end at {cursor}, shot ends at {shot.span.end.frames}"))
        if not plan.undersized and len(subs) > plan.constraints.max_subclips_per_shot:
            out.append(Violation("subclips", "count", f"{shot.shot_id} has {len(subs)} subclips"))
    for orphan in by_shot:
        out.append(Violation("subclips", "orphan", f"subclips reference unknown shot {orphan}"))
    return out


def plan_to_dict(plan: ShotPlan) -> dict[str, Any]:
    return {
        "plan_schema": 1,
        "song_id": plan.song_id,
        "flags": list(plan.flags),
        "constraints": {
            "min_shot": plan.constraints.min_shot.frames,
            "max_shot": plan.constraints.max_shot.frames,
            "min_subclip": plan.constraints.min_subclip.frames,
            "max_subclip": plan.constraints.max_subclip.frames,
            "max_subclips_per_shot": plan.constraints.max_subclips_per_shot,
        },
        "shots": [
            {
                "shot_id": s.shot_id,
                "start": s.span.start.frames,
                "end": s.span.end.frames,
                "section_label": s.section_label.value,
                "lyric_lines": [
                    {
                        "text": l.text,
                        "start": l.span.start.frames,
                        "end": l.span.end.frames,
                        "confidence": l.confidence,
                    }
                    for l in s.lyric_lines
                ],
                "description_slot": s.description_slot,
                "lipsync": s.lipsync,
                "continuity_from_previous": s.continuity_from_previous,
            }
            for s in plan.shots
        ],
        "subclips": [
            {
                "subclip_id": c.subclip_id,
                "parent_shot": c.parent_shot,
                "start": c.span.start.frames,
                "end": c.span.end.frames,
                "keyframe_source": c.keyframe_source.value,
            }
            for c in plan.subclips
        ],
    }


def plan_from_dict(data: dict[str, Any]) -> ShotPlan:
    if data.get("plan_schema") != 1:
        raise PlannerError(f"unsupported plan_schema {data.get('plan_schema')!r}")
    cons = data["constraints"]
    constraints = PlannerConstraints(
        min_shot=FrameTime(int(cons["min_shot"])),
        max_shot=FrameTime(int(cons["max_shot"])),
        min_subclip=FrameTime(int(cons["min_subclip"])),
        max_subclip=FrameTime(int(cons["max_subclip"])),
        max_subclips_per_shot=int(cons["max_subclips_per_shot"]),
    )
    shots = tuple(
        Shot(
            shot_id=s["shot_id"],
            span=FrameSpan(FrameTime(int(s["start"])), FrameTime(int(s["end"]))),
            section_label=SectionLabel(s["section_label"]),
            lyric_lines=tuple(
                LyricLine(
                    text=l["text"],
                    span=FrameSpan(FrameTime(int(l["start"])), FrameTime(int(l["end"]))),
                    confidence=float(l["confidence"]),
                )
                for l in s["lyric_lines"]
            ),
            description_slot=s.get("description_slot"),
            lipsync=bool(s["lipsync"]),
            continuity_from_previous=bool(s["continuity_from_previous"]),
        )
        for s in data["shots"]
    )
    subclips = tuple(
        SubClip(
            subclip_id=c["subclip_id"],
            parent_shot=c["parent_shot"],
            span=FrameSpan(FrameTime(int(c["start"])), FrameTime(int(c["end"]))),
            keyframe_source=KeyframeSource(c["keyframe_source"]),
        )
        for c in data["subclips"]
    )
    return ShotPlan(
        song_id=data["song_id"],
        shots=shots,
        subclips=subclips,
        constraints=constraints,
        flags=tuple(data.get("flags", [])),
    )


def save_plan(plan: ShotPlan, path: str | Path) -> None:
    Path(path).write_text(json.dumps(plan_to_dict(plan), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_plan(path: str | Path) -> ShotPlan:
    return plan_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
