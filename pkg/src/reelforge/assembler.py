"""Final assembly manifest: the frame-exact list binding clips to the song.

The manifest is the timing contract's last checkpoint. Entries must tile
[0, total) with integer exactness, failed subclips stay visible as gap
entries instead of being papered over, and the exported concat listing is
byte-stable so identical runs diff clean.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .generation import AudioMuxPlan, BackendKind, SelectedClip
from .planner import ShotPlan
from .timegrid import FrameSpan, FrameTime

MANIFEST_SCHEMA = 1


class AssemblyError(Exception):
    """Parity or ordering violation while building the manifest."""


class GapsPresentError(AssemblyError):
    """Export refused: the manifest still contains gap entries."""

    def __init__(self, gaps: list["ManifestEntry"]):
        spans = ", ".join(f"[{g.span.start.frames}, {g.span.end.frames})" for g in gaps)
        super().__init__(f"manifest has {len(gaps)} gap entries: {spans}")
        self.gaps = gaps


@dataclass(frozen=True)
class ManifestEntry:
    subclip_id: str
    span: FrameSpan
    artifact: str | None
    backend: str | None
    fallback_accepted: bool = False
    human_override: bool = False
    gap: bool = False
    failure: str | None = None


@dataclass(frozen=True)
class AssemblyManifest:
    song_id: str
    entries: tuple[ManifestEntry, ...]
    audio: AudioMuxPlan
    total: FrameTime
    schema: int = MANIFEST_SCHEMA

    @property
    def gaps(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.gap]

    @property
    def complete(self) -> bool:
        return not self.gaps


def assemble(
    plan: ShotPlan,
    selections: Mapping[str, SelectedClip],
    audio: AudioMuxPlan,
    failures: Mapping[str, str] | None = None,
) -> AssemblyManifest:
    """Bind selected clips to the planned spans, with hard parity checks.

    Every planned subclip becomes exactly one entry, in plan order. A
    subclip without a selection becomes a gap entry carrying its failure
    cause. A selected clip whose duration disagrees with the planned span
    is an assembly error naming the clip.
    """
    failures = dict(failures or {})
    total = FrameTime(plan.shots[-1].span.end.frames) if plan.shots else FrameTime(0)
    if audio.total != total:
        raise AssemblyError(
            f"audio covers {audio.total.frames} frames, plan covers {total.frames}"
        )
    entries: list[ManifestEntry] = []
    cursor = 0
    for subclip in plan.subclips:
        if subclip.span.start.frames != cursor:
            raise AssemblyError(
                f"subclip {subclip.subclip_id} starts at {subclip.span.start.frames}, expected {cursor}"
            )
        selection = selections.get(subclip.subclip_id)
        if selection is None:
            entries.append(
                ManifestEntry(
                    subclip_id=subclip.subclip_id,
                    span=subclip.span,
                    artifact=None,
                    backend=None,
                    gap=True,
                    failure=failures.get(subclip.subclip_id, "no selection"),
                )
            )
        else:
            planned = subclip.span.duration_frames
            actual = selection.candidate.duration.frames
            if actual != planned:
                raise AssemblyError(
                    f"clip {selection.candidate.candidate_id} is {actual} frames, "
                    f"subclip {subclip.subclip_id} planned {planned}"
                )
            entries.append(
                ManifestEntry(
                    subclip_id=subclip.subclip_id,
                    span=subclip.span,
                    artifact=selection.candidate.artifact,
                    backend=selection.backend.value,
                    fallback_accepted=selection.fallback_accepted,
                    human_override=selection.human_override,
                )
            )
        cursor = subclip.span.end.frames
    if cursor != total.frames:
        raise AssemblyError(f"entries end at {cursor}, song has {total.frames} frames")
    return AssemblyManifest(song_id=plan.song_id, entries=tuple(entries), audio=audio, total=total)


def export_concat_list(manifest: AssemblyManifest) -> str:
    """Plain-text listing for an external concatenation tool.

    One `clip <locator> <start_frame> <end_frame>` line per entry in
    temporal order, then a final `audio <locator> 0 <total>` line. LF line
    endings; byte-identical for identical manifests. Refuses manifests
    with gaps.
    """
    if manifest.gaps:
        raise GapsPresentError(manifest.gaps)
    lines = [
        f"clip {e.artifact} {e.span.start.frames} {e.span.end.frames}"
        for e in manifest.entries
    ]
    lines.append(f"audio {manifest.audio.audio_ref} 0 {manifest.total.frames}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def manifest_to_dict(manifest: AssemblyManifest) -> dict[str, Any]:
    return {
        "manifest_schema": manifest.schema,
        "song_id": manifest.song_id,
        "total_frames": manifest.total.frames,
        "audio": manifest.audio.to_dict(),
        "entries": [
            {
                "subclip_id": e.subclip_id,
                "start": e.span.start.frames,
                "end": e.span.end.frames,
                "artifact": e.artifact,
                "backend": e.backend,
                "fallback_accepted": e.fallback_accepted,
                "human_override": e.human_override,
                "gap": e.gap,
                "failure": e.failure,
            }
            for e in manifest.entries
        ],
    }


def manifest_from_dict(data: Mapping[str, Any]) -> AssemblyManifest:
    if data.get("manifest_schema") != MANIFEST_SCHEMA:
        raise AssemblyError(f"unsupported manifest_schema {data.get('manifest_schema')!r}")
    entries = tuple(
        ManifestEntry(
            subclip_id=e["subclip_id"],
            span=FrameSpan(FrameTime(int(e["start"])), FrameTime(int(e["end"]))),
            artifact=e.get("artifact"),
            backend=e.get("backend"),
            fallback_accepted=bool(e.get("fallback_accepted", False)),
            human_override=bool(e.get("human_override", False)),
            gap=bool(e.get("gap", False)),
            failure=e.get("failure"),
        )
        for e in data["entries"]
    )
    return AssemblyManifest(
        song_id=data["song_id"],
        entries=entries,
        audio=AudioMuxPlan.from_dict(data["audio"]),
        total=FrameTime(int(data["total_frames"])),
    )


def save_manifest(manifest: AssemblyManifest, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(manifest_to_dict(manifest), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_manifest(path: str | Path) -> AssemblyManifest:
    return manifest_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
