"""Analyzer clients and normalization of raw song analysis into a MusicContext.

Four analyzer roles feed the pipeline: a captioner, a structure analyzer, a
source separator, and a lyrics transcriber. The models themselves live behind
clients; this module owns the client contract, a deterministic fixture
backend, and the normalization that turns raw second-valued analyzer output
into a frame-exact, invariant-clean MusicContext.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Protocol

from .timegrid import (
    FPS,
    FrameSpan,
    FrameTime,
    LyricLine,
    MusicCaption,
    MusicContext,
    QuantizeMode,
    SectionLabel,
    SongMetadata,
    StructureSegment,
    VOCALIST_ATTRIBUTE_KEYS,
    quantize,
)

log = logging.getLogger(__name__)

MIN_LYRIC_CONFIDENCE = 0.2
"""Lines below this ASR confidence are dropped before reconciliation."""

DEFAULT_RETRIES = 2
"""Retries per analyzer call, with exponential backoff."""

CONTEXT_KEYS = {"fps", "metadata", "caption", "structure", "lyrics", "beats"}


class AnalyzerRole(str, Enum):
    CAPTIONER = "captioner"
    STRUCTURE_ANALYZER = "structure_analyzer"
    SOURCE_SEPARATOR = "source_separator"
    LYRICS_TRANSCRIBER = "lyrics_transcriber"


class AnalyzerError(Exception):
    """Base class for analyzer client failures."""


class RetriableAnalyzerError(AnalyzerError):
    """Transient failure (timeout, unreachable endpoint); safe to retry."""


class PermanentAnalyzerError(AnalyzerError):
    """Malformed payload or contract violation; retrying cannot help."""


class AnalyzerClient(Protocol):
    """One analyzer endpoint. Implementations must be safe to call concurrently."""

    role: AnalyzerRole

    def fetch(self, song: SongMetadata) -> dict[str, Any]:
        """Return the role-specific raw record for one song."""
        ...


@dataclass
class RawAnalysisBundle:
    """Raw per-role analyzer output, timestamps still in seconds.

    Timestamps may exceed the song length; normalization clamps them.
    A failed role leaves its record as None and an entry in ``errors``.
    """

    caption_raw: dict[str, Any] | None = None
    structure_raw: dict[str, Any] | None = None
    lyrics_raw: dict[str, Any] | None = None
    stem_refs: dict[str, str] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)

    _ROLE_FIELDS = {
        AnalyzerRole.CAPTIONER: "caption_raw",
        AnalyzerRole.STRUCTURE_ANALYZER: "structure_raw",
        AnalyzerRole.LYRICS_TRANSCRIBER: "lyrics_raw",
    }


def fetch_analysis(
    song: SongMetadata,
    clients: dict[AnalyzerRole, AnalyzerClient],
    retries: int = DEFAULT_RETRIES,
    sleep: Callable[[float], None] = time.sleep,
) -> RawAnalysisBundle:
    """Call all four analyzer roles, recording per-role failures in the bundle.

    Retriable errors are retried ``retries`` times with exponential backoff;
    permanent errors are recorded immediately. A failed role never aborts the
    other roles.
    """
    missing = [role for role in AnalyzerRole if role not in clients]
    if missing:
        raise ValueError(f"analyzer clients missing for roles: {[r.value for r in missing]}")

    bundle = RawAnalysisBundle()
    for role in AnalyzerRole:
        client = clients[role]
        try:
            record = _fetch_with_retry(client, song, retries, sleep)
        except AnalyzerError as err:
            bundle.errors[role.value] = f"{type(err).__name__}: {err}"
            log.warning("analyzer %s failed for %s: %s", role.value, song.song_id, err)
            continue
        if role is AnalyzerRole.SOURCE_SEPARATOR:
            bundle.stem_refs = {str(k): str(v) for k, v in record.items()}
        else:
            setattr(bundle, RawAnalysisBundle._ROLE_FIELDS[role], record)
    return bundle


def _fetch_with_retry(
    client: AnalyzerClient,
    song: SongMetadata,
    retries: int,
    sleep: Callable[[float], None],
) -> dict[str, Any]:
    attempt = 0
    while True:
        try:
            return client.fetch(song)
        except RetriableAnalyzerError:
            if attempt >= retries:
                raise
            sleep(0.5 * 2**attempt)
            attempt += 1


class FixtureAnalyzerClient:
    """Serves analyzer output from a fixture directory; byte-deterministic.

    The fixture directory holds one song per subdirectory. Raw records come
    from ``raw_analysis.json`` when present, otherwise they are derived from
    the normalized ``context.json`` (frames converted back to seconds).
    """

    def __init__(self, role: AnalyzerRole, fixture_dir: str | Path):
        self.role = role
        self.fixture_dir = Path(fixture_dir)

    def fetch(self, song: SongMetadata) -> dict[str, Any]:
        song_dir = self._song_dir(song.song_id)
        raw_path = song_dir / "raw_analysis.json"
        if raw_path.exists():
            try:
                raw = json.loads(raw_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as err:
                raise PermanentAnalyzerError(f"malformed raw_analysis.json: {err}") from err
            key = _RAW_KEYS[self.role]
            if key not in raw:
                raise PermanentAnalyzerError(f"raw_analysis.json missing {key!r}")
            return raw[key]
        context_path = song_dir / "context.json"
        if not context_path.exists():
            raise RetriableAnalyzerError(f"fixture for song {song.song_id!r} not found in {song_dir}")
        ctx = load_context(context_path)
        return _derive_raw_record(self.role, ctx)

    def _song_dir(self, song_id: str) -> Path:
        candidate = self.fixture_dir / song_id
        if candidate.is_dir():
            return candidate
        # A fixture dir may point directly at one song.
        return self.fixture_dir


def fixture_clients(fixture_dir: str | Path) -> dict[AnalyzerRole, AnalyzerClient]:
    """All four roles backed by the same fixture directory."""
    return {role: FixtureAnalyzerClient(role, fixture_dir) for role in AnalyzerRole}


_RAW_KEYS = {
    AnalyzerRole.CAPTIONER: "caption",
    AnalyzerRole.STRUCTURE_ANALYZER: "structure",
    AnalyzerRole.SOURCE_SEPARATOR: "stems",
    AnalyzerRole.LYRICS_TRANSCRIBER: "lyrics",
}


def raw_records_from_context(ctx: MusicContext) -> dict[str, Any]:
    """All four raw records (seconds-valued) derived from a clean context."""
    return {key: _derive_raw_record(role, ctx) for role, key in _RAW_KEYS.items()}


def _derive_raw_record(role: AnalyzerRole, ctx: MusicContext) -> dict[str, Any]:
    if role is AnalyzerRole.CAPTIONER:
        return {
            "genre": ctx.caption.genre,
            "mood": ctx.caption.mood,
            "instrumentation": list(ctx.caption.instrumentation),
            "vocalist_attributes": dict(ctx.caption.vocalist_attributes),
        }
    if role is AnalyzerRole.STRUCTURE_ANALYZER:
        return {
            "segments": [
                {"start": seg.span.start.seconds, "end": seg.span.end.seconds, "label": seg.label.value}
                for seg in ctx.structure
            ]
        }
    if role is AnalyzerRole.LYRICS_TRANSCRIBER:
        return {
            "lines": [
                {
                    "text": line.text,
                    "start": line.span.start.seconds,
                    "end": line.span.end.seconds,
                    "confidence": line.confidence,
                }
                for line in ctx.lyrics
            ]
        }
    stems = {"mix": ctx.metadata.mix_audio_ref}
    if ctx.metadata.vocal_stem_ref:
        stems["vocals"] = ctx.metadata.vocal_stem_ref
    return stems


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


def normalize_structure(raw: dict[str, Any] | None, duration: FrameTime) -> list[StructureSegment]:
    """Quantize, sort, de-overlap, and gap-fill raw structure segments.

    Overlaps keep the later segment's onset (the earlier segment's end is
    truncated to it) because section onsets drive lip-sync routing. Gaps,
    including a missing head or tail, become ``instrumental`` segments, so
    the result always tiles [0, duration) exactly. Empty or absent input
    yields a single instrumental segment covering the song.
    """
    total = duration.frames
    items: list[tuple[int, int, SectionLabel]] = []
    for rec in (raw or {}).get("segments", []):
        start_s = float(rec["start"])
        end_s = float(rec["end"])
        if not (math.isfinite(start_s) and math.isfinite(end_s)) or start_s < 0 or end_s <= start_s:
            continue
        start = min(quantize(start_s, QuantizeMode.NEAREST).frames, total)
        end = min(quantize(end_s, QuantizeMode.NEAREST).frames, total)
        if start >= end:
            continue
        items.append((start, end, _coerce_label(rec.get("label"))))

    items.sort(key=lambda t: (t[0], t[1]))

    resolved: list[tuple[int, int, SectionLabel]] = []
    for start, end, label in items:
        while resolved and resolved[-1][0] >= start:
            resolved.pop()  # fully shadowed by the later onset
        if resolved and resolved[-1][1] > start:
            prev = resolved[-1]
            resolved[-1] = (prev[0], start, prev[2])
        resolved.append((start, end, label))

    filled: list[tuple[int, int, SectionLabel]] = []
    cursor = 0
    for start, end, label in resolved:
        if start > cursor:
            filled.append((cursor, start, SectionLabel.INSTRUMENTAL))
        filled.append((start, end, label))
        cursor = end
    if cursor < total:
        filled.append((cursor, total, SectionLabel.INSTRUMENTAL))
    if not filled:
        filled = [(0, total, SectionLabel.INSTRUMENTAL)]

    # Runs of filler merge into one segment; labeled sections keep their
    # onsets even when adjacent runs share a label.
    merged: list[tuple[int, int, SectionLabel]] = []
    for start, end, label in filled:
        if (
            merged
            and label is SectionLabel.INSTRUMENTAL
            and merged[-1][2] is SectionLabel.INSTRUMENTAL
        ):
            merged[-1] = (merged[-1][0], end, label)
        else:
            merged.append((start, end, label))

    return [
        StructureSegment(label=label, span=FrameSpan(FrameTime(start), FrameTime(end)))
        for start, end, label in merged
    ]


def _coerce_label(value: Any) -> SectionLabel:
    try:
        return SectionLabel(str(value).strip().lower())
    except ValueError:
        return SectionLabel.INSTRUMENTAL


def reconcile_lyrics(raw: dict[str, Any] | None, duration: FrameTime) -> list[LyricLine]:
    """Quantize, clamp, and de-overlap transcribed lyric lines.

    Low-confidence and empty-text lines are dropped; lines starting at or
    past the song end are dropped; overlaps truncate the earlier line's end
    to the later line's start. The result is sorted, non-overlapping, and
    idempotent under re-application.
    """
    total = duration.frames
    items: list[tuple[int, int, str, float]] = []
    for rec in (raw or {}).get("lines", []):
        text = str(rec.get("text", "")).strip()
        if not text:
            continue
        confidence = float(rec.get("confidence", 1.0))
        if not math.isfinite(confidence):
            continue
        confidence = min(max(confidence, 0.0), 1.0)
        if confidence < MIN_LYRIC_CONFIDENCE:
            continue
        start_s = float(rec["start"])
        end_s = float(rec["end"])
        if not (math.isfinite(start_s) and math.isfinite(end_s)) or start_s < 0:
            continue
        start = quantize(start_s, QuantizeMode.NEAREST).frames
        end = min(quantize(end_s, QuantizeMode.NEAREST).frames, total)
        if start >= total or start >= end:
            continue
        items.append((start, end, text, confidence))

    items.sort(key=lambda t: (t[0], t[1]))

    resolved: list[tuple[int, int, str, float]] = []
    for start, end, text, confidence in items:
        while resolved and resolved[-1][0] >= start:
            resolved.pop()
        if resolved and resolved[-1][1] > start:
            prev = resolved[-1]
            resolved[-1] = (prev[0], start, prev[2], prev[3])
        resolved.append((start, end, text, confidence))

    return [
        LyricLine(text=text, span=FrameSpan(FrameTime(start), FrameTime(end)), confidence=confidence)
        for start, end, text, confidence in resolved
    ]


def normalize_bundle(bundle: RawAnalysisBundle, metadata: SongMetadata) -> MusicContext:
    """Build an invariant-clean MusicContext from a raw bundle.

    Missing roles degrade: no caption falls back to neutral defaults, no
    structure yields one instrumental segment, no lyrics yields an empty
    list (the planner then works from structure alone).
    """
    caption_raw = bundle.caption_raw or {}
    vocalist = {
        str(k): str(v)
        for k, v in (caption_raw.get("vocalist_attributes") or {}).items()
        if str(k) in VOCALIST_ATTRIBUTE_KEYS
    }
    caption = MusicCaption(
        genre=str(caption_raw.get("genre", "unknown")),
        mood=str(caption_raw.get("mood", "neutral")),
        instrumentation=tuple(str(x) for x in caption_raw.get("instrumentation", [])),
        vocalist_attributes=vocalist,
    )

    stem_refs = dict(bundle.stem_refs)
    mix_ref = stem_refs.get("mix", metadata.mix_audio_ref)
    vocal_ref = stem_refs.get("vocals", metadata.vocal_stem_ref)
    metadata = SongMetadata(
        song_id=metadata.song_id,
        duration=metadata.duration,
        sample_rate=metadata.sample_rate,
        language_tag=metadata.language_tag,
        mix_audio_ref=mix_ref,
        vocal_stem_ref=vocal_ref,
    )

    return MusicContext(
        metadata=metadata,
        caption=caption,
        structure=tuple(normalize_structure(bundle.structure_raw, metadata.duration)),
        lyrics=tuple(reconcile_lyrics(bundle.lyrics_raw, metadata.duration)),
        beat_grid=None,
    )


# ---------------------------------------------------------------------------
# context.json serialization
# ---------------------------------------------------------------------------


class ContextFormatError(ValueError):
    """context.json violates the fixture schema."""


def context_to_dict(ctx: MusicContext) -> dict[str, Any]:
    data: dict[str, Any] = {
        "fps": FPS,
        "metadata": {
            "song_id": ctx.metadata.song_id,
            "duration_frames": ctx.metadata.duration.frames,
            "sample_rate": ctx.metadata.sample_rate,
            "language_tag": ctx.metadata.language_tag,
            "mix_audio_ref": ctx.metadata.mix_audio_ref,
            "vocal_stem_ref": ctx.metadata.vocal_stem_ref,
        },
        "caption": {
            "genre": ctx.caption.genre,
            "mood": ctx.caption.mood,
            "instrumentation": list(ctx.caption.instrumentation),
            "vocalist_attributes": dict(ctx.caption.vocalist_attributes),
        },
        "structure": [
            {"label": seg.label.value, "start": seg.span.start.frames, "end": seg.span.end.frames}
            for seg in ctx.structure
        ],
        "lyrics": [
            {
                "text": line.text,
                "start": line.span.start.frames,
                "end": line.span.end.frames,
                "confidence": line.confidence,
            }
            for line in ctx.lyrics
        ],
    }
    if ctx.beat_grid is not None:
        data["beats"] = [b.frames for b in ctx.beat_grid]
    return data


def context_from_dict(data: dict[str, Any]) -> MusicContext:
    unknown = set(data) - CONTEXT_KEYS
    if unknown:
        raise ContextFormatError(f"unknown context keys: {sorted(unknown)}")
    for key in ("fps", "metadata", "caption", "structure", "lyrics"):
        if key not in data:
            raise ContextFormatError(f"context missing key {key!r}")
    if data["fps"] != FPS:
        raise ContextFormatError(f"fps must be {FPS}, got {data['fps']!r}")

    meta = data["metadata"]
    metadata = SongMetadata(
        song_id=str(meta["song_id"]),
        duration=FrameTime(int(meta["duration_frames"])),
        sample_rate=int(meta["sample_rate"]),
        language_tag=str(meta.get("language_tag", "und")),
        mix_audio_ref=str(meta["mix_audio_ref"]),
        vocal_stem_ref=meta.get("vocal_stem_ref"),
    )
    cap = data["caption"]
    caption = MusicCaption(
        genre=str(cap["genre"]),
        mood=str(cap["mood"]),
        instrumentation=tuple(str(x) for x in cap.get("instrumentation", [])),
        vocalist_attributes={str(k): str(v) for k, v in cap.get("vocalist_attributes", {}).items()},
    )
    structure = tuple(
        StructureSegment(
            label=SectionLabel(seg["label"]),
            span=FrameSpan(FrameTime(int(seg["start"])), FrameTime(int(seg["end"]))),
        )
        for seg in data["structure"]
    )
    lyrics = tuple(
        LyricLine(
            text=str(line["text"]),
            span=FrameSpan(FrameTime(int(line["start"])), FrameTime(int(line["end"]))),
            confidence=float(line["confidence"]),
        )
        for line in data["lyrics"]
    )
    beats = None
    if "beats" in data:
        beats = tuple(FrameTime(int(b)) for b in data["beats"])
    return MusicContext(
        metadata=metadata, caption=caption, structure=structure, lyrics=lyrics, beat_grid=beats
    )


def save_context(ctx: MusicContext, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(context_to_dict(ctx), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_context(path: str | Path) -> MusicContext:
    return context_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
