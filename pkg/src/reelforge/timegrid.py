"""Integer frame-grid time arithmetic and the song-level data model.

Every timestamp in the pipeline is an integer frame count on a fixed 24 fps
grid. Floating-point seconds exist only at the ingest boundary; everything
downstream stores frames, so summing clip lengths can never drift away from
the song length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

FPS = 24
"""Frames per second for the whole pipeline. Single definition point."""

# Absolute snap tolerance (in frames) when converting seconds to frames.
# Values this close to an integer frame are treated as exact grid points,
# which keeps floor/ceil stable against float noise in `seconds * FPS`.
_GRID_EPS = 1e-6


class QuantizeMode(str, Enum):
    NEAREST = "nearest"
    FLOOR = "floor"
    CEIL = "ceil"


class TimegridError(ValueError):
    """Invalid time value or span."""


@dataclass(frozen=True, order=True)
class FrameTime:
    """A non-negative instant or duration measured in 1/24 s frames."""

    frames: int

    def __post_init__(self) -> None:
        if not isinstance(self.frames, int) or isinstance(self.frames, bool):
            raise TimegridError(f"frames must be an int, got {self.frames!r}")
        if self.frames < 0:
            raise TimegridError(f"frames must be >= 0, got {self.frames}")

    @property
    def seconds(self) -> float:
        return self.frames / FPS

    def __int__(self) -> int:
        return self.frames

    def __add__(self, other: "FrameTime") -> "FrameTime":
        return FrameTime(self.frames + other.frames)

    def __sub__(self, other: "FrameTime") -> "FrameTime":
        return FrameTime(self.frames - other.frames)


@dataclass(frozen=True, order=True)
class FrameSpan:
    """Half-open frame interval [start, end); adjacent spans tile with no gap."""

    start: FrameTime
    end: FrameTime

    def __post_init__(self) -> None:
        if self.start >= self.end:
            raise TimegridError(
                f"span start must precede end, got [{self.start.frames}, {self.end.frames})"
            )

    @property
    def duration(self) -> FrameTime:
        return self.end - self.start

    @property
    def duration_frames(self) -> int:
        return self.end.frames - self.start.frames

    def contains(self, t: FrameTime) -> bool:
        return self.start.frames <= t.frames < self.end.frames

    def overlaps(self, other: "FrameSpan") -> bool:
        return self.start.frames < other.end.frames and other.start.frames < self.end.frames


def quantize(seconds: float, mode: QuantizeMode | str = QuantizeMode.NEAREST) -> FrameTime:
    """Convert seconds to a frame count on the 24 fps grid.

    ``nearest`` rounds half up on the frame axis; ``floor``/``ceil`` snap
    values within a tiny epsilon of a grid point to that point first, so
    quantizing ``f / 24`` returns ``f`` in every mode.
    """
    mode = QuantizeMode(mode)
    if isinstance(seconds, bool) or not isinstance(seconds, (int, float)):
        raise TimegridError(f"seconds must be a real number, got {seconds!r}")
    if not math.isfinite(seconds):
        raise TimegridError(f"seconds must be finite, got {seconds!r}")
    if seconds < 0:
        raise TimegridError(f"seconds must be >= 0, got {seconds!r}")
    x = seconds * FPS
    nearest_int = math.floor(x + 0.5)
    if abs(x - round(x)) <= _GRID_EPS * max(1.0, abs(x)):
        return FrameTime(round(x))
    if mode is QuantizeMode.NEAREST:
        return FrameTime(nearest_int)
    if mode is QuantizeMode.FLOOR:
        return FrameTime(math.floor(x))
    return FrameTime(math.ceil(x))


class SectionLabel(str, Enum):
    INTRO = "intro"
    VERSE = "verse"
    CHORUS = "chorus"
    BRIDGE = "bridge"
    INSTRUMENTAL = "instrumental"
    OUTRO = "outro"


VOCALIST_ATTRIBUTE_KEYS = frozenset({"gender", "count", "age", "style"})
"""Closed key set for MusicCaption.vocalist_attributes."""


@dataclass(frozen=True)
class SongMetadata:
    song_id: str
    duration: FrameTime
    sample_rate: int
    language_tag: str
    mix_audio_ref: str
    vocal_stem_ref: str | None = None


@dataclass(frozen=True)
class StructureSegment:
    label: SectionLabel
    span: FrameSpan


@dataclass(frozen=True)
class LyricLine:
    text: str
    span: FrameSpan
    confidence: float


@dataclass(frozen=True)
class MusicCaption:
    genre: str
    mood: str
    instrumentation: tuple[str, ...]
    vocalist_attributes: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class MusicContext:
    """Everything the planner knows about one song."""

    metadata: SongMetadata
    caption: MusicCaption
    structure: tuple[StructureSegment, ...]
    lyrics: tuple[LyricLine, ...]
    beat_grid: tuple[FrameTime, ...] | None = None


@dataclass(frozen=True)
class Violation:
    """One broken invariant: which field, which rule, and what was seen."""

    field: str
    rule: str
    detail: str

    def __str__(self) -> str:
        return f"{self.field}: {self.rule} ({self.detail})"


def validate_context(ctx: MusicContext) -> list[Violation]:
    """Check every invariant of a MusicContext. Violations are data, not faults."""
    out: list[Violation] = []
    duration = ctx.metadata.duration.frames
    if duration <= 0:
        out.append(Violation("metadata.duration", "positive", f"duration={duration}"))
    if ctx.metadata.sample_rate <= 0:
        out.append(
            Violation("metadata.sample_rate", "positive", f"sample_rate={ctx.metadata.sample_rate}")
        )

    for key in ctx.caption.vocalist_attributes:
        if key not in VOCALIST_ATTRIBUTE_KEYS:
            out.append(
                Violation(
                    "caption.vocalist_attributes",
                    "key in closed set",
                    f"unknown key {key!r}; allowed: {sorted(VOCALIST_ATTRIBUTE_KEYS)}",
                )
            )

    out.extend(_check_structure(ctx.structure, duration))
    out.extend(_check_lyrics(ctx.lyrics, duration))

    if ctx.beat_grid is not None:
        prev = -1
        for i, beat in enumerate(ctx.beat_grid):
            if not 0 <= beat.frames < duration:
                out.append(
                    Violation("beat_grid", "inside song", f"beat[{i}]={beat.frames} not in [0, {duration})")
                )
            if beat.frames <= prev:
                out.append(
                    Violation("beat_grid", "strictly increasing", f"beat[{i}]={beat.frames} after {prev}")
                )
            prev = beat.frames
    return out


def _check_structure(segments: tuple[StructureSegment, ...], duration: int) -> list[Violation]:
    out: list[Violation] = []
    if not segments:
        out.append(Violation("structure", "covers song", "no segments"))
        return out
    if segments[0].span.start.frames != 0:
        out.append(
            Violation("structure", "covers song", f"first segment starts at {segments[0].span.start.frames}")
        )
    for i, seg in enumerate(segments[1:], start=1):
        prev = segments[i - 1]
        if seg.span.start.frames < prev.span.end.frames:
            out.append(
                Violation(
                    "structure",
                    "non-overlapping",
                    f"segment[{i - 1}] [{prev.span.start.frames},{prev.span.end.frames}) overlaps "
                    f"segment[{i}] [{seg.span.start.frames},{seg.span.end.frames})",
                )
            )
        elif seg.span.start.frames > prev.span.end.frames:
            out.append(
                Violation(
                    "structure",
                    "gap-free",
                    f"gap between segment[{i - 1}] end {prev.span.end.frames} and "
                    f"segment[{i}] start {seg.span.start.frames}",
                )
            )
    if segments[-1].span.end.frames != duration:
        out.append(
            Violation(
                "structure",
                "covers song",
                f"last segment ends at {segments[-1].span.end.frames}, song has {duration}",
            )
        )
    return out


def _check_lyrics(lines: tuple[LyricLine, ...], duration: int) -> list[Violation]:
    out: list[Violation] = []
    for i, line in enumerate(lines):
        if not line.text.strip():
            out.append(Violation("lyrics", "non-empty text", f"line[{i}] is blank"))
        if not 0.0 <= line.confidence <= 1.0:
            out.append(
                Violation("lyrics", "confidence in [0,1]", f"line[{i}] confidence={line.confidence}")
            )
        if line.span.end.frames > duration:
            out.append(
                Violation(
                    "lyrics",
                    "inside song",
                    f"line[{i}] ends at {line.span.end.frames}, song has {duration}",
                )
            )
        if i > 0:
            prev = lines[i - 1]
            if line.span.start.frames < prev.span.start.frames:
                out.append(
                    Violation("lyrics", "sorted by start", f"line[{i}] starts before line[{i - 1}]")
                )
            if line.span.start.frames < prev.span.end.frames:
                out.append(
                    Violation(
                        "lyrics",
                        "non-overlapping",
                        f"line[{i - 1}] [{prev.span.start.frames},{prev.span.end.frames}) overlaps "
                        f"line[{i}] [{line.span.start.frames},{line.span.end.frames})",
                    )
                )
    return out
