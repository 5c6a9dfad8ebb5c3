"""Seeded synthetic songs: contexts, messy raw analyzer output, fixtures.

Property tests and fixtures need many structurally varied songs without any
audio. Everything here is a pure function of the seed, so a fixture written
once can be regenerated byte-identically.
"""

from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Any

from .analysis import raw_records_from_context
from .timegrid import (
    FPS,
    FrameSpan,
    FrameTime,
    LyricLine,
    MusicCaption,
    MusicContext,
    SectionLabel,
    SongMetadata,
    StructureSegment,
)

_GENRES = ["synthpop", "indie rock", "city pop", "folk ballad", "electronic", "r&b"]
_MOODS = ["wistful", "driving", "tender", "euphoric", "brooding", "weightless"]
_INSTRUMENTS = ["analog synth", "electric guitar", "upright piano", "drum machine", "strings", "bass"]
_LANGS = ["en", "ko", "ja", "es"]
_WORDS = (
    "glass night river burn slow gold static hollow weight turn home flicker "
    "salt wire bloom echo drift cold shoulder neon paper stone mile pull"
).split()

_SECTION_CYCLE = [
    (SectionLabel.VERSE, 8, 20),
    (SectionLabel.CHORUS, 8, 16),
    (SectionLabel.VERSE, 8, 20),
    (SectionLabel.CHORUS, 8, 16),
    (SectionLabel.BRIDGE, 6, 12),
    (SectionLabel.CHORUS, 8, 16),
]


def make_context(
    seed: int,
    min_seconds: float = 30.0,
    max_seconds: float = 360.0,
    with_vocal_stem: bool = True,
    with_beats: bool = False,
) -> MusicContext:
    """A valid synthetic MusicContext, a pure function of the arguments."""
    rng = random.Random(f"synth:{seed}")
    total = rng.randint(int(min_seconds * FPS), int(max_seconds * FPS))
    song_id = f"synth_{seed:04d}"

    segments: list[StructureSegment] = []
    cursor = 0
    intro = min(rng.randint(2 * FPS, 8 * FPS), total)
    segments.append(
        StructureSegment(SectionLabel.INTRO, FrameSpan(FrameTime(0), FrameTime(intro)))
    )
    cursor = intro
    cycle = 0
    while cursor < total:
        label, lo, hi = _SECTION_CYCLE[cycle % len(_SECTION_CYCLE)]
        length = rng.randint(lo * FPS, hi * FPS)
        end = min(cursor + length, total)
        remaining_after = total - end
        if 0 < remaining_after < 2 * FPS:
            end = total  # avoid slivers at the tail
        segments.append(StructureSegment(label, FrameSpan(FrameTime(cursor), FrameTime(end))))
        cursor = end
        cycle += 1
        if cursor < total and total - cursor <= 10 * FPS and cycle >= 3:
            segments.append(
                StructureSegment(SectionLabel.OUTRO, FrameSpan(FrameTime(cursor), FrameTime(total)))
            )
            cursor = total

    lyrics: list[LyricLine] = []
    for seg in segments:
        if seg.label not in (SectionLabel.VERSE, SectionLabel.CHORUS, SectionLabel.BRIDGE):
            continue
        line_cursor = seg.span.start.frames + rng.randint(0, FPS)
        while line_cursor + 36 <= seg.span.end.frames:
            length = rng.randint(36, min(120, seg.span.end.frames - line_cursor))
            if length < 12:
                break
            text = " ".join(rng.choice(_WORDS) for _ in range(rng.randint(3, 6)))
            lyrics.append(
                LyricLine(
                    text=text,
                    span=FrameSpan(FrameTime(line_cursor), FrameTime(line_cursor + length)),
                    confidence=round(rng.uniform(0.55, 1.0), 3),
                )
            )
            line_cursor += length + rng.randint(2, 30)

    caption = MusicCaption(
        genre=rng.choice(_GENRES),
        mood=rng.choice(_MOODS),
        instrumentation=tuple(rng.sample(_INSTRUMENTS, k=rng.randint(2, 4))),
        vocalist_attributes={
            "gender": rng.choice(["female", "male", "mixed"]),
            "count": str(rng.randint(1, 2)),
            "age": rng.choice(["young adult", "adult"]),
            "style": rng.choice(["breathy", "belted", "spoken", "airy"]),
        },
    )

    beats = None
    if with_beats:
        step = rng.choice([10, 12, 14, 16])  # frames per beat
        beats = tuple(FrameTime(f) for f in range(0, total, step))

    metadata = SongMetadata(
        song_id=song_id,
        duration=FrameTime(total),
        sample_rate=rng.choice([44100, 48000]),
        language_tag=rng.choice(_LANGS),
        mix_audio_ref=f"audio/{song_id}_mix.wav",
        vocal_stem_ref=f"audio/{song_id}_vocals.wav" if with_vocal_stem else None,
    )
    return MusicContext(
        metadata=metadata,
        caption=caption,
        structure=tuple(segments),
        lyrics=tuple(lyrics),
        beat_grid=beats,
    )


def make_messy_raw(ctx: MusicContext, seed: int) -> dict[str, Any]:
    """Seconds-valued raw records with analyzer-style noise injected.

    Boundaries jitter into small overlaps and gaps, one lyric line gets a
    junk confidence, one gets emptied, and an unknown section label shows
    up, so the normalizers have something to clean.
    """
    rng = random.Random(f"messy:{seed}:{ctx.metadata.song_id}")
    clean = raw_records_from_context(ctx)

    structure = []
    for i, seg in enumerate(clean["structure"]["segments"]):
        start = max(0.0, seg["start"] + rng.uniform(-0.3, 0.3)) if i > 0 else 0.0
        end = seg["end"] + rng.uniform(-0.3, 0.3)
        label = seg["label"]
        if rng.random() < 0.08:
            label = "breakdown"  # not a known section label
        if end > start:
            structure.append({"start": round(start, 3), "end": round(end, 3), "label": label})

    lines = []
    for i, line in enumerate(clean["lyrics"]["lines"]):
        start = max(0.0, line["start"] + rng.uniform(-0.2, 0.2))
        end = line["end"] + rng.uniform(-0.2, 0.4)
        rec = {
            "text": line["text"],
            "start": round(start, 3),
            "end": round(end, 3),
            "confidence": line["confidence"],
        }
        if i % 11 == 7:
            rec["confidence"] = round(rng.uniform(0.0, 0.19), 3)
        if i % 13 == 9:
            rec["text"] = "   "
        if end > start:
            lines.append(rec)

    caption = dict(clean["caption"])
    caption["vocalist_attributes"] = dict(caption["vocalist_attributes"])
    caption["vocalist_attributes"]["microphone"] = "condenser"  # not a known key

    return {
        "caption": caption,
        "structure": {"segments": structure},
        "lyrics": {"lines": lines},
        "stems": clean["stems"],
    }


def write_fixture(directory: str | Path, ctx: MusicContext, messy_seed: int | None = None) -> Path:
    """Write a song fixture directory: song.json plus raw_analysis.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    song = {
        "song_id": ctx.metadata.song_id,
        "duration_seconds": ctx.metadata.duration.frames / FPS,
        "sample_rate": ctx.metadata.sample_rate,
        "language_tag": ctx.metadata.language_tag,
        "mix_audio_ref": ctx.metadata.mix_audio_ref,
        "vocal_stem_ref": ctx.metadata.vocal_stem_ref,
    }
    (directory / "song.json").write_text(json.dumps(song, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    raw = make_messy_raw(ctx, messy_seed) if messy_seed is not None else raw_records_from_context(ctx)
    (directory / "raw_analysis.json").write_text(
        json.dumps(raw, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return directory


def load_song_metadata(directory: str | Path) -> SongMetadata:
    """Read a fixture's song.json into metadata (duration snapped to frames)."""
    from .timegrid import QuantizeMode, quantize

    data = json.loads((Path(directory) / "song.json").read_text(encoding="utf-8"))
    return SongMetadata(
        song_id=str(data["song_id"]),
        duration=quantize(float(data["duration_seconds"]), QuantizeMode.NEAREST),
        sample_rate=int(data["sample_rate"]),
        language_tag=str(data.get("language_tag", "und")),
        mix_audio_ref=str(data["mix_audio_ref"]),
        vocal_stem_ref=data.get("vocal_stem_ref"),
    )
