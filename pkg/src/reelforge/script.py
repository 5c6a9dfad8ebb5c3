"""Screenwriter seam: per-shot visual descriptions and the cast list.

The real screenwriter is an external language model. The pipeline only
depends on this contract: given the music context and the shot plan, return
raw cast records (for the character bank) and one description per shot.
Descriptions reference characters with {{Name}} markers so descriptor
injection stays mechanical.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Protocol

from .planner import ShotPlan
from .timegrid import MusicContext, SectionLabel


@dataclass(frozen=True)
class ScriptResult:
    cast: tuple[dict, ...]
    shot_descriptions: dict[str, str]

    def cast_names(self) -> list[str]:
        return [str(rec["name"]) for rec in self.cast]


class ScriptClient(Protocol):
    name: str

    def write(self, ctx: MusicContext, plan: ShotPlan) -> ScriptResult: ...


_LEAD_NAMES = ["Mira Voss", "Jonah Park", "Alba Reyes", "Ren Akiyama", "Noor Haddad"]
_SUPPORT_NAMES = ["Teo", "Iris", "Kei", "Sana"]
_HAIR = ["long silver hair", "cropped black hair", "curly auburn hair", "braided dark hair"]
_FACE = ["sharp features", "soft round face", "freckled face", "angular jawline"]
_SKIN = ["pale skin", "olive skin", "deep brown skin", "golden tan skin"]
_OUTFIT = ["worn denim jacket", "flowing white dress", "tailored charcoal suit", "oversized knit sweater"]
_NATION = ["Korean", "Brazilian", "Norwegian", "Japanese", "Moroccan"]
_SCENERY = [
    "rain-slicked neon streets",
    "an empty rooftop at dawn",
    "a field of dry grass under storm light",
    "a cluttered rehearsal room",
    "a night highway shot through a windshield",
]
_CAMERA = ["slow dolly-in", "handheld tracking shot", "static wide frame", "orbiting close-up"]


class MockScriptClient:
    """Deterministic screenwriter for fixtures and tests.

    Output is a pure function of (seed, song_id, plan structure): the cast
    and every description come from a seeded RNG consumed in shot order.
    """

    name = "mock-screenwriter"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def write(self, ctx: MusicContext, plan: ShotPlan) -> ScriptResult:
        rng = random.Random(f"{self.seed}:{ctx.metadata.song_id}:script")
        lead = rng.choice(_LEAD_NAMES)
        cast = [
            {
                "name": lead,
                "aliases": [lead.split()[0]],
                "appearance": {
                    "gender": ctx.caption.vocalist_attributes.get("gender", "unspecified gender"),
                    "age": ctx.caption.vocalist_attributes.get("age", "adult"),
                    "nationality": rng.choice(_NATION),
                    "hair": rng.choice(_HAIR),
                    "face": rng.choice(_FACE),
                    "skin_color": rng.choice(_SKIN),
                    "outfit": rng.choice(_OUTFIT),
                },
            }
        ]
        has_support = len(plan.shots) >= 4 and rng.random() < 0.6
        if has_support:
            support = rng.choice(_SUPPORT_NAMES)
            cast.append(
                {
                    "name": support,
                    "aliases": [],
                    "appearance": {
                        "gender": "unspecified gender",
                        "age": "adult",
                        "nationality": rng.choice(_NATION),
                        "hair": rng.choice(_HAIR),
                        "face": rng.choice(_FACE),
                        "skin_color": rng.choice(_SKIN),
                        "outfit": rng.choice(_OUTFIT),
                    },
                }
            )

        descriptions: dict[str, str] = {}
        for shot in plan.shots:
            camera = rng.choice(_CAMERA)
            scenery = rng.choice(_SCENERY)
            mood = ctx.caption.mood
            if shot.lyric_lines:
                snippet = shot.lyric_lines[0].text
                text = (
                    f"{{{{{lead}}}}} performs the line \"{snippet}\" amid {scenery}, "
                    f"{camera}, {mood} mood, {shot.section_label.value} energy"
                )
                if has_support and shot.section_label in (SectionLabel.VERSE, SectionLabel.BRIDGE):
                    text += f"; {{{{{cast[1]['name']}}}}} watches from the background"
            else:
                instrument = (
                    ctx.caption.instrumentation[0] if ctx.caption.instrumentation else "the band"
                )
                text = f"Instrumental interlude on {scenery}, {camera}, close on {instrument}, {mood} mood"
            descriptions[shot.shot_id] = text
        return ScriptResult(cast=tuple(cast), shot_descriptions=descriptions)


def strip_markers(text: str) -> str:
    """Replace {{Name}} markers with the bare name (bank-disabled mode)."""
    out = []
    i = 0
    while i < len(text):
        if text.startswith("{{", i):
            close = text.find("}}", i + 2)
            if close != -1:
                out.append(text[i + 2 : close].strip())
                i = close + 2
                continue
        out.append(text[i])
        i += 1
    return "".join(out)
