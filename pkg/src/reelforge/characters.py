"""Character identity bank: build, match, and inject appearance descriptors.

Prompts drift unless every mention of a character carries the same worded
appearance. The bank stores one canonical descriptor block per character and
splices it into prompts at {{Name}} markers or bare name mentions, so every
shot that features a character repeats the identical description.
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

MATCH_THRESHOLD = 0.34
"""Lowest token-overlap score that still counts as a match."""

APPEARANCE_KEYS = ("gender", "age", "nationality", "hair", "face", "skin_color", "outfit")
"""Required appearance fields, in canonical descriptor order."""

APPEARANCE_DEFAULTS = {
    "gender": "unspecified gender",
    "age": "adult",
    "nationality": "unspecified nationality",
    "hair": "short dark hair",
    "face": "unremarkable face",
    "skin_color": "medium skin",
    "outfit": "plain casual clothes",
}

_MARKER_RE = re.compile(r"\{\{\s*([^{}]+?)\s*\}\}")


class CharacterBankError(Exception):
    """Bank construction or lookup failure."""


class NoMatchError(CharacterBankError):
    """No profile scored above the match threshold."""


class CastConflictError(CharacterBankError):
    """Two cast records for one name disagree on an appearance field."""


class UnresolvedReferenceError(CharacterBankError):
    """A prompt marker names a character missing from the provided profiles."""


class BankFrozenError(CharacterBankError):
    """The bank does not grow after build; late discoveries are explicit errors."""


def render_descriptor(display_name: str, appearance: dict[str, str]) -> str:
    """Canonical one-line appearance description; byte-stable per profile."""
    parts = ", ".join(f"{key}: {appearance[key]}" for key in APPEARANCE_KEYS)
    return f"{display_name} ({parts})"


@dataclass(frozen=True)
class CharacterProfile:
    character_id: str
    display_name: str
    aliases: tuple[str, ...]
    appearance: dict[str, str]
    descriptor_block: str
    defaulted_fields: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        missing = [k for k in APPEARANCE_KEYS if not self.appearance.get(k)]
        if missing:
            raise CharacterBankError(f"profile {self.character_id}: empty appearance keys {missing}")
        expected = render_descriptor(self.display_name, self.appearance)
        if self.descriptor_block != expected:
            raise CharacterBankError(f"profile {self.character_id}: descriptor_block not canonical")


@dataclass(frozen=True)
class CharacterBank:
    song_id: str
    profiles: dict[str, CharacterProfile] = field(default_factory=dict)

    def __post_init__(self) -> None:
        seen: dict[str, str] = {}
        for cid, profile in self.profiles.items():
            if cid != profile.character_id:
                raise CharacterBankError(f"profile keyed {cid} carries id {profile.character_id}")
            lowered = profile.display_name.lower()
            if lowered in seen:
                raise CharacterBankError(
                    f"display_name {profile.display_name!r} duplicates {seen[lowered]}"
                )
            seen[lowered] = cid

    def ordered(self) -> list[CharacterProfile]:
        return [self.profiles[cid] for cid in sorted(self.profiles)]

    def add(self, *_args: Any, **_kwargs: Any) -> None:
        raise BankFrozenError("the bank is frozen after build; rebuild to change the cast")


def _slug(name: str) -> str:
    cleaned = re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")
    return cleaned or "character"


def build_bank(song_id: str, script_cast: Iterable[dict[str, Any]]) -> CharacterBank:
    """One profile per distinct cast name; merge duplicates, default gaps.

    Duplicate names must agree on every appearance field they both set;
    disagreement raises CastConflictError naming the field. Missing fields
    fall back to documented defaults and are flagged in defaulted_fields.
    """
    merged: dict[str, dict[str, Any]] = {}
    order: list[str] = []
    for record in script_cast:
        name = str(record.get("name", "")).strip()
        if not name:
            raise CharacterBankError("cast record without a name")
        key = name.lower()
        incoming_app = {
            k: str(v).strip()
            for k, v in (record.get("appearance") or {}).items()
            if k in APPEARANCE_KEYS and str(v).strip()
        }
        incoming_aliases = [str(a).strip() for a in record.get("aliases", []) if str(a).strip()]
        if key not in merged:
            merged[key] = {"name": name, "appearance": incoming_app, "aliases": incoming_aliases}
            order.append(key)
            continue
        slot = merged[key]
        for field_name, value in incoming_app.items():
            existing = slot["appearance"].get(field_name)
            if existing is not None and existing != value:
                raise CastConflictError(
                    f"cast {name!r}: field {field_name!r} given as {existing!r} and {value!r}"
                )
            slot["appearance"][field_name] = value
        for alias in incoming_aliases:
            if alias not in slot["aliases"]:
                slot["aliases"].append(alias)

    profiles: dict[str, CharacterProfile] = {}
    for key in order:
        slot = merged[key]
        appearance = dict(slot["appearance"])
        defaulted = tuple(k for k in APPEARANCE_KEYS if k not in appearance)
        for k in defaulted:
            appearance[k] = APPEARANCE_DEFAULTS[k]
        cid = _slug(slot["name"])
        if cid in profiles:
            cid = f"{cid}_{len(profiles)}"
        profiles[cid] = CharacterProfile(
            character_id=cid,
            display_name=slot["name"],
            aliases=tuple(slot["aliases"]),
            appearance=appearance,
            descriptor_block=render_descriptor(slot["name"], appearance),
            defaulted_fields=defaulted,
        )
    return CharacterBank(song_id=song_id, profiles=profiles)


_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


def _tokens(text: str) -> set[str]:
    return set(text.translate(_PUNCT_TABLE).lower().split())


def match_score(mention: str, profile: CharacterProfile) -> float:
    """Share of the profile's name+alias tokens present in the mention."""
    name_tokens = _tokens(profile.display_name)
    for alias in profile.aliases:
        name_tokens |= _tokens(alias)
    if not name_tokens:
        return 0.0
    return len(_tokens(mention) & name_tokens) / len(name_tokens)


def match(bank: CharacterBank, mention: str) -> CharacterProfile:
    """Resolve a script mention to its closest profile.

    Exact character_id wins, then exact display_name or alias
    (case-insensitive), then highest token-overlap score. Ties break toward
    the lexicographically smallest character_id.
    """
    if not bank.profiles:
        raise CharacterBankError("bank is empty")
    mention = mention.strip()
    if mention in bank.profiles:
        return bank.profiles[mention]
    lowered = mention.lower()
    for profile in bank.ordered():
        names = [profile.display_name.lower()] + [a.lower() for a in profile.aliases]
        if lowered in names:
            return profile
    best: CharacterProfile | None = None
    best_score = -1.0
    for profile in bank.ordered():
        score = match_score(mention, profile)
        if score > best_score:  # strict: ordered() keeps id tie-break
            best_score = score
            best = profile
    if best is None or best_score < MATCH_THRESHOLD:
        raise NoMatchError(f"no profile matches {mention!r} (best score {max(best_score, 0.0):.2f})")
    return best


def inject(prompt_text: str, profiles: list[CharacterProfile]) -> str:
    """Replace character references with full descriptor blocks, once each.

    {{Name}} markers are substituted wherever they appear. A bare name
    mention gets the descriptor spliced in at its first occurrence only;
    prompts already carrying the descriptor_block are left unchanged, so
    inject is idempotent. Markers naming characters absent from `profiles`
    raise UnresolvedReferenceError.
    """
    by_name: dict[str, CharacterProfile] = {}
    for profile in profiles:
        by_name[profile.display_name.lower()] = profile
        for alias in profile.aliases:
            by_name.setdefault(alias.lower(), profile)

    def _marker(match_obj: re.Match[str]) -> str:
        name = match_obj.group(1).strip()
        profile = by_name.get(name.lower())
        if profile is None:
            raise UnresolvedReferenceError(f"prompt references unknown character {name!r}")
        return profile.descriptor_block

    text = _MARKER_RE.sub(_marker, prompt_text)

    for profile in profiles:
        if profile.descriptor_block in text:
            continue
        pattern = re.compile(rf"\b{re.escape(profile.display_name)}\b", re.IGNORECASE)
        replaced = pattern.subn(profile.descriptor_block, text, count=1)
        if replaced[1]:
            text = replaced[0]
    return text


def referenced_profiles(prompt_text: str, bank: CharacterBank) -> list[CharacterProfile]:
    """Profiles whose markers or names appear in the prompt, in bank order."""
    found: list[CharacterProfile] = []
    marker_names = {m.group(1).strip().lower() for m in _MARKER_RE.finditer(prompt_text)}
    lowered = prompt_text.lower()
    for profile in bank.ordered():
        names = [profile.display_name.lower()] + [a.lower() for a in profile.aliases]
        if any(n in marker_names for n in names):
            found.append(profile)
            continue
        if any(re.search(rf"\b{re.escape(n)}\b", lowered) for n in names):
            found.append(profile)
    return found


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

BANK_SCHEMA = 1


def bank_to_dict(bank: CharacterBank) -> dict[str, Any]:
    return {
        "bank_schema": BANK_SCHEMA,
        "song_id": bank.song_id,
        "profiles": [
            {
                "character_id": p.character_id,
                "display_name": p.display_name,
                "aliases": list(p.aliases),
                "appearance": {k: p.appearance[k] for k in APPEARANCE_KEYS},
                "descriptor_block": p.descriptor_block,
                "defaulted_fields": list(p.defaulted_fields),
            }
            for p in bank.ordered()
        ],
    }


def bank_from_dict(data: dict[str, Any]) -> CharacterBank:
    if data.get("bank_schema") != BANK_SCHEMA:
        raise CharacterBankError(f"unsupported bank_schema {data.get('bank_schema')!r}")
    profiles = {}
    for rec in data["profiles"]:
        profile = CharacterProfile(
            character_id=rec["character_id"],
            display_name=rec["display_name"],
            aliases=tuple(rec.get("aliases", [])),
            appearance=dict(rec["appearance"]),
            descriptor_block=rec["descriptor_block"],
            defaulted_fields=tuple(rec.get("defaulted_fields", [])),
        )
        profiles[profile.character_id] = profile
    return CharacterBank(song_id=data["song_id"], profiles=profiles)


def save_bank(bank: CharacterBank, path: str | Path) -> None:
    Path(path).write_text(json.dumps(bank_to_dict(bank), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_bank(path: str | Path) -> CharacterBank:
    return bank_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
