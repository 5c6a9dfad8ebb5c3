"""Pipeline configuration, including the three component ablation toggles."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .planner import PlannerConstraints
from .timegrid import FrameTime

VIDEO_SCORING_MODES = ("full", "feasibility_only")

ABLATION_NAMES = ("lyrics", "bank", "verifier")


class ConfigError(ValueError):
    """Bad configuration value or file."""


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs beyond the song itself.

    The three use_* booleans switch off lyric conditioning, the character
    bank, and the verifier respectively; each disables exactly one component
    and leaves every other code path untouched.
    """

    constraints: PlannerConstraints = field(default_factory=PlannerConstraints)
    use_lyrics: bool = True
    use_character_bank: bool = True
    use_verifier: bool = True
    lipsync_enabled: bool = True
    candidates_per_item: int = 3
    max_rounds: int = 2
    retries: int = 2
    parallelism: int = 2
    seed: int = 0
    video_scoring: str = "full"
    alignment_weight: int = 1
    identity_weight: int = 1
    character_match_threshold: float = 0.34
    endpoints: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.candidates_per_item < 1:
            raise ConfigError("candidates_per_item must be >= 1")
        if self.max_rounds < 1:
            raise ConfigError("max_rounds must be >= 1")
        if self.retries < 0:
            raise ConfigError("retries must be >= 0")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.video_scoring not in VIDEO_SCORING_MODES:
            raise ConfigError(f"video_scoring must be one of {VIDEO_SCORING_MODES}")
        if self.alignment_weight < 0 or self.identity_weight < 0:
            raise ConfigError("verdict weights must be >= 0")
        if not 0.0 < self.character_match_threshold <= 1.0:
            raise ConfigError("character_match_threshold must be in (0, 1]")


def apply_ablations(config: PipelineConfig, ablations: list[str]) -> PipelineConfig:
    """Return a config with the named components switched off."""
    for name in ablations:
        if name not in ABLATION_NAMES:
            raise ConfigError(f"unknown ablation {name!r}, expected one of {ABLATION_NAMES}")
    return replace(
        config,
        use_lyrics=config.use_lyrics and "lyrics" not in ablations,
        use_character_bank=config.use_character_bank and "bank" not in ablations,
        use_verifier=config.use_verifier and "verifier" not in ablations,
    )


def config_to_dict(config: PipelineConfig) -> dict[str, Any]:
    return {
        "constraints": {
            "min_shot": config.constraints.min_shot.frames,
            "max_shot": config.constraints.max_shot.frames,
            "min_subclip": config.constraints.min_subclip.frames,
            "max_subclip": config.constraints.max_subclip.frames,
            "max_subclips_per_shot": config.constraints.max_subclips_per_shot,
        },
        "use_lyrics": config.use_lyrics,
        "use_character_bank": config.use_character_bank,
        "use_verifier": config.use_verifier,
        "lipsync_enabled": config.lipsync_enabled,
        "candidates_per_item": config.candidates_per_item,
        "max_rounds": config.max_rounds,
        "retries": config.retries,
        "parallelism": config.parallelism,
        "seed": config.seed,
        "video_scoring": config.video_scoring,
        "alignment_weight": config.alignment_weight,
        "identity_weight": config.identity_weight,
        "character_match_threshold": config.character_match_threshold,
        "endpoints": dict(config.endpoints),
    }


def config_from_dict(data: dict[str, Any]) -> PipelineConfig:
    known = set(config_to_dict(PipelineConfig()))
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    if "constraints" in data:
        cons = data["constraints"]
        kwargs["constraints"] = PlannerConstraints(
            min_shot=FrameTime(int(cons.get("min_shot", 72))),
            max_shot=FrameTime(int(cons.get("max_shot", 360))),
            min_subclip=FrameTime(int(cons.get("min_subclip", 72))),
            max_subclip=FrameTime(int(cons.get("max_subclip", 192))),
            max_subclips_per_shot=int(cons.get("max_subclips_per_shot", 3)),
        )
    for key in (
        "use_lyrics",
        "use_character_bank",
        "use_verifier",
        "lipsync_enabled",
        "video_scoring",
    ):
        if key in data:
            kwargs[key] = data[key]
    for key in (
        "candidates_per_item",
        "max_rounds",
        "retries",
        "parallelism",
        "seed",
        "alignment_weight",
        "identity_weight",
    ):
        if key in data:
            kwargs[key] = int(data[key])
    if "character_match_threshold" in data:
        kwargs["character_match_threshold"] = float(data["character_match_threshold"])
    if "endpoints" in data:
        kwargs["endpoints"] = {str(k): str(v) for k, v in data["endpoints"].items()}
    return PipelineConfig(**kwargs)


def load_config(path: str | Path) -> PipelineConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path} is not valid JSON: {err}") from err
    return config_from_dict(data)


def save_config(config: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n", encoding="utf-8")
