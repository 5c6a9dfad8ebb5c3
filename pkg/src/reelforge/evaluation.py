"""Twelve-criterion rubric scoring: judge orchestration, weighted aggregation,
and human-vs-model correlation.

Category scores are plain means of their member criteria; the final score
weights Technical and Post-Production at 20% each and Content and Art at 30%
each. All aggregation runs in exact rational arithmetic; rounding happens
only when a number is presented. The rubric text itself lives in a data file
so judge prompts and scoring stay in lockstep.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # 3.10 has no stdlib TOML parser
    import tomli as tomllib

log = logging.getLogger(__name__)

CRITERION_CODES = ("CC", "PA", "LS", "VH", "SC", "AC", "MT", "ST", "EM", "VQ", "CR", "AN")

CATEGORY_MEMBERS = {
    "Technical": ("CC", "PA", "LS", "VH"),
    "PostProduction": ("SC", "AC"),
    "Content": ("MT", "ST", "EM"),
    "Art": ("VQ", "CR", "AN"),
}

CATEGORY_WEIGHTS = {
    "Technical": Fraction(1, 5),
    "PostProduction": Fraction(1, 5),
    "Content": Fraction(3, 10),
    "Art": Fraction(3, 10),
}

METRIC_NAMES = CRITERION_CODES + tuple(CATEGORY_MEMBERS) + ("Total",)
"""The 17 correlation metrics: 12 criteria, 4 categories, weighted total."""


class EvaluationError(ValueError):
    """Scorecard, rubric, or correlation input violates the contract."""


class JudgingError(EvaluationError):
    """The judge response stayed unparseable after a retry."""


# ---------------------------------------------------------------------------
# Rubric
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Criterion:
    code: str
    name: str
    category: str
    focus: str
    levels: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.levels) != 5:
            raise EvaluationError(f"criterion {self.code}: expected 5 level descriptors")


@dataclass(frozen=True)
class Rubric:
    criteria: tuple[Criterion, ...]

    def __post_init__(self) -> None:
        codes = [c.code for c in self.criteria]
        if codes != list(CRITERION_CODES):
            raise EvaluationError(f"rubric criteria must be exactly {CRITERION_CODES}, got {codes}")
        for crit in self.criteria:
            if crit.code not in CATEGORY_MEMBERS.get(crit.category, ()):
                raise EvaluationError(f"criterion {crit.code} mislabeled category {crit.category}")

    def by_code(self, code: str) -> Criterion:
        for crit in self.criteria:
            if crit.code == code:
                return crit
        raise KeyError(code)


def load_rubric(path: str | Path | None = None) -> Rubric:
    """Load the rubric data file; defaults to the copy shipped in the package."""
    if path is None:
        text = resources.files("reelforge").joinpath("data/rubric.toml").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    data = tomllib.loads(text)
    for category, weight in data.get("weights", {}).items():
        if Fraction(weight) != CATEGORY_WEIGHTS.get(category):
            raise EvaluationError(f"rubric file weight for {category} disagrees with the engine")
    criteria = tuple(
        Criterion(
            code=rec["code"],
            name=rec["name"],
            category=rec["category"],
            focus=rec["focus"],
            levels=tuple(rec["levels"]),
        )
        for rec in data["criteria"]
    )
    return Rubric(criteria)


def build_judge_prompt(rubric: Rubric) -> str:
    """Assemble the scoring prompt, quoting every level descriptor verbatim."""
    lines = [
        "Rate the music video on each criterion below with an integer from 1 to 5.",
        "Respond with a JSON object mapping the criterion code to your score.",
        "",
    ]
    for crit in rubric.criteria:
        lines.append(f"{crit.code} ({crit.name}, {crit.category}): {crit.focus}")
        for level, text in enumerate(crit.levels, start=1):
            lines.append(f"  {level}: {text}")
        lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Scorecards and aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreCard:
    """One rater's integer scores for one video."""

    video_id: str
    rater: str
    scores: dict[str, int]

    def __post_init__(self) -> None:
        for code in CRITERION_CODES:
            if code not in self.scores:
                raise EvaluationError(f"scorecard {self.video_id}/{self.rater}: missing {code}")
            value = self.scores[code]
            if not isinstance(value, int) or isinstance(value, bool):
                raise EvaluationError(f"scorecard {self.video_id}/{self.rater}: {code} must be an integer")
            if not 1 <= value <= 5:
                raise EvaluationError(f"scorecard {self.video_id}/{self.rater}: {code}={value} outside [1, 5]")
        unknown = set(self.scores) - set(CRITERION_CODES)
        if unknown:
            raise EvaluationError(f"scorecard {self.video_id}/{self.rater}: unknown criteria {sorted(unknown)}")


@dataclass(frozen=True)
class CategoryScores:
    technical: Fraction
    post_production: Fraction
    content: Fraction
    art: Fraction
    weighted_total: Fraction

    def by_name(self, name: str) -> Fraction:
        return {
            "Technical": self.technical,
            "PostProduction": self.post_production,
            "Content": self.content,
            "Art": self.art,
            "Total": self.weighted_total,
        }[name]


def _as_fraction(value: Any) -> Fraction:
    # Floats are read at their printed decimal value: published tables are
    # decimal numbers, and 2.985 must mean 2985/1000, not its binary float.
    if isinstance(value, bool):
        raise EvaluationError(f"score {value!r} is not a number")
    if isinstance(value, (int, Fraction)):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(str(value))
    if isinstance(value, str):
        return Fraction(value)
    raise EvaluationError(f"score {value!r} is not a number")


def aggregate(scores: ScoreCard | Mapping[str, Any]) -> CategoryScores:
    """Category means and weighted total, in exact rational arithmetic.

    Accepts either a single integer scorecard or a mapping of criterion code
    to a numeric value (so panel means like 3.07 aggregate exactly too).
    """
    mapping = scores.scores if isinstance(scores, ScoreCard) else scores
    for code in CRITERION_CODES:
        if code not in mapping:
            raise EvaluationError(f"missing criterion {code}")
    values = {code: _as_fraction(mapping[code]) for code in CRITERION_CODES}
    means = {
        category: sum(values[c] for c in members) / len(members)
        for category, members in CATEGORY_MEMBERS.items()
    }
    total = sum(CATEGORY_WEIGHTS[cat] * means[cat] for cat in CATEGORY_MEMBERS)
    return CategoryScores(
        technical=means["Technical"],
        post_production=means["PostProduction"],
        content=means["Content"],
        art=means["Art"],
        weighted_total=total,
    )


def criterion_weights() -> dict[str, Fraction]:
    """Effective per-criterion weight in the total (the direct route)."""
    return {
        code: CATEGORY_WEIGHTS[category] / len(members)
        for category, members in CATEGORY_MEMBERS.items()
        for code in members
    }


def direct_total(scores: ScoreCard | Mapping[str, Any]) -> Fraction:
    """Weighted total computed criterion-by-criterion, skipping categories."""
    mapping = scores.scores if isinstance(scores, ScoreCard) else scores
    weights = criterion_weights()
    return sum(weights[code] * _as_fraction(mapping[code]) for code in CRITERION_CODES)


def round_half_up(value: Fraction, places: int = 2) -> Fraction:
    scale = Fraction(10) ** places
    return Fraction(math.floor(value * scale + Fraction(1, 2)), 1) / scale


def present(value: Fraction, places: int = 2) -> str:
    rounded = round_half_up(value, places)
    return f"{float(rounded):.{places}f}"


# ---------------------------------------------------------------------------
# Judge clients
# ---------------------------------------------------------------------------


class EvalJudgeClient(Protocol):
    """Rates one full video against the rubric prompt."""

    name: str

    def rate(self, video_ref: str, audio_ref: str, prompt: str) -> Any:
        """Return a mapping code -> number, or a JSON string parsing to one."""
        ...


class ScriptedEvalJudge:
    """Fixture judge: answers from a table keyed by video reference."""

    def __init__(self, table: Mapping[str, Mapping[str, Any]], name: str = "scripted"):
        self.table = dict(table)
        self.name = name

    def rate(self, video_ref: str, audio_ref: str, prompt: str) -> Any:
        if video_ref not in self.table:
            raise JudgingError(f"no scripted verdict for {video_ref!r}")
        return self.table[video_ref]


class HashEvalJudge:
    """Mock judge scoring by salted hash of the video reference; pure."""

    def __init__(self, salt: str = "", name: str = "hashed"):
        self.salt = salt
        self.name = name

    def rate(self, video_ref: str, audio_ref: str, prompt: str) -> Any:
        digest = hashlib.sha256(f"{self.salt}:{video_ref}".encode("utf-8")).digest()
        return {code: 1 + digest[i] % 5 for i, code in enumerate(CRITERION_CODES)}


def judge_video(
    video_ref: str,
    audio_ref: str,
    rubric: Rubric,
    judge: EvalJudgeClient,
    video_id: str | None = None,
    retries: int = 1,
) -> ScoreCard:
    """Obtain one model scorecard; retry a garbled response once.

    Fractional model outputs are rounded half up; out-of-range results are
    clamped into [1, 5] with a warning rather than rejected.
    """
    prompt = build_judge_prompt(rubric)
    last_error: Exception | None = None
    for _ in range(retries + 1):
        try:
            raw = judge.rate(video_ref, audio_ref, prompt)
            return _parse_card(raw, video_id or video_ref, f"model:{judge.name}")
        except (EvaluationError, json.JSONDecodeError, TypeError) as err:
            last_error = err
    raise JudgingError(f"judge {judge.name} failed on {video_ref}: {last_error}")


def _parse_card(raw: Any, video_id: str, rater: str) -> ScoreCard:
    if isinstance(raw, str):
        raw = json.loads(raw)
    if not isinstance(raw, Mapping):
        raise EvaluationError(f"judge response is not a mapping: {type(raw).__name__}")
    scores: dict[str, int] = {}
    for code in CRITERION_CODES:
        if code not in raw:
            raise EvaluationError(f"judge response missing {code}")
        value = raw[code]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise EvaluationError(f"judge response {code}={value!r} is not numeric")
        rounded = math.floor(value + 0.5)
        if not 1 <= rounded <= 5:
            clamped = min(max(rounded, 1), 5)
            log.warning("judge score %s=%s out of range, clamped to %d", code, value, clamped)
            rounded = clamped
        scores[code] = int(rounded)
    return ScoreCard(video_id=video_id, rater=rater, scores=scores)


# ---------------------------------------------------------------------------
# Correlation
# ---------------------------------------------------------------------------


def pearson(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Sample Pearson r; None marks the undefined zero-variance case."""
    if len(x) != len(y):
        raise EvaluationError(f"length mismatch: {len(x)} vs {len(y)}")
    n = len(x)
    if n < 2:
        raise EvaluationError("pearson needs at least 2 points")
    mean_x = sum(x) / n
    mean_y = sum(y) / n
    dx = [xi - mean_x for xi in x]
    dy = [yi - mean_y for yi in y]
    var_x = sum(d * d for d in dx)
    var_y = sum(d * d for d in dy)
    if var_x == 0.0 or var_y == 0.0:
        return None
    return sum(a * b for a, b in zip(dx, dy)) / math.sqrt(var_x * var_y)


def _metric_value(card: ScoreCard, metric: str) -> float:
    if metric in CRITERION_CODES:
        return float(card.scores[metric])
    return float(aggregate(card).by_name(metric))


@dataclass(frozen=True)
class CorrelationReport:
    metrics: dict[str, float | None]
    video_ids: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "metrics": {name: self.metrics[name] for name in METRIC_NAMES},
            "video_ids": list(self.video_ids),
        }

    def format_table(self) -> str:
        width = max(len(name) for name in METRIC_NAMES)
        lines = [f"{'metric'.ljust(width)}  r", f"{'-' * width}  ------"]
        for name in METRIC_NAMES:
            r = self.metrics[name]
            cell = "undefined" if r is None else f"{r:+.3f}"
            lines.append(f"{name.ljust(width)}  {cell}")
        return "\n".join(lines)


def correlation_report(
    human_cards: Iterable[ScoreCard], model_cards: Iterable[ScoreCard]
) -> CorrelationReport:
    """Per-metric Pearson r between paired human and model cards.

    Cards pair by video_id; at least two common videos are required. When
    several cards share a video_id (rater panels), their metric values are
    averaged before correlating. Zero-variance metrics stay marked
    undefined, never silently zeroed.
    """

    def _collect(cards: Iterable[ScoreCard]) -> dict[str, dict[str, float]]:
        per_video: dict[str, dict[str, list[float]]] = {}
        for card in cards:
            slot = per_video.setdefault(card.video_id, {m: [] for m in METRIC_NAMES})
            for metric in METRIC_NAMES:
                slot[metric].append(_metric_value(card, metric))
        return {
            vid: {m: sum(vals) / len(vals) for m, vals in slots.items()}
            for vid, slots in per_video.items()
        }

    human = _collect(human_cards)
    model = _collect(model_cards)
    common = sorted(set(human) & set(model))
    if len(common) < 2:
        raise EvaluationError(f"need at least 2 paired videos, have {len(common)}")
    metrics = {
        metric: pearson(
            [human[vid][metric] for vid in common],
            [model[vid][metric] for vid in common],
        )
        for metric in METRIC_NAMES
    }
    return CorrelationReport(metrics=metrics, video_ids=tuple(common))


# ---------------------------------------------------------------------------
# External objective metrics (declared interface only)
# ---------------------------------------------------------------------------


class ExternalMetricClient(Protocol):
    """Embedding-similarity style metric served by an external model.

    Returns a percentage in [0, 100]. No implementation ships here; scores
    of this kind require the external model and are covered by fixtures.
    """

    name: str

    def score(self, video_ref: str, audio_ref: str) -> float: ...


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_cards(cards: Iterable[ScoreCard], path: str | Path) -> None:
    lines = [
        json.dumps(
            {"video_id": c.video_id, "rater": c.rater, "scores": {k: c.scores[k] for k in CRITERION_CODES}},
            sort_keys=True,
        )
        for c in cards
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_cards(path: str | Path) -> list[ScoreCard]:
    cards = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        cards.append(ScoreCard(video_id=rec["video_id"], rater=rec["rater"], scores=dict(rec["scores"])))
    return cards


def save_report(report: CorrelationReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
