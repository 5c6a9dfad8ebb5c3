"""Shot segmentation, subclip splitting, continuity, and plan serialization."""

from __future__ import annotations

import itertools
import random

import pytest

from reelforge.planner import (
    ALWAYS_LIPSYNC,
    DEFAULT_LIPSYNC,
    NEVER_LIPSYNC,
    KeyframeSource,
    PlanConfigurationError,
    PlannerConstraints,
    PlannerError,
    Shot,
    ShotPlan,
    apply_continuity,
    assign_lipsync_flags,
    candidate_boundaries,
    load_plan,
    plan_from_dict,
    plan_to_dict,
    save_plan,
    segment_song,
    solve_boundaries,
    split_shot,
    validate_plan,
)
from reelforge.synth import make_context
from reelforge.timegrid import (
    FrameSpan,
    FrameTime,
    LyricLine,
    MusicCaption,
    MusicContext,
    SectionLabel,
    SongMetadata,
    StructureSegment,
)

SOFT = 192


def _span(a: int, b: int) -> FrameSpan:
    return FrameSpan(FrameTime(a), FrameTime(b))


def _ctx(total, sections, lyrics=()):
    """Hand-built context: sections as (label, start, end), lyrics as (text, start, end, conf)."""
    return MusicContext(
        metadata=SongMetadata(
            song_id="hand",
            duration=FrameTime(total),
            sample_rate=48000,
            language_tag="en",
            mix_audio_ref="audio/hand.wav",
        ),
        caption=MusicCaption(genre="test", mood="flat", instrumentation=("synth",)),
        structure=tuple(
            StructureSegment(SectionLabel(label), _span(a, b)) for label, a, b in sections
        ),
        lyrics=tuple(LyricLine(t, _span(a, b), c) for t, a, b, c in lyrics),
    )


# ---------------------------------------------------------------------------
# Reference implementations, kept deliberately naive
# ---------------------------------------------------------------------------


def tiling_cost(boundaries, section_starts):
    """Cost of a concrete tiling, recomputed from scratch."""
    over = sq = 0
    for a, b in zip(boundaries, boundaries[1:]):
        d = b - a
        if d > SOFT:
            over += 1
        sq += (d - SOFT) ** 2
    hits = sum(1 for b in boundaries[1:-1] if b in section_starts)
    return (over, sq, -hits)


def enumerate_tilings(candidates, lo, hi):
    """Every index path from first to last with all gaps inside [lo, hi]."""
    n = len(candidates)
    found = []

    def walk(prefix):
        i = prefix[-1]
        if i == n - 1:
            found.append([candidates[k] for k in prefix])
            return
        for j in range(i + 1, n):
            d = candidates[j] - candidates[i]
            if lo <= d <= hi:
                walk(prefix + [j])

    walk([0])
    return found


def oracle_best(candidates, section_starts, lo=72, hi=360):
    """Forward full-scan DP over every predecessor pair; returns the best cost."""
    n = len(candidates)
    best = {0: (0, 0, 0)}
    for i in range(1, n):
        options = []
        for j in range(i):
            if j not in best:
                continue
            d = candidates[i] - candidates[j]
            if not lo <= d <= hi:
                continue
            over = 1 if d > SOFT else 0
            hit = 1 if (j > 0 and candidates[j] in section_starts) else 0
            options.append((best[j][0] + over, best[j][1] + (d - SOFT) ** 2, best[j][2] - hit))
        if options:
            best[i] = min(options)
    return best.get(n - 1)


def test_oracle_agrees_with_path_enumeration_on_tiny_inputs():
    rng = random.Random(4242)
    checked = feasible = 0
    for _ in range(150):
        n = rng.randint(3, 9)
        points = [0]
        for _ in range(n - 1):
            points.append(points[-1] + rng.randint(20, 400))
        starts = {p for p in points[1:-1] if rng.random() < 0.4}
        paths = enumerate_tilings(points, 72, 360)
        expected = min((tiling_cost(p, starts) for p in paths), default=None)
        assert oracle_best(points, starts) == expected
        checked += 1
        feasible += expected is not None
    assert checked == 150 and feasible > 30


# ---------------------------------------------------------------------------
# Boundary solver
# ---------------------------------------------------------------------------


def test_candidate_boundaries_are_section_starts_and_lyric_edges():
    ctx = _ctx(
        240,
        [("verse", 0, 100), ("chorus", 100, 240)],
        [("line", 30, 60, 0.9), ("next", 60, 100, 0.9)],
    )
    assert candidate_boundaries(ctx) == [0, 30, 60, 100, 240]


def test_two_equal_shots_beat_one_long_shot():
    # 10 s song with a section break in the middle: two 5 s shots cost
    # (0 over, 2*72^2) and beat the single 10 s shot costing (1, 48^2).
    boundaries = solve_boundaries([0, 120, 240], {120}, PlannerConstraints())
    assert boundaries == [0, 120, 240]
    ctx = _ctx(240, [("verse", 0, 120), ("chorus", 120, 240)])
    plan = segment_song(ctx)
    assert [s.span.start.frames for s in plan.shots] == [0, 120]
    assert plan.shots[-1].span.end.frames == 240


def test_soft_target_duration_itself_is_not_over():
    # A single 192-frame shot has zero cost; it must beat two 96-frame shots.
    # If 192 were counted as over-target the split would win instead.
    assert solve_boundaries([0, 96, 192], set(), PlannerConstraints()) == [0, 192]


def test_section_start_bonus_breaks_cost_ties():
    cons = PlannerConstraints()
    # Both tilings cost (1 over, 72 squared); the section start decides.
    assert solve_boundaries([0, 186, 198, 384], {198}, cons) == [0, 198, 384]
    assert solve_boundaries([0, 186, 198, 384], {186}, cons) == [0, 186, 384]


def test_solver_returns_none_when_no_tiling_exists():
    cons = PlannerConstraints()
    assert solve_boundaries([0, 50], set(), cons) is None  # too short
    assert solve_boundaries([0, 400], set(), cons) is None  # too long
    assert solve_boundaries([0, 50, 400], set(), cons) is None  # both at once


def test_solver_is_deterministic():
    rng = random.Random(99)
    points = [0]
    for _ in range(25):
        points.append(points[-1] + rng.randint(40, 250))
    starts = set(points[3:20:4])
    first = solve_boundaries(points, starts, PlannerConstraints())
    assert first is not None
    for _ in range(5):
        assert solve_boundaries(points, starts, PlannerConstraints()) == first


def test_planner_cost_matches_oracle_on_100_short_songs():
    cons = PlannerConstraints()
    collected = solved_raw = 0
    for seed in itertools.count(1000):
        ctx = make_context(seed, min_seconds=30.0, max_seconds=120.0)
        candidates = candidate_boundaries(ctx)
        if len(candidates) > 40:
            continue
        total = ctx.metadata.duration.frames
        starts = {seg.span.start.frames for seg in ctx.structure}
        plan = segment_song(ctx)
        chosen = [s.span.start.frames for s in plan.shots] + [total]

        # Align the oracle with whichever candidate set the planner could use.
        used = candidates
        if solve_boundaries(candidates, starts, cons) is None:
            assert oracle_best(candidates, starts) is None
            used = sorted(set(candidates) | set(chosen))
        expected = oracle_best(used, starts)
        assert expected is not None
        assert tiling_cost(chosen, starts) == expected
        assert all(b in used for b in chosen)

        solved_raw += used is candidates
        collected += 1
        if collected == 100:
            break
    assert solved_raw >= 60


# ---------------------------------------------------------------------------
# segment_song properties
# ---------------------------------------------------------------------------


def test_thousand_song_plans_tile_exactly_and_respect_bounds():
    for seed in range(1000):
        ctx = make_context(seed)
        total = ctx.metadata.duration.frames
        plan = segment_song(ctx)
        assert validate_plan(plan, ctx.metadata.duration) == []

        cursor = 0
        for shot in plan.shots:
            assert shot.span.start.frames == cursor
            assert 72 <= shot.span.duration_frames <= 360
            cursor = shot.span.end.frames
        assert cursor == total

        assert sum(c.span.duration_frames for c in plan.subclips) == total
        for shot in plan.shots:
            subs = plan.subclips_of(shot.shot_id)
            assert 1 <= len(subs) <= 3
            sizes = [c.span.duration_frames for c in subs]
            assert all(72 <= s <= 192 for s in sizes)
            assert sizes == sorted(sizes, reverse=True)
            assert max(sizes) - min(sizes) <= 1
            assert subs[0].span.start == shot.span.start
            assert subs[-1].span.end == shot.span.end
            for a, b in zip(subs, subs[1:]):
                assert a.span.end == b.span.start
            for i, sub in enumerate(subs):
                assert sub.subclip_id == f"{shot.shot_id}_clip{i}"
                if i > 0:
                    assert sub.keyframe_source is KeyframeSource.PREVIOUS_LAST_FRAME


def test_segmentation_is_deterministic():
    a = segment_song(make_context(31))
    b = segment_song(make_context(31))
    assert a == b


def test_majority_label_prefers_earlier_section_on_exact_tie():
    # One 192-frame shot straddling a 96/96 verse/chorus split.
    plan = segment_song(_ctx(192, [("verse", 0, 96), ("chorus", 96, 192)]))
    assert len(plan.shots) == 1
    assert plan.shots[0].section_label is SectionLabel.VERSE


def test_majority_label_follows_larger_overlap():
    plan = segment_song(_ctx(192, [("verse", 0, 90), ("chorus", 90, 192)]))
    assert len(plan.shots) == 1
    assert plan.shots[0].section_label is SectionLabel.CHORUS


def test_shot_lyric_lines_are_the_intersecting_ones():
    ctx = _ctx(
        384,
        [("verse", 0, 384)],
        [("first", 0, 192, 0.9), ("second", 192, 384, 0.9)],
    )
    plan = segment_song(ctx)
    assert [s.span.start.frames for s in plan.shots] == [0, 192]
    assert [l.text for l in plan.shots[0].lyric_lines] == ["first"]
    assert [l.text for l in plan.shots[1].lyric_lines] == ["second"]


def test_same_label_neighbours_start_out_continuous():
    ctx = _ctx(384, [("verse", 0, 384)], [("hey", 0, 192, 0.9)])
    plan = segment_song(ctx)
    assert [s.continuity_from_previous for s in plan.shots] == [False, True]
    chained = plan.subclips_of(plan.shots[1].shot_id)[0]
    assert chained.keyframe_source is KeyframeSource.PREVIOUS_LAST_FRAME


def test_label_change_breaks_continuity():
    ctx = _ctx(384, [("verse", 0, 192), ("chorus", 192, 384)])
    plan = segment_song(ctx)
    assert [s.continuity_from_previous for s in plan.shots] == [False, False]
    first_sub = plan.subclips_of(plan.shots[1].shot_id)[0]
    assert first_sub.keyframe_source is KeyframeSource.GENERATED_IMAGE


# ---------------------------------------------------------------------------
# Fallback ladder
# ---------------------------------------------------------------------------


def test_sparse_candidates_get_balanced_synthetic_boundaries():
    # One 2000-frame instrumental block: no interior candidates at all.
    plan = segment_song(_ctx(2000, [("instrumental", 0, 2000)]))
    sizes = [s.span.duration_frames for s in plan.shots]
    assert sizes == [334, 334, 333, 333, 333, 333]
    assert validate_plan(plan, FrameTime(2000)) == []


def test_unusable_candidates_fall_back_to_global_balanced_split():
    # Candidates 30 and 50 sit closer to zero than min_shot, so every path
    # from the song start is blocked even after gap augmentation.
    ctx = _ctx(2000, [("instrumental", 0, 2000)], [("la", 30, 50, 0.9)])
    plan = segment_song(ctx)
    starts = [s.span.start.frames for s in plan.shots]
    assert starts == [0, 334, 668, 1001, 1334, 1667]
    assert 30 not in starts and 50 not in starts
    assert validate_plan(plan, FrameTime(2000)) == []


def test_short_song_degrades_to_single_undersized_shot():
    plan = segment_song(_ctx(48, [("verse", 0, 48)]))
    assert plan.undersized
    assert len(plan.shots) == 1 and len(plan.subclips) == 1
    assert plan.shots[0].shot_id == "shot_000"
    assert plan.subclips[0].subclip_id == "shot_000_clip0"
    assert plan.subclips[0].span.duration_frames == 48
    assert validate_plan(plan, FrameTime(48)) == []


def test_dead_zone_constraints_raise():
    cons = PlannerConstraints(
        min_shot=100, max_shot=150, min_subclip=72, max_subclip=96, max_subclips_per_shot=2
    )
    ctx = _ctx(160, [("instrumental", 0, 160)])
    with pytest.raises(PlanConfigurationError, match="dead zone"):
        segment_song(ctx, cons)


def test_invalid_constraint_sets_are_rejected_up_front():
    with pytest.raises(PlanConfigurationError):
        PlannerConstraints(min_shot=0)
    with pytest.raises(PlanConfigurationError):
        PlannerConstraints(min_shot=200, max_shot=100)
    with pytest.raises(PlanConfigurationError):
        PlannerConstraints(min_subclip=300, max_subclip=200)
    with pytest.raises(PlanConfigurationError):
        PlannerConstraints(max_subclips_per_shot=0)
    with pytest.raises(PlanConfigurationError, match="unsplittable"):
        PlannerConstraints(max_subclip=100, max_subclips_per_shot=3)


# ---------------------------------------------------------------------------
# split_shot
# ---------------------------------------------------------------------------


def _shot(duration: int, continuity: bool = False) -> Shot:
    return Shot(
        shot_id="shot_007",
        span=_span(0, duration),
        section_label=SectionLabel.VERSE,
        continuity_from_previous=continuity,
    )


def test_max_length_shot_splits_into_two_equal_halves():
    subs = split_shot(_shot(360), PlannerConstraints())
    assert [c.span.duration_frames for c in subs] == [180, 180]
    assert [c.subclip_id for c in subs] == ["shot_007_clip0", "shot_007_clip1"]
    assert subs[0].keyframe_source is KeyframeSource.GENERATED_IMAGE
    assert subs[1].keyframe_source is KeyframeSource.PREVIOUS_LAST_FRAME


def test_exact_fit_stays_single_subclip():
    subs = split_shot(_shot(192), PlannerConstraints())
    assert [c.span.duration_frames for c in subs] == [192]


def test_one_frame_over_splits_with_larger_slice_first():
    subs = split_shot(_shot(193), PlannerConstraints())
    assert [c.span.duration_frames for c in subs] == [97, 96]


def test_continuity_seeds_first_subclip_from_previous_frame():
    subs = split_shot(_shot(300, continuity=True), PlannerConstraints())
    assert subs[0].keyframe_source is KeyframeSource.PREVIOUS_LAST_FRAME


def test_split_rejects_shots_needing_too_many_subclips():
    with pytest.raises(PlannerError, match="needs 4 subclips"):
        split_shot(_shot(577), PlannerConstraints())


def test_split_rejects_slices_below_the_minimum():
    cons = PlannerConstraints(min_subclip=100)
    with pytest.raises(PlannerError, match="no balanced"):
        split_shot(_shot(193), cons)


# ---------------------------------------------------------------------------
# Continuity recomputation
# ---------------------------------------------------------------------------


def _two_shot_plan() -> ShotPlan:
    ctx = _ctx(384, [("verse", 0, 384)], [("hey", 0, 192, 0.9)])
    return segment_song(ctx)


def test_apply_continuity_keeps_link_when_casts_match():
    plan = _two_shot_plan()
    out = apply_continuity(plan, {"shot_000": frozenset({"A"}), "shot_001": frozenset({"A"})})
    assert out.shots[1].continuity_from_previous
    assert out.subclips_of("shot_001")[0].keyframe_source is KeyframeSource.PREVIOUS_LAST_FRAME


def test_apply_continuity_breaks_link_when_casts_differ():
    plan = _two_shot_plan()
    out = apply_continuity(plan, {"shot_000": frozenset({"A"}), "shot_001": frozenset({"B"})})
    assert not out.shots[1].continuity_from_previous
    assert out.subclips_of("shot_001")[0].keyframe_source is KeyframeSource.GENERATED_IMAGE


def test_apply_continuity_treats_missing_casts_as_empty():
    plan = _two_shot_plan()
    out = apply_continuity(plan, {})
    assert out.shots[1].continuity_from_previous  # same label, both casts empty


def test_apply_continuity_never_links_the_first_shot():
    plan = _two_shot_plan()
    out = apply_continuity(plan, {"shot_000": frozenset({"A"})})
    assert not out.shots[0].continuity_from_previous


def test_apply_continuity_leaves_undersized_plans_alone():
    plan = segment_song(_ctx(48, [("verse", 0, 48)]))
    out = apply_continuity(plan, {})
    assert out.subclips == plan.subclips  # 48-frame subclip survives as-is


# ---------------------------------------------------------------------------
# Lip-sync flags
# ---------------------------------------------------------------------------


def _lipsync_fixture(with_lyrics: bool):
    lyrics = [("verse words", 120, 168, 0.9)] if with_lyrics else []
    ctx = _ctx(
        480,
        [("instrumental", 0, 96), ("verse", 96, 288), ("chorus", 288, 480)],
        lyrics,
    )
    shots = tuple(
        Shot(shot_id=f"shot_{i:03d}", span=_span(a, b), section_label=SectionLabel.VERSE)
        for i, (a, b) in enumerate([(0, 96), (96, 288), (288, 480)])
    )
    plan = ShotPlan("hand", shots, (), PlannerConstraints())
    return plan, ctx


def test_default_lipsync_triggers_on_chorus_onset_and_first_vocal_onset():
    plan, ctx = _lipsync_fixture(with_lyrics=True)
    out = assign_lipsync_flags(plan, ctx, DEFAULT_LIPSYNC)
    assert [s.lipsync for s in out.shots] == [False, True, True]


def test_default_lipsync_needs_lyrics_outside_the_chorus():
    plan, ctx = _lipsync_fixture(with_lyrics=False)
    out = assign_lipsync_flags(plan, ctx, DEFAULT_LIPSYNC)
    assert [s.lipsync for s in out.shots] == [False, False, True]


def test_never_and_always_policies():
    plan, ctx = _lipsync_fixture(with_lyrics=True)
    assert all(not s.lipsync for s in assign_lipsync_flags(plan, ctx, NEVER_LIPSYNC).shots)
    assert all(s.lipsync for s in assign_lipsync_flags(plan, ctx, ALWAYS_LIPSYNC).shots)


# ---------------------------------------------------------------------------
# Validation and serialization
# ---------------------------------------------------------------------------


def _rules(violations):
    return {(v.field, v.rule) for v in violations}


def test_validate_plan_flags_gaps_and_bad_totals():
    cons = PlannerConstraints()
    shots = (
        Shot("shot_000", _span(0, 100), SectionLabel.VERSE),
        Shot("shot_001", _span(110, 200), SectionLabel.VERSE),
    )
    subclips = tuple(
        s for shot in shots for s in split_shot(shot, cons)
    )
    plan = ShotPlan("hand", shots, subclips, cons)
    rules = _rules(validate_plan(plan, FrameTime(260)))
    assert ("shots", "tiling") in rules  # gap at 100 and short total


def test_validate_plan_flags_duration_bounds():
    cons = PlannerConstraints()
    shots = (Shot("shot_000", _span(0, 500), SectionLabel.VERSE),)
    plan = ShotPlan("hand", shots, (), cons)
    rules = _rules(validate_plan(plan, FrameTime(500)))
    assert ("shots", "duration_bounds") in rules
    assert ("subclips", "closure") in rules  # no subclips at all


def test_validate_plan_flags_subclip_mismatch_and_orphans():
    cons = PlannerConstraints()
    shot = Shot("shot_000", _span(0, 200), SectionLabel.VERSE)
    good = split_shot(shot, cons)
    # Point one subclip at the wrong shot and shift the other.
    from dataclasses import replace

    crooked = (
        replace(good[0], span=_span(10, 110)),
        replace(good[1], parent_shot="shot_999"),
    )
    plan = ShotPlan("hand", (shot,), crooked, cons)
    rules = _rules(validate_plan(plan, FrameTime(200)))
    assert ("subclips", "closure") in rules
    assert ("subclips", "orphan") in rules


def test_validate_plan_flags_too_many_subclips():
    from reelforge.planner import SubClip

    cons = PlannerConstraints()
    shot = Shot("shot_000", _span(0, 320), SectionLabel.VERSE)
    subs = tuple(
        SubClip(f"shot_000_clip{i}", "shot_000", _span(i * 80, (i + 1) * 80), KeyframeSource.PREVIOUS_LAST_FRAME)
        for i in range(4)
    )
    plan = ShotPlan("hand", (shot,), subs, cons)
    rules = _rules(validate_plan(plan, FrameTime(320)))
    assert ("subclips", "count") in rules


def test_plan_round_trips_through_dict_and_disk(tmp_path):
    from dataclasses import replace

    plan = segment_song(make_context(7))
    plan = assign_lipsync_flags(plan, make_context(7), DEFAULT_LIPSYNC)
    shots = list(plan.shots)
    shots[0] = replace(shots[0], description_slot="an empty rehearsal room")
    plan = ShotPlan(plan.song_id, tuple(shots), plan.subclips, plan.constraints, plan.flags)

    assert plan_from_dict(plan_to_dict(plan)) == plan

    path = tmp_path / "plan.json"
    save_plan(plan, path)
    first = path.read_text(encoding="utf-8")
    assert load_plan(path) == plan
    save_plan(plan, path)
    assert path.read_text(encoding="utf-8") == first


def test_plan_from_dict_rejects_unknown_schema():
    with pytest.raises(PlannerError, match="plan_schema"):
        plan_from_dict({"plan_schema": 2})
