"""End-to-end pipeline tests: staged runs, crash-resume, ablations,
targeted regeneration and approval, and the event-log projections."""

import json
from collections import Counter
from dataclasses import replace

import pytest

from conftest import FailingImageBackend, run_pipeline
from reelforge.analysis import load_context
from reelforge.assembler import load_manifest
from reelforge.config import PipelineConfig, apply_ablations
from reelforge.generation import build_dependency_graph
from reelforge.pipeline import (
    ConflictError,
    NotFoundError,
    PipelineError,
    Stage,
    _casts_from_script,
)
from reelforge.planner import load_plan, segment_song
from reelforge.script import ScriptResult
from reelforge.synth import load_song_metadata, make_context
from reelforge.verifier import SelectionOutcome, VideoVerdict, outcome_to_dict


def _kinds(pipe):
    return [e.kind for e in pipe.store.events()]


def _chain_head(plan):
    """First subclip that has something chained downstream of it."""
    graph = build_dependency_graph(plan)
    head = next(s for s in graph.order if graph.transitive_downstream(s))
    return head, graph.transitive_downstream(head)


# ---------------------------------------------------------------------------
# Full runs
# ---------------------------------------------------------------------------


def test_full_mock_run_settles_every_subclip(make_pipeline, small_fixture):
    pipe = make_pipeline(small_fixture)
    manifest = run_pipeline(pipe, small_fixture)
    plan = load_plan(pipe.plan_path)

    assert manifest.gaps == []
    assert [e.subclip_id for e in manifest.entries] == [s.subclip_id for s in plan.subclips]

    shots = {s.shot_id: s for s in plan.shots}
    parents = {s.subclip_id: s.parent_shot for s in plan.subclips}
    for entry in manifest.entries:
        expected = "lip_sync" if shots[parents[entry.subclip_id]].lipsync else "general_render"
        assert entry.backend == expected

    state = pipe.state()
    assert set(state.subclips) == {s.subclip_id for s in plan.subclips}
    assert all(v.state == "done" for v in state.subclips.values())

    lines = (pipe.workdir / "concat.txt").read_text(encoding="utf-8").splitlines()
    assert len(lines) == len(manifest.entries) + 1
    assert all(line.startswith("clip ") for line in lines[:-1])
    assert lines[-1].startswith("audio ")

    kinds = _kinds(pipe)
    assert kinds.count("stage_started") == 5
    assert kinds.count("stage_done") == 5
    summary = [e for e in pipe.store.events() if e.kind == "verification_summary"][-1]
    assert summary.payload["selected"] + summary.payload["fallback"] == len(plan.subclips)
    assert summary.payload["failed"] == 0
    written = [e for e in pipe.store.events() if e.kind == "manifest_written"][-1]
    assert written.payload == {"gaps": 0}

    status = pipe.status()
    assert status.stage == "done"
    assert status.song_id == plan.song_id
    assert set(status.subclip_states.values()) == {"done"}


def test_demo_fixture_settles_gap_free(make_pipeline, demo_fixture):
    pipe = make_pipeline(demo_fixture)
    manifest = run_pipeline(pipe, demo_fixture)
    plan = load_plan(pipe.plan_path)

    assert manifest.gaps == []
    assert len(manifest.entries) == len(plan.subclips) > 30
    assert manifest.entries[0].span.start.frames == 0
    assert manifest.entries[-1].span.end.frames == manifest.total.frames
    for prev, cur in zip(manifest.entries, manifest.entries[1:]):
        assert cur.span.start.frames == prev.span.end.frames


def test_rerun_after_success_appends_nothing(make_pipeline, small_fixture):
    pipe = make_pipeline(small_fixture)
    manifest = run_pipeline(pipe, small_fixture)
    before = len(_kinds(pipe))
    again = run_pipeline(pipe, small_fixture)
    assert again == manifest
    assert len(_kinds(pipe)) == before


def test_run_requires_metadata_only_on_first_run(make_pipeline, small_fixture):
    pipe = make_pipeline(small_fixture)
    with pytest.raises(PipelineError, match="metadata"):
        pipe.run()
    assert pipe.run(load_song_metadata(small_fixture), until=Stage.ANALYSIS) is None
    # context.json now carries everything later stages need
    assert pipe.run() is not None


def test_partial_runs_and_status_projection(make_pipeline, small_fixture):
    pipe = make_pipeline(small_fixture)
    status = pipe.status()
    assert status.song_id == "unknown"
    assert status.stage == "analysis"
    assert status.subclip_states == {}

    assert pipe.run(load_song_metadata(small_fixture), until=Stage.ANALYSIS) is None
    assert pipe.context_path.exists()
    assert not pipe.plan_path.exists()
    assert pipe.status().song_id == load_song_metadata(small_fixture).song_id

    assert pipe.run(until=Stage.PLANNING) is None
    assert pipe.plan_path.exists()
    status = pipe.status()
    assert status.stage == "planning"
    assert set(status.subclip_states.values()) == {"pending"}
    assert "clip_batch" not in _kinds(pipe)

    assert pipe.run() is not None
    status = pipe.status()
    assert status.stage == "done"
    analysis_history = [h["status"] for h in status.stage_history if h["stage"] == "analysis"]
    assert analysis_history == ["started", "done"]  # not rerun by the resumes


# ---------------------------------------------------------------------------
# Ablations
# ---------------------------------------------------------------------------


def test_lyrics_ablation_replans_without_vocal_cues(make_pipeline, small_fixture):
    full = make_pipeline(small_fixture)
    run_pipeline(full, small_fixture)
    bare = make_pipeline(small_fixture, config=apply_ablations(PipelineConfig(seed=5), ["lyrics"]))
    manifest = run_pipeline(bare, small_fixture)

    assert manifest.gaps == []
    assert load_context(bare.context_path).lyrics == ()
    # line onsets feed both the boundary grid and the lipsync rules, so the
    # ablated plan is structurally different, not just unflagged
    full_bounds = [s.span.start.frames for s in load_plan(full.plan_path).shots]
    bare_bounds = [s.span.start.frames for s in load_plan(bare.plan_path).shots]
    assert full_bounds != bare_bounds


def _stub_prompts(workdir):
    stubs = sorted((workdir / "artifacts").glob("clip_*.json"))
    return [json.loads(p.read_text(encoding="utf-8"))["prompt"] for p in stubs]


def test_bank_ablation_strips_descriptors(make_pipeline, small_fixture):
    full = make_pipeline(small_fixture)
    run_pipeline(full, small_fixture)
    bare = make_pipeline(small_fixture, config=apply_ablations(PipelineConfig(seed=5), ["bank"]))
    manifest = run_pipeline(bare, small_fixture)

    assert manifest.gaps == []
    assert full.bank_path.exists()
    assert not bare.bank_path.exists()

    full_prompts = _stub_prompts(full.workdir)
    bare_prompts = _stub_prompts(bare.workdir)
    assert any("(gender:" in p for p in full_prompts)
    assert not any("(gender:" in p for p in bare_prompts)
    # raw cast markers never leak into a backend prompt either way
    assert not any("{{" in p for p in full_prompts + bare_prompts)


def test_verifier_ablation_accepts_first_candidate(make_pipeline, small_fixture):
    pipe = make_pipeline(small_fixture, config=apply_ablations(PipelineConfig(seed=5), ["verifier"]))
    manifest = run_pipeline(pipe, small_fixture)

    assert manifest.gaps == []
    for view in pipe.state().subclips.values():
        assert view.clip_outcome["history"] == []
        assert view.clip_outcome["selected"].endswith("-b0-c0")
        assert view.clip_outcome["round"] == 1
        if view.keyframe_outcome is not None:
            assert view.keyframe_outcome["history"] == []


# ---------------------------------------------------------------------------
# Failure isolation and crash-resume
# ---------------------------------------------------------------------------


def test_failed_keyframe_cascades_to_gap_entries(make_pipeline, small_fixture):
    probe = make_pipeline(small_fixture)
    run_pipeline(probe, small_fixture)
    plan = load_plan(probe.plan_path)
    victim, downstream = _chain_head(plan)
    key_artifact = probe.state().subclips[victim].keyframe_candidates[0]["artifact"]
    victim_prompt = json.loads((probe.workdir / key_artifact).read_text(encoding="utf-8"))["prompt"]

    pipe = make_pipeline(small_fixture)
    pipe.components.backends.image = FailingImageBackend(
        pipe.components.backends.image, lambda r: r.prompt == victim_prompt
    )
    manifest = run_pipeline(pipe, small_fixture)

    gaps = {e.subclip_id: e for e in manifest.gaps}
    assert set(gaps) == {victim, *downstream}
    assert gaps[victim].failure == "keyframe backend: injected image failure"
    for sub in downstream:
        assert gaps[sub].failure == f"upstream {victim} failed"
    for entry in gaps.values():
        assert entry.gap and entry.artifact is None

    assert not (pipe.workdir / "concat.txt").exists()
    assert _kinds(pipe).count("subclip_failed") == len(gaps)
    written = [e for e in pipe.store.events() if e.kind == "manifest_written"][-1]
    assert written.payload == {"gaps": len(gaps)}

    status = pipe.status()
    assert status.stage == "done"  # assembly still completes, gaps and all
    failed = {s for s, v in status.subclip_states.items() if v == "failed"}
    assert failed == set(gaps)


def test_crash_mid_generation_resumes_to_identical_manifest(make_pipeline, small_fixture):
    config = PipelineConfig(seed=5, parallelism=1)  # serial => deterministic crash point
    reference = make_pipeline(small_fixture, config=config)
    run_pipeline(reference, small_fixture)
    reference_bytes = (reference.workdir / "manifest.json").read_bytes()

    crash = make_pipeline(small_fixture, config=config)
    real_append = crash.store.append
    seen = Counter()

    def sabotaged(kind, payload):
        if kind == "clip_selected":
            seen[kind] += 1
            if seen[kind] == 2:
                raise RuntimeError("simulated power cut")
        return real_append(kind, payload)

    crash.store.append = sabotaged
    with pytest.raises(RuntimeError, match="power cut"):
        run_pipeline(crash, small_fixture)
    assert _kinds(crash).count("clip_selected") == 1
    assert "stage_failed" in _kinds(crash)

    resumed = make_pipeline(small_fixture, config=config, workdir=crash.workdir)
    manifest = run_pipeline(resumed, small_fixture)
    assert manifest.gaps == []
    assert (resumed.workdir / "manifest.json").read_bytes() == reference_bytes

    kinds = _kinds(resumed)
    assert kinds.count("subclip_restored") == 1  # the one subclip already selected
    started = Counter(
        e.payload["stage"] for e in resumed.store.events() if e.kind == "stage_started"
    )
    assert started == {"analysis": 1, "planning": 1, "generation": 2, "verification": 1, "assembly": 1}


# ---------------------------------------------------------------------------
# Targeted regeneration
# ---------------------------------------------------------------------------


def test_regenerate_reopens_subclip_and_downstream(make_pipeline, small_fixture):
    pipe = make_pipeline(small_fixture)
    run_pipeline(pipe, small_fixture)
    plan = load_plan(pipe.plan_path)
    head, downstream = _chain_head(plan)
    before = pipe.state()
    old_ids = {c["candidate_id"] for c in before.subclips[head].clip_candidates}

    result = pipe.regenerate(head, token="tok-regen")
    assert result == {
        "token": "tok-regen",
        "duplicate": False,
        "subclip_id": head,
        "downstream": downstream,
    }

    state = pipe.state()
    view = state.subclips[head]
    assert view.state == "done"
    assert view.batches == 2
    assert "-b1-" in view.selected_candidate  # fresh batch, no id collision
    new_ids = {c["candidate_id"] for c in view.clip_candidates}
    assert old_ids < new_ids and len(new_ids) == 2 * len(old_ids)
    for sub in downstream:
        assert state.subclips[sub].state == "done"
        assert "-b1-" in state.subclips[sub].selected_candidate
    assert state.tokens["tok-regen"] == {"action": "regenerate", "subclip_id": head}

    invalidated = [e for e in pipe.store.events() if e.kind == "selection_invalidated"]
    assert invalidated[-1].payload["subclip_ids"] == downstream
    # untouched subclips were restored, not re-rendered
    untouched = next(s for s in state.subclips if s != head and s not in downstream)
    assert state.subclips[untouched].batches == 1
    assert _kinds(pipe).count("subclip_restored") == len(plan.subclips) - 1 - len(downstream)

    assert load_manifest(pipe.manifest_path).gaps == []


def test_regenerate_token_is_idempotent(make_pipeline, small_fixture):
    pipe = make_pipeline(small_fixture)
    run_pipeline(pipe, small_fixture)
    sub = load_plan(pipe.plan_path).subclips[0].subclip_id

    pipe.regenerate(sub, token="tok-1")
    events_before = len(_kinds(pipe))
    manifest_before = (pipe.workdir / "manifest.json").read_bytes()

    again = pipe.regenerate(sub, token="tok-1")
    assert again == {"token": "tok-1", "duplicate": True, "action": "regenerate", "subclip_id": sub}
    assert len(_kinds(pipe)) == events_before
    assert (pipe.workdir / "manifest.json").read_bytes() == manifest_before


def test_mutations_require_a_completed_run(make_pipeline, small_fixture):
    pipe = make_pipeline(small_fixture)
    with pytest.raises(PipelineError, match="before mutating"):
        pipe.regenerate("shot_000_clip0")
    with pytest.raises(PipelineError, match="before mutating"):
        pipe.approve("shot_000_clip0", "whatever")

    run_pipeline(pipe, small_fixture)
    with pytest.raises(NotFoundError, match="unknown subclip"):
        pipe.regenerate("no_such_subclip")


# ---------------------------------------------------------------------------
# Human approval
# ---------------------------------------------------------------------------


def test_approve_forces_candidate_and_flags_manifest(make_pipeline, small_fixture):
    pipe = make_pipeline(small_fixture)
    run_pipeline(pipe, small_fixture)
    plan = load_plan(pipe.plan_path)
    graph = build_dependency_graph(plan)
    sub = next(s for s in graph.order if not graph.transitive_downstream(s))

    view = pipe.state().subclips[sub]
    loser = next(
        c for c in view.clip_candidates if c["candidate_id"] != view.selected_candidate
    )

    result = pipe.approve(sub, loser["candidate_id"], token="tok-approve")
    assert result["duplicate"] is False
    assert result["downstream"] == []

    state = pipe.state()
    assert state.subclips[sub].human_override is True
    assert state.subclips[sub].selected_candidate == loser["candidate_id"]
    assert state.tokens["tok-approve"]["action"] == "approve"

    manifest = load_manifest(pipe.manifest_path)
    entry = next(e for e in manifest.entries if e.subclip_id == sub)
    assert entry.human_override is True
    assert entry.artifact == loser["artifact"]
    assert manifest.gaps == []
    assert "selection_invalidated" not in _kinds(pipe)

    again = pipe.approve(sub, loser["candidate_id"], token="tok-approve")
    assert again["duplicate"] is True
    assert again["action"] == "approve"
    assert again["candidate_id"] == loser["candidate_id"]


def test_approve_rechains_downstream_on_new_frame(make_pipeline, small_fixture):
    pipe = make_pipeline(small_fixture)
    run_pipeline(pipe, small_fixture)
    plan = load_plan(pipe.plan_path)
    head, downstream = _chain_head(plan)

    view = pipe.state().subclips[head]
    loser = next(
        c for c in view.clip_candidates if c["candidate_id"] != view.selected_candidate
    )
    result = pipe.approve(head, loser["candidate_id"], token="tok-chain")
    assert result["downstream"] == downstream

    state = pipe.state()
    manifest = load_manifest(pipe.manifest_path)
    head_entry = next(e for e in manifest.entries if e.subclip_id == head)
    assert head_entry.human_override is True
    assert head_entry.artifact == loser["artifact"]

    for sub in downstream:
        assert "-b1-" in state.subclips[sub].selected_candidate
        entry = next(e for e in manifest.entries if e.subclip_id == sub)
        assert entry.human_override is False

    # the re-render chained off the approved candidate's closing frame
    selection = state.selections()[downstream[0]]
    stub = json.loads((pipe.workdir / selection.candidate.artifact).read_text(encoding="utf-8"))
    assert stub["keyframe"] == loser["last_frame"]
    assert manifest.gaps == []


def test_approve_rejects_unknown_targets(make_pipeline, small_fixture):
    pipe = make_pipeline(small_fixture)
    run_pipeline(pipe, small_fixture)
    sub = load_plan(pipe.plan_path).subclips[0].subclip_id
    with pytest.raises(NotFoundError, match="unknown subclip"):
        pipe.approve("no_such_subclip", "x")
    with pytest.raises(NotFoundError, match="has no candidate"):
        pipe.approve(sub, "no_such_candidate")


def test_mutations_conflict_while_subclip_is_running(make_pipeline, small_fixture):
    pipe = make_pipeline(small_fixture)
    run_pipeline(pipe, small_fixture)
    sub = load_plan(pipe.plan_path).subclips[0].subclip_id
    # an open batch with no selection is exactly what a live run looks like
    pipe.store.append("clip_batch", {"subclip_id": sub, "batch": 9, "candidates": []})

    with pytest.raises(ConflictError, match="generating right now"):
        pipe.regenerate(sub, token="fresh-1")
    with pytest.raises(ConflictError, match="generating right now"):
        pipe.approve(sub, "whatever", token="fresh-2")


# ---------------------------------------------------------------------------
# Verification audit
# ---------------------------------------------------------------------------


def test_gate_violation_audit_and_exemptions(make_pipeline, small_fixture):
    pipe = make_pipeline(small_fixture)
    bad = VideoVerdict(
        candidate_id="c-bad", feasibility_pass=False, alignment_score=3, identity_score=3
    )
    outcome = SelectionOutcome(selected="c-bad", round=1, exhausted=True, history=(bad,))
    pipe.store.append("clip_selected", {"subclip_id": "s1", "outcome": outcome_to_dict(outcome)})

    with pytest.raises(PipelineError, match="gate violation"):
        pipe._run_verification(pipe.state())

    # a human override takes responsibility for the failed gate
    pipe.store.append("approved", {"subclip_id": "s1", "candidate_id": "c-bad", "token": "t1"})
    pipe._run_verification(pipe.state())

    # an explicit fallback acceptance is exempt too
    fallback = replace(outcome, fallback_accepted=True)
    pipe.store.append("clip_selected", {"subclip_id": "s2", "outcome": outcome_to_dict(fallback)})
    pipe._run_verification(pipe.state())

    summary = [e for e in pipe.store.events() if e.kind == "verification_summary"][-1]
    assert summary.payload == {"selected": 1, "fallback": 1, "failed": 0}


# ---------------------------------------------------------------------------
# Evaluation plumbing
# ---------------------------------------------------------------------------


def test_evaluate_dedupes_scorecards(make_pipeline, small_fixture):
    pipe = make_pipeline(small_fixture)
    with pytest.raises(PipelineError, match="assemble before"):
        pipe.evaluate()

    run_pipeline(pipe, small_fixture)
    card = pipe.evaluate()
    assert card.video_id == load_song_metadata(small_fixture).song_id
    assert pipe.scores() == [card]

    second = pipe.evaluate()  # same judge, same video: replaces, never duplicates
    assert second == card
    assert pipe.scores() == [card]

    pipe.components.eval_judge = None
    with pytest.raises(PipelineError, match="no evaluation judge"):
        pipe.evaluate()


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def test_casts_from_script_sees_markers_and_bare_names():
    ctx = make_context(11, min_seconds=60, max_seconds=90)
    plan = segment_song(ctx, PipelineConfig().constraints)
    assert len(plan.shots) >= 3
    s0, s1, s2 = (s.shot_id for s in plan.shots[:3])
    script = ScriptResult(
        cast=({"name": "Vera Lunde"}, {"name": "Momo"}),
        shot_descriptions={
            s0: "{{Vera Lunde}} waits at the dock",
            s1: "Momo sprints through rain",
            s2: "empty platform at dawn",
        },
    )
    casts = _casts_from_script(script, plan)
    assert casts[s0] == frozenset({"Vera Lunde"})
    assert casts[s1] == frozenset({"Momo"})
    assert casts[s2] == frozenset()
    for shot in plan.shots[3:]:  # shots the script never described
        assert casts[shot.shot_id] == frozenset()


def test_mock_runs_are_deterministic_across_workdirs(make_pipeline, small_fixture):
    a = make_pipeline(small_fixture)
    b = make_pipeline(small_fixture)
    run_pipeline(a, small_fixture)
    run_pipeline(b, small_fixture)
    for name in ("context.json", "plan.json", "bank.json", "manifest.json"):
        assert (a.workdir / name).read_bytes() == (b.workdir / name).read_bytes(), name
