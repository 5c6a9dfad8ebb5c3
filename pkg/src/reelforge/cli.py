"""Command line front end: stage verbs, batch evaluation, and the API server.

Everything runs in mock mode against fixture songs; real model endpoints
would be configured through the config file's endpoints table, which no
bundled client consumes yet.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import click

from .config import ABLATION_NAMES, PipelineConfig, apply_ablations, load_config
from .evaluation import (
    HashEvalJudge,
    ScriptedEvalJudge,
    aggregate,
    correlation_report,
    judge_video,
    load_cards,
    load_rubric,
    present,
    save_cards,
    save_report,
)
from .pipeline import Pipeline, Stage, mock_components
from .synth import load_song_metadata


def _build_config(config_path: str | None, seed: int | None, ablations: tuple[str, ...]) -> PipelineConfig:
    config = load_config(config_path) if config_path else PipelineConfig()
    if seed is not None:
        config = replace(config, seed=seed)
    return apply_ablations(config, list(ablations))


def _build_pipeline(workdir: str, fixture: str, config: PipelineConfig) -> Pipeline:
    components = mock_components(workdir, config, fixture)
    return Pipeline(workdir, config, components)


def _stage_options(f):
    opts = [
        click.option("--workdir", default="work", show_default=True, help="Run directory (event log, artifacts)."),
        click.option("--fixture", required=True, type=click.Path(exists=True, file_okay=False), help="Fixture song directory."),
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None, help="JSON config file."),
        click.option("--seed", type=int, default=None, help="Override the config seed."),
        click.option("--ablate", "ablations", multiple=True, type=click.Choice(ABLATION_NAMES), help="Disable a component."),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def _run_until(workdir: str, fixture: str, config_path: str | None, seed: int | None,
               ablations: tuple[str, ...], until: Stage | None):
    config = _build_config(config_path, seed, ablations)
    pipe = _build_pipeline(workdir, fixture, config)
    metadata = load_song_metadata(fixture)
    manifest = pipe.run(metadata, until=until)
    return pipe, manifest


@click.group()
def main() -> None:
    """Frame-accurate music-to-video pipeline."""


@main.command()
@_stage_options
def analyze(workdir, fixture, config_path, seed, ablations) -> None:
    """Fetch and normalize song analysis into a music context."""
    pipe, _ = _run_until(workdir, fixture, config_path, seed, ablations, Stage.ANALYSIS)
    from .analysis import load_context

    ctx = load_context(pipe.context_path)
    click.echo(f"context written: {pipe.context_path}")
    click.echo(
        f"{ctx.metadata.song_id}: {ctx.metadata.duration.frames} frames, "
        f"{len(ctx.structure)} sections, {len(ctx.lyrics)} lyric lines"
    )


@main.command()
@_stage_options
def plan(workdir, fixture, config_path, seed, ablations) -> None:
    """Segment the song into shots and subclips."""
    pipe, _ = _run_until(workdir, fixture, config_path, seed, ablations, Stage.PLANNING)
    from .planner import load_plan

    shot_plan = load_plan(pipe.plan_path)
    click.echo(f"plan written: {pipe.plan_path}")
    for shot in shot_plan.shots:
        marks = "".join(
            flag
            for flag, on in (
                ("L", shot.lipsync),
                ("C", shot.continuity_from_previous),
            )
            if on
        )
        click.echo(
            f"  {shot.shot_id}  [{shot.span.start.frames:>6},{shot.span.end.frames:>6})  "
            f"{shot.section_label.value:<12} {marks}"
        )
    click.echo(f"{len(shot_plan.shots)} shots, {len(shot_plan.subclips)} subclips")


@main.command()
@_stage_options
def generate(workdir, fixture, config_path, seed, ablations) -> None:
    """Render and select clip candidates for every subclip."""
    pipe, _ = _run_until(workdir, fixture, config_path, seed, ablations, Stage.GENERATION)
    state = pipe.state()
    done = sum(1 for v in state.subclips.values() if v.state == "done")
    failed = sum(1 for v in state.subclips.values() if v.state == "failed")
    click.echo(f"generation finished: {done} selected, {failed} failed")


@main.command()
@_stage_options
def verify(workdir, fixture, config_path, seed, ablations) -> None:
    """Audit stored selections against the gate rules."""
    _run_until(workdir, fixture, config_path, seed, ablations, Stage.VERIFICATION)
    click.echo("verification pass complete")


@main.command()
@_stage_options
def assemble(workdir, fixture, config_path, seed, ablations) -> None:
    """Bind selections into the frame-exact manifest."""
    pipe, manifest = _run_until(workdir, fixture, config_path, seed, ablations, Stage.ASSEMBLY)
    assert manifest is not None
    click.echo(f"manifest written: {pipe.manifest_path}")
    click.echo(f"{len(manifest.entries)} entries, {len(manifest.gaps)} gaps")


@main.command()
@_stage_options
def run(workdir, fixture, config_path, seed, ablations) -> None:
    """Run every stage end to end."""
    pipe, manifest = _run_until(workdir, fixture, config_path, seed, ablations, None)
    assert manifest is not None
    status = pipe.status()
    click.echo(f"stage: {status.stage}")
    for warning in status.warnings:
        click.echo(f"warning: {warning}")
    click.echo(f"manifest written: {pipe.manifest_path}")
    click.echo(f"{len(manifest.entries)} entries, {len(manifest.gaps)} gaps")


def _judge_from_spec(spec: str):
    if spec == "hashed" or spec.startswith("hashed:"):
        _, _, salt = spec.partition(":")
        return HashEvalJudge(salt=salt)
    if spec.startswith("scripted:"):
        table_path = spec.split(":", 1)[1]
        table = json.loads(Path(table_path).read_text(encoding="utf-8"))
        return ScriptedEvalJudge(table)
    raise click.ClickException(
        f"unknown judge {spec!r}; use hashed[:salt] or scripted:<table.json>"
    )


@main.command()
@click.option("--videos", "videos_dir", required=True, type=click.Path(exists=True, file_okay=False), help="Directory of video artifacts to score.")
@click.option("--judge", "judge_spec", default="hashed", show_default=True, help="hashed[:salt] or scripted:<table.json>.")
@click.option("--out", "out_dir", default=".", show_default=True, help="Where scorecards.ndjson lands.")
def evaluate(videos_dir, judge_spec, out_dir) -> None:
    """Score every video in a directory against the 12-criterion rubric."""
    rubric = load_rubric()
    judge = _judge_from_spec(judge_spec)
    paths = sorted(p for p in Path(videos_dir).iterdir() if p.is_file() and not p.name.startswith("."))
    if not paths:
        raise click.ClickException(f"no video artifacts in {videos_dir}")
    cards = [
        judge_video(str(path), audio_ref="", rubric=rubric, judge=judge, video_id=path.stem)
        for path in paths
    ]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_cards(cards, out / "scorecards.ndjson")
    click.echo(f"scorecards written: {out / 'scorecards.ndjson'}")
    for card in cards:
        cats = aggregate(card)
        click.echo(
            f"  {card.video_id}: T {present(cats.technical)}  P {present(cats.post_production)}  "
            f"C {present(cats.content)}  A {present(cats.art)}  total {present(cats.weighted_total)}"
        )


@main.command()
@click.option("--human", "human_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Human scorecards (ndjson).")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Model scorecards (ndjson).")
@click.option("--out", "out_dir", default=".", show_default=True, help="Where correlations.json lands.")
def correlate(human_path, model_path, out_dir) -> None:
    """Pearson correlation between human and model scores, all 17 metrics."""
    report = correlation_report(load_cards(human_path), load_cards(model_path))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_report(report, out / "correlations.json")
    click.echo(report.format_table())
    click.echo(f"report written: {out / 'correlations.json'}")


@main.command()
@_stage_options
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(workdir, fixture, config_path, seed, ablations, host, port) -> None:
    """Serve the /v1 job-control API for the review frontend."""
    import uvicorn

    from .api import create_app

    config = _build_config(config_path, seed, ablations)
    pipe = _build_pipeline(workdir, fixture, config)
    metadata = load_song_metadata(fixture)
    app = create_app(pipe, metadata)
    click.echo(f"serving /v1 on http://{host}:{port} (poll interval 1s)")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
